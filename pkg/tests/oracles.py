"""Reference implementations used only by the tests; deliberately naive."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_naive(x, w, stride=1, pad=0):
    """Real cross-correlation via explicit windows, NCHW / OIHW."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    kh, kw = w.shape[2:]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("nchwij,ocij->nohw", win, w)


def block_kernel(a, b, c, d):
    """Real block kernel of W = A + iB + jC + kD, built row by row from the left-multiplication pattern."""
    rows = [[a, -b, -c, -d], [b, a, -d, c], [c, d, a, -b], [d, -c, b, a]]
    return np.concatenate([np.concatenate(r, axis=1) for r in rows], axis=0)


def quaternion_conv_by_lanes(x, a, b, c, d, stride=1, pad=0):
    """Sixteen real convolutions combined per the lane product rule."""
    m = x.shape[1] // 4
    w_, x_, y_, z_ = (x[:, q * m : (q + 1) * m] for q in range(4))
    cv = lambda k, v: conv_naive(v, k, stride, pad)
    r = cv(a, w_) - cv(b, x_) - cv(c, y_) - cv(d, z_)
    i = cv(a, x_) + cv(b, w_) + cv(c, z_) - cv(d, y_)
    j = cv(a, y_) - cv(b, z_) + cv(c, w_) + cv(d, x_)
    k = cv(a, z_) + cv(b, y_) - cv(c, x_) + cv(d, w_)
    return np.concatenate([r, i, j, k], axis=1)


def max_rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))
