"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--no-step]

Kernel timings call both backends in-process. The training-step timing runs
one forward/backward/update of the shallow model in a subprocess per backend
(the backend is fixed at import).
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from quatnet._kernels import backends

STEP_SCRIPT = """
import json, time, numpy as np
from quatnet import _kernels
from quatnet.config import ExperimentConfig
from quatnet.models import build_model
from quatnet.optim import SGD
from quatnet import autograd as ag
model = build_model(ExperimentConfig.from_preset("shallow"))
opt = SGD(model.parameters(), lr=0.01)
rng = np.random.default_rng(0)
x = rng.standard_normal((32, 3, 32, 32)).astype(np.float32)
y = rng.integers(0, 10, 32)
def step():
    loss = ag.softmax_cross_entropy(model(x), y)
    opt.zero_grad(); loss.backward(); opt.step()
step()
times = []
for _ in range({repeat}):
    t = time.perf_counter(); step(); times.append(time.perf_counter() - t)
print(json.dumps({{"backend": _kernels.BACKEND, "best": min(times)}}))
"""


def kernel_cases(rng):
    x = rng.standard_normal((32, 32, 32, 32)).astype(np.float32)  # NHWC
    cols_shape = (32, 32, 32, 3, 3, 32)
    cols = rng.standard_normal(cols_shape).astype(np.float32)
    a = rng.standard_normal((32, 4, 8, 1024)).astype(np.float32)
    m = rng.standard_normal((8, 4, 4)).astype(np.float32)
    bias = rng.standard_normal((8, 4)).astype(np.float32)
    spd = rng.standard_normal((256, 4, 4))
    spd = spd @ spd.transpose(0, 2, 1) + 0.1 * np.eye(4)
    low = np.tril(rng.standard_normal((256, 4, 4))) + 4 * np.eye(4)
    return {
        "im2col 32x32x32 k3": lambda k: k.im2col(x, 3, 3, 1, 1),
        "col2im 32x32x32 k3": lambda k: k.col2im(cols, x.shape, 3, 3, 1, 1),
        "group_outer 8 groups": lambda k: k.group_outer(a, a),
        "group_mix 8 groups": lambda k: k.group_mix(m, a, bias),
        "chol4 x256": lambda k: k.chol4(spd),
        "tri_inv4 x256": lambda k: k.tri_inv4(low),
    }


def bench_kernels(repeat):
    found = backends()
    rng = np.random.default_rng(0)
    rows = []
    for name, fn in kernel_cases(rng).items():
        t = {b: min(timeit.repeat(lambda: fn(mod), number=1, repeat=repeat)) for b, mod in found.items()}
        rows.append((name, t))
    return list(found), rows


def bench_step(repeat):
    out = {}
    for pure in ("1", "0"):
        env = dict(os.environ, QUATNET_PURE_PYTHON=pure)
        res = subprocess.run([sys.executable, "-c", STEP_SCRIPT.format(repeat=repeat)],
                             env=env, capture_output=True, text=True, check=True)
        r = json.loads(res.stdout.strip().splitlines()[-1])
        out[r["backend"]] = r["best"]
    return out


def fmt(seconds):
    return f"{seconds * 1e3:10.3f} ms"


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--no-step", action="store_true", help="skip the training-step timing")
    args = p.parse_args(argv)

    names, rows = bench_kernels(args.repeat)
    print(f"{'kernel':24s}" + "".join(f"{n:>14s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for name, t in rows:
        line = f"{name:24s}" + "".join(fmt(t[n]) + " " for n in names)
        if "cython" in t:
            line += f"  {t['python'] / t['cython']:8.2f}x"
        print(line)
    if not args.no_step:
        step = bench_step(args.repeat)
        print()
        print("shallow model, batch 32, one SGD step:")
        for b, s in step.items():
            print(f"  {b:8s} {fmt(s)}")
        if len(step) == 2:
            print(f"  speedup  {step['python'] / step['cython']:.2f}x")


if __name__ == "__main__":
    main()
