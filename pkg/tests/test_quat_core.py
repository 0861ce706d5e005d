import numpy as np
import pytest
from hypothesis import given

from quatnet.quat_core import BASIS, ONE, I, J, K, Quaternion, conjugate, embed, norm, qmul, scale

from strategies import quaternions, unit_scale_quaternions


def hamilton_by_table(p, q):
    """Independent oracle: expand the product over basis units using i^2 = j^2 = k^2 = ijk = -1."""
    # unit products as (sign, index) with index 0..3 = 1, i, j, k
    table = {
        (0, 0): (1, 0), (0, 1): (1, 1), (0, 2): (1, 2), (0, 3): (1, 3),
        (1, 0): (1, 1), (1, 1): (-1, 0), (1, 2): (1, 3), (1, 3): (-1, 2),
        (2, 0): (1, 2), (2, 1): (-1, 3), (2, 2): (-1, 0), (2, 3): (1, 1),
        (3, 0): (1, 3), (3, 1): (1, 2), (3, 2): (-1, 1), (3, 3): (-1, 0),
    }
    out = [0.0] * 4
    for a, x in enumerate(p):
        for b, y in enumerate(q):
            s, idx = table[(a, b)]
            out[idx] += s * x * y
    return Quaternion(*out)


def close(p, q, tol=1e-12):
    return np.max(np.abs(p.as_array() - q.as_array())) < tol


def test_i_times_j_is_k():
    assert qmul(I, J) == K


def test_j_times_i_is_minus_k():
    assert qmul(J, I) == Quaternion(0.0, 0.0, 0.0, -1.0)


def test_unit_squares_and_triple_product():
    minus_one = Quaternion(-1.0, 0.0, 0.0, 0.0)
    assert qmul(I, I) == minus_one
    assert qmul(J, J) == minus_one
    assert qmul(K, K) == minus_one
    assert qmul(qmul(I, J), K) == minus_one


def test_cyclic_rules():
    assert qmul(J, K) == I
    assert qmul(K, I) == J


@given(quaternions)
def test_left_identity(q):
    assert qmul(ONE, q) == q
    assert qmul(q, ONE) == q


@given(quaternions, quaternions)
def test_qmul_matches_unit_table(p, q):
    assert close(qmul(p, q), hamilton_by_table(p, q), 1e-10)


@given(quaternions, quaternions)
def test_qmul_is_embed_matvec(p, q):
    np.testing.assert_allclose(embed(p) @ q.as_array(), qmul(p, q).as_array(), atol=1e-10, rtol=0)


def test_embed_identity():
    np.testing.assert_array_equal(embed(ONE), np.eye(4))


def test_embed_i_basis_signs():
    m = embed(I)
    assert m[1, 0] == 1 and m[0, 1] == -1
    np.testing.assert_array_equal(m, BASIS[1])


def test_embed_first_column_is_components():
    q = Quaternion(1.5, -2.0, 0.25, 3.0)
    np.testing.assert_array_equal(embed(q)[:, 0], q.as_array())


def test_embed_sign_pattern():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    expected = np.array([[a, -b, -c, -d], [b, a, -d, c], [c, d, a, -b], [d, -c, b, a]])
    np.testing.assert_array_equal(embed(Quaternion(a, b, c, d)), expected)


@given(unit_scale_quaternions, unit_scale_quaternions)
def test_embed_homomorphism(p, q):
    np.testing.assert_allclose(embed(qmul(p, q)), embed(p) @ embed(q), atol=1e-12, rtol=0)


@given(unit_scale_quaternions, unit_scale_quaternions, unit_scale_quaternions)
def test_associativity(p, q, r):
    assert close(qmul(qmul(p, q), r), qmul(p, qmul(q, r)))


@given(quaternions, quaternions, quaternions)
def test_distributive(p, q, r):
    assert close(qmul(p, q + r), qmul(p, q) + qmul(p, r), 1e-9)


def test_not_commutative():
    assert qmul(I, J) == -qmul(J, I)


def test_conjugate_example():
    assert conjugate(Quaternion(1, 2, 3, 4)) == Quaternion(1, -2, -3, -4)


def test_norm_zero():
    assert norm(Quaternion()) == 0.0


@given(quaternions)
def test_q_times_conjugate_is_norm_squared(q):
    n2 = norm(q) ** 2
    for prod in (qmul(q, conjugate(q)), qmul(conjugate(q), q)):
        np.testing.assert_allclose(prod.as_array(), [n2, 0, 0, 0], atol=1e-9 * max(1.0, n2))


@given(quaternions)
def test_norm_nonnegative_and_zero_iff_zero(q):
    assert norm(q) >= 0
    assert (norm(q) == 0) == (q == Quaternion())


@given(quaternions, quaternions)
def test_norm_multiplicative(p, q):
    assert norm(qmul(p, q)) == pytest.approx(norm(p) * norm(q), rel=1e-12, abs=1e-12)


@given(quaternions)
def test_scale_and_operators(q):
    assert scale(q, 2.0) == q * 2.0 == 2.0 * q
    assert close(q - q, Quaternion())
    assert Quaternion.from_array(q.as_array()) == q
    assert tuple(q) == (q.a, q.b, q.c, q.d)
