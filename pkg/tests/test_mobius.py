import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from afmod import mobius as M
from afmod.errors import InvalidGroupElement, ModelMismatch


def test_act_h2_examples():
    assert M.act_h2(np.eye(2), M.H2Point(1j)).z == 1j
    assert M.act_h2([[1, 1], [0, 1]], M.H2Point(1j)).z == pytest.approx(1 + 1j, abs=1e-15)
    assert M.act_h2([[0, -1], [1, 0]], M.H2Point(2j)).z == pytest.approx(0.5j, abs=1e-15)


def test_act_h2_rejects_bad_matrices():
    with pytest.raises(InvalidGroupElement):
        M.act_h2([[2, 0], [0, 1]], M.H2Point(1j))
    with pytest.raises(InvalidGroupElement):
        M.act_h2([[1, 1j], [0, 1]], M.H2Point(1j))
    su = M.to_disc_matrix([[1, 1], [0, 1]])
    with pytest.raises(ModelMismatch):
        M.act_h2(su, M.H2Point(1j))
    with pytest.raises(ModelMismatch):
        M.act_h2([[2, 0], [0, 0.5]], M.H2Point(0.1, M.DISC))


def test_act_h3_examples():
    p = M.act_h3(np.eye(2), M.H3Point(0, 1))
    assert (p.z, p.y) == (0, 1)
    k = 4.0
    p = M.act_h3(np.diag([np.sqrt(k), 1 / np.sqrt(k)]), M.H3Point(1, 1))
    assert p.z == pytest.approx(4) and p.y == pytest.approx(4)
    p = M.act_h3([[0, -1], [1, 0]], M.H3Point(0, 1))
    assert p.z == pytest.approx(0) and p.y == pytest.approx(1)


def test_dist_examples():
    assert M.dist_h2(M.H2Point(1j), M.H2Point(1j)) == 0
    assert M.dist_h2(M.H2Point(1j), M.H2Point(2j)) == pytest.approx(np.log(2), abs=1e-15)
    with pytest.raises(ModelMismatch):
        M.dist_h2(M.H2Point(1j), M.H2Point(0.0, M.DISC))


def test_cayley_normalization():
    assert abs(M.cayley(M.H2Point(1j)).z) < 1e-15
    assert M.cayley(M.H2Point(0, M.DISC)).z == pytest.approx(1j, abs=1e-15)
    assert abs(np.linalg.det(M.CAYLEY) - 1) < 1e-14


def test_cayley_round_trip_and_isometry():
    rng = np.random.default_rng(0)
    zs = rng.uniform(-3, 3, 1000) + 1j * np.exp(rng.uniform(-2, 2, 1000))
    worst = max(abs(M.cayley(M.cayley(M.H2Point(z))).z - z) / max(1, abs(z)) for z in zs)
    assert worst < 1e-14
    for z1, z2 in zip(zs[:50], zs[50:100]):
        d1 = M.dist_h2(M.H2Point(z1), M.H2Point(z2))
        d2 = M.dist_h2(M.cayley(M.H2Point(z1)), M.cayley(M.H2Point(z2)))
        assert abs(d1 - d2) < 1e-9 * max(1, d1)


def test_dist_invariance_sweep():
    rng = np.random.default_rng(1)
    for _ in range(100):
        A = M.random_sl2r(rng, 0.5)
        z1, z2 = (M.H2Point(rng.normal() + 1j * np.exp(rng.normal(scale=0.5))) for _ in range(2))
        d = M.dist_h2(z1, z2)
        assert abs(M.dist_h2(M.act_h2(A, z1), M.act_h2(A, z2)) - d) < 1e-12 * max(1, d) * 10


def test_disc_matrices_are_su11():
    rng = np.random.default_rng(2)
    for _ in range(20):
        A = M.random_sl2r(rng)
        B = M.to_disc_matrix(A)
        assert M.is_su11(B)
        z = 0.3 + 1.1j
        lhs = M.cayley(M.act_h2(A, M.H2Point(z))).z
        rhs = M.act_h2(B, M.cayley(M.H2Point(z))).z
        assert abs(lhs - rhs) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_h2_action_is_homomorphism(seed):
    rng = np.random.default_rng(seed)
    A, B = M.random_sl2r(rng, 0.7), M.random_sl2r(rng, 0.7)
    p = M.H2Point(rng.normal() + 1j * np.exp(rng.normal(scale=0.3)))
    lhs = M.act_h2(A @ B, p).z
    rhs = M.act_h2(A, M.act_h2(B, p)).z
    assert abs(lhs - rhs) <= 1e-12 * max(1, abs(lhs)) * 10


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_h3_action_is_homomorphism_and_isometry(seed):
    rng = np.random.default_rng(seed)
    A, B = M.random_sl2c(rng, 0.5), M.random_sl2c(rng, 0.5)
    p = M.H3Point(complex(*rng.normal(size=2)), np.exp(rng.normal(scale=0.3)))
    q = M.H3Point(complex(*rng.normal(size=2)), np.exp(rng.normal(scale=0.3)))
    lhs, rhs = M.act_h3(A @ B, p), M.act_h3(A, M.act_h3(B, p))
    scale = max(1, abs(lhs.z), lhs.y)
    assert abs(lhs.z - rhs.z) < 1e-11 * scale and abs(lhs.y - rhs.y) < 1e-11 * scale
    d = M.dist_h3(p, q)
    assert abs(M.dist_h3(M.act_h3(A, p), M.act_h3(A, q)) - d) < 1e-8 * max(1, d)


def test_h3_action_pulls_back_metric():
    # Jacobian of the action is a similarity scaled by y'/y: pullback of the
    # hyperbolic metric equals the metric.
    rng = np.random.default_rng(3)
    A = M.random_sl2c(rng, 0.6)
    p = np.array([0.3, -0.2, 1.3])

    def F(c):
        q = M.act_h3(A, M.H3Point(c[0] + 1j * c[1], c[2]))
        return np.array([q.z.real, q.z.imag, q.y])

    errs = []
    for h in (1e-3, 5e-4):
        Jm = np.stack([(F(p + h * e) - F(p - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
        pull = Jm.T @ Jm / F(p)[2] ** 2
        errs.append(np.abs(pull - np.eye(3) / p[2] ** 2).max())
    assert errs[1] < 1e-6
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_exponential_matches_vector_field():
    xi = np.array([[0.3, -0.7], [0.4, -0.3]])
    z = 0.2 + 1.3j
    errs = []
    for t in (1e-3, 5e-4):
        zt = M.mobius(M.exp_sl2(xi, t), z)
        errs.append(abs(zt - z - t * M.infinitesimal_h2(xi, z)))
    assert 3.5 < errs[0] / errs[1] < 4.5
