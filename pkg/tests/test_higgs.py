from functools import lru_cache

import numpy as np
import pytest

from afmod import af3d
from afmod import germ as Gm
from afmod import higgs as Hg
from afmod.af3d import AFGerm
from afmod.errors import GaussResidualTooLarge, HolonomyInconsistent, PathLiftError
from afmod.surface import COSH_HALF_LENGTH, dz_log_lambda0, lambda0

from conftest import bolza, mesh, sigma, solved

TRACE = 2 * COSH_HALF_LENGTH  # 2(1 + sqrt 2)


def _scaled(c, f=None):
    """Germ c * lambda0 with optional f; Gauss residual 1 - 1/c^2 + |f|^2/lambda^4."""
    return AFGerm(lambda z: c * lambda0(z), f or af3d._zero, dz_log_lambda0)


@lru_cache(maxsize=None)
def fuchsian():
    return Hg.build_higgs(AFGerm.fuchsian(), bolza())


@lru_cache(maxsize=None)
def fuchsian_rep():
    return Hg.generator_holonomies(fuchsian(), bolza())


@lru_cache(maxsize=None)
def solved_higgs(level):
    return Hg.build_higgs(solved(level)[0], bolza())


PTS = np.array([0.1, 0.3 + 0.2j, -0.45j, -0.2 - 0.5j])


# ---------------------------------------------------------------- Higgs data

def test_phi_is_constant_nilpotent():
    s = fuchsian().sample(PTS)
    assert np.array_equal(s["phi"], np.repeat([[[0, 0.5], [0, 0]]], len(PTS), 0))


def test_fuchsian_connection_is_diagonal():
    s = fuchsian().sample(PTS)
    for key in ("A_x", "A_y"):
        assert not s[key][:, 0, 1].any() and not s[key][:, 1, 0].any()
    assert np.allclose(s["a"], np.conj(PTS) / (1 - np.abs(PTS) ** 2))


def test_connection_is_metric_and_traceless():
    H = solved_higgs(3)
    for z in PTS:
        assert H.metric_compatibility_residual(z) < 1e-8
        Hm = H.bundle_metric(z)
        for v in (1.0, 1j, 0.3 - 0.7j):
            A, B = H.A(z, v), H.B(z, v)
            off = A - np.diag(np.diag(A))
            # the off-diagonal part is skew for the bundle metric
            assert np.abs(off.conj().T @ Hm + Hm @ off).max() < 1e-12
            assert abs(np.trace(B)) < 1e-12
            # phi* is the metric adjoint of phi
            phs = np.linalg.inv(Hm) @ H.phi(z, v).conj().T @ Hm
            assert np.allclose(phs, H.phi_star(z, v), atol=1e-12)


def test_gauss_residual_guard():
    m = mesh(3)
    bad = Gm.GermPair(m, np.zeros(m.n_classes), sigma(), 1.0)
    with pytest.raises(GaussResidualTooLarge):
        Hg.build_higgs(bad, bolza())
    assert isinstance(solved_higgs(3), Hg.HiggsData)


def test_chern_curvature_matches_gauss_bonnet():
    # (1/2i) int K dvol = (1/2i)(-4 pi) = 2 pi i
    for H in (fuchsian(), solved_higgs(3)):
        val = Hg.chern_curvature_integral(H)
        assert abs(val - 2j * np.pi) < 0.01 * 2 * np.pi


# ---------------------------------------------------------------- Hitchin residual

def test_hitchin_residual_vanishes_for_fuchsian():
    f1, f2 = Hg.hitchin_residual(fuchsian(), PTS)
    assert f1.max() < 1e-8
    assert f2.max() == 0.0


@pytest.mark.parametrize("c", [0.8, 1.1, 1.3])
def test_hitchin_residual_matches_gauss_defect(c):
    H = Hg.HiggsData(_scaled(c), bolza())
    f1, _ = Hg.hitchin_residual(H, PTS)
    assert np.allclose(f1, abs(1 - 1 / c ** 2) / 2, rtol=0.01)


def test_flatness_defect_is_linear_in_gauss_residual():
    eps = np.array([1e-3, 2e-3, 4e-3])
    dev = []
    for e in eps:
        H = Hg.HiggsData(_scaled(1 / np.sqrt(1 - e)), bolza())
        P = Hg.plaquette_holonomy(Hg.flat_connection(H), 0.2, 1e-2, 4)
        dev.append(np.abs(P - np.eye(2)).max())
    dev = np.array(dev)
    assert np.allclose(dev / eps, dev[0] / eps[0], rtol=0.01)


def test_hitchin_residual_on_solved_germ():
    H = solved_higgs(3)
    pts = af3d.sample_octagon(np.random.default_rng(0), 5)
    f1, f2 = Hg.hitchin_residual(H, pts)
    eps = np.array([abs(H.germ.gauss_residual(z)) for z in pts])
    assert np.allclose(f1, eps / 2, rtol=0.1)
    assert f2.max() < 1e-12


def test_dbar_sigma_enters_the_off_diagonal_curvature():
    # f = s conj(z) is not holomorphic; dbar_A phi stays zero while the
    # (1,2) curvature entry carries |f_zbar| / lambda^2
    s = 0.05
    g = AFGerm(lambda0, lambda z: s * np.conj(z), dz_log_lambda0)
    B = Hg.flat_connection(Hg.HiggsData(g, bolza()))
    for z in PTS:
        delta = 1e-3
        F = (np.eye(2) - Hg.plaquette_holonomy(B, z, delta, 2)) / delta ** 2
        assert abs(F[0, 1]) == pytest.approx(s / lambda0(z) ** 2, rel=1e-3)
    _, f2 = Hg.hitchin_residual(B, PTS)
    assert f2.max() < 1e-12


# ---------------------------------------------------------------- transport

def test_zero_connection_holonomy_is_identity():
    zero = lambda z, v: np.zeros((2, 2), dtype=complex)
    loop = 0.3 * np.exp(2j * np.pi * np.linspace(0, 1, 33))
    assert np.array_equal(Hg.holonomy_along(zero, loop), np.eye(2))


def test_contractible_loops_are_trivial():
    B = Hg.flat_connection(fuchsian())
    loop = 0.1 + 0.35 * np.exp(2j * np.pi * np.linspace(0, 1, 257))
    assert np.abs(Hg.holonomy_along(B, loop) - np.eye(2)).max() < 1e-6
    assert np.abs(Hg.plaquette_holonomy(B, 0.2j, 0.1, 16) - np.eye(2)).max() < 1e-10


def test_plaquette_flatness_is_second_order():
    B = Hg.flat_connection(fuchsian())
    res = [np.abs(Hg.plaquette_holonomy(B, 0.2 + 0.1j, 0.2, n, "link") - np.eye(2)).max()
           for n in (4, 8, 16, 32)]
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(np.abs(orders - 2) < 0.1)


def test_path_lift_errors():
    B = Hg.flat_connection(fuchsian())
    with pytest.raises(PathLiftError):
        Hg.holonomy_along(B, [0, 0.5])
    with pytest.raises(PathLiftError):
        Hg.holonomy_along(B, [0, 0.99, 0], n_steps=None)
    g = bolza().generators[0]
    with pytest.raises(PathLiftError):
        Hg.holonomy_along(B, [0, 0.3], g)


# ---------------------------------------------------------------- holonomy representation

def test_fuchsian_representation():
    rep = fuchsian_rep()
    assert rep.relator_residual < 1e-6
    assert np.abs(rep.traces.imag).max() < 1e-6
    assert np.abs(np.abs(rep.traces) - TRACE).max() < 1e-4
    geo = np.abs(np.trace(bolza().generators, axis1=1, axis2=2))
    assert np.abs(np.abs(rep.traces) - geo).max() < 1e-4
    assert rep.det_residual < 1e-8
    assert rep.refinement_change < 1e-6


def test_inverse_generators():
    rep = fuchsian_rep()
    for k in range(4):
        assert np.abs(rep.generators[k] @ rep.generators[k + 4] - np.eye(2)).max() < 1e-6


def test_holonomy_is_path_independent_for_flat_connection():
    B = Hg.flat_connection(fuchsian())
    g = bolza().generators[2]
    p = 0.05 - 0.1j
    q = complex(np.asarray(g[0, 0] * p + g[0, 1]) / (g[1, 0] * p + g[1, 1]))
    straight = Hg.holonomy_along(B, [p, q], g, n_steps=256)
    detour_pts = np.concatenate([Hg.geodesic_path(p, 0.3j, 128)[:-1], Hg.geodesic_path(0.3j, q, 256)])
    detour = Hg.holonomy_along(B, detour_pts, g)
    assert np.abs(np.trace(straight) - np.trace(detour)) < 1e-6


def test_solved_germ_relator_tracks_discretization():
    res = []
    for level in (3, 4):
        rep = Hg.generator_holonomies(solved_higgs(level), bolza(), tol=1.0,
                                      check_refinement=False)
        res.append(rep.relator_residual)
        assert rep.det_residual < 1e-8
        # the deformation moves the traces off the real line
        assert np.abs(rep.traces.imag).max() > 0.1
    assert res[1] < res[0] / 1.5
    with pytest.raises(HolonomyInconsistent):
        Hg.generator_holonomies(solved_higgs(3), bolza(), check_refinement=False)


def test_holonomy_json_round_trip():
    rep = fuchsian_rep()
    back = Hg.HolonomyRep.from_json(rep.to_json())
    assert np.array_equal(back.generators, rep.generators)
    assert back.branch_bits == rep.branch_bits and back.relator_sign == rep.relator_sign
    assert rep.to_json() == back.to_json()


# ---------------------------------------------------------------- gauge covariance

def _gauge(z):
    x, y = z.real, z.imag
    b, bx, by = 0.3 * x + 0.2j * y * y, 0.3, 0.4j * y
    c, cx, cy = 0.1 + 0.4 * x * y, 0.4 * y, 0.4 * x
    U = np.array([[1, b], [0, 1]])
    L = np.array([[1, 0], [c, 1]])
    dU = lambda d: np.array([[0, d], [0, 0]])
    dL = lambda d: np.array([[0, 0], [d, 0]])
    return U @ L, dU(bx) @ L + U @ dL(cx), dU(by) @ L + U @ dL(cy)


def test_gauge_covariance():
    H = Hg.HiggsData(_scaled(1.1), bolza())
    B0, B1 = Hg.flat_connection(H), Hg.flat_connection(H, _gauge)
    f0, _ = Hg.hitchin_residual(B0, PTS)
    f1, _ = Hg.hitchin_residual(B1, PTS)
    assert np.abs(f0 - f1).max() < 1e-8
    F = Hg.flat_connection(fuchsian(), _gauge)
    r0 = fuchsian_rep()
    r1 = Hg.generator_holonomies(F, bolza(), basepoint=0.1j, check_refinement=False)
    r0b = Hg.generator_holonomies(fuchsian(), bolza(), basepoint=0.1j, check_refinement=False)
    assert np.abs(r1.traces - r0b.traces).max() < 1e-8
    assert np.abs(np.abs(r1.traces) - np.abs(r0.traces)).max() < 1e-6


# ---------------------------------------------------------------- developing map

def test_fuchsian_immersion_is_totally_geodesic():
    pts = af3d.sample_octagon(np.random.default_rng(2), 6)
    rep = Hg.develop_immersion(fuchsian(), None, pts)
    assert rep.first_form_error < 1e-4
    assert np.abs(rep.second_form).max() < 1e-6
    assert np.all(rep.h3[:, 2] > 0)


def test_solved_immersion_fundamental_forms():
    H = solved_higgs(3)
    pts = af3d.sample_octagon(np.random.default_rng(3), 6)
    rep = Hg.develop_immersion(H, None, pts)
    assert rep.first_form_error < 1e-4
    assert rep.second_form_error < 1e-3
    assert np.abs(rep.expected_second).max() > 0.1
