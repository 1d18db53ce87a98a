"""The almost-Fuchsian 3-metric on Sigma x R and its numerical checks.

A germ (g, sigma) with g = lambda^2 |dz|^2 and sigma = f dz^2 gives on
(x, y, t) the metric

    g^Y = g (cosh t I - sinh t g^{-1} Re sigma)^2 (+) dt^2,

where, in the real chart, Re sigma has components h11 = Re f = -h22 and
h12 = -Im f.  Everything here is pointwise evaluation, so the germ is held
as a pair of callables (lambda, f) on disc points.
"""

import io
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import fiber
from .errors import DegeneratePlane, NormalizationError, OutsideDiscBundle
from .germ import unrescale_pair
from .surface import ScalarSurrogate, dz_log_lambda0, in_octagon, lambda0

FD_STEPS = (1e-3, 5e-4, 2.5e-4)
T_RANGE = (-3.0, 3.0)
MEAN_FD_STEP = 1e-4
GRAM_TOL = 1e-10
CONSISTENCY_TOL = 1e-8


def _zero(z):
    return np.zeros(np.shape(z), dtype=complex)


@dataclass(frozen=True)
class AFGerm:
    """Minimal-surface data (lambda, f) as callables on the disc chart.

    ``dlog`` optionally gives d(log lambda)/dz; otherwise it is taken by
    central differences.
    """

    lam: object
    f: object = _zero
    dlog: object = None

    @classmethod
    def fuchsian(cls):
        return cls(lambda0, _zero, dz_log_lambda0)

    @classmethod
    def from_pair(cls, pair, G):
        """Smooth germ from a solved GermPair: lambda = lambda0 e^u with u
        interpolated by the mesh surrogate, f the series itself."""
        surr = ScalarSurrogate(pair.mesh, G, pair.u)
        sigma, t = pair.sigma, pair.t
        u_at = lru_cache(maxsize=1 << 16)(surr)

        def lam(z):
            z = np.asarray(z, dtype=complex)
            u = np.array([u_at(complex(w)) for w in z.ravel()]).reshape(z.shape)
            return lambda0(z) * np.exp(u)

        def f(z):
            return t * sigma(np.asarray(z, dtype=complex))

        # d log(lambda)/dz by differencing lambda itself, so that the Chern
        # connection is exactly compatible with the metric it is built from
        return cls(lam, f)

    def lam_at(self, z):
        return np.asarray(self.lam(np.asarray(z, dtype=complex)), dtype=float)

    def f_at(self, z):
        return np.asarray(self.f(np.asarray(z, dtype=complex)), dtype=complex)

    def dlog_at(self, z, h=1e-6):
        z = np.asarray(z, dtype=complex)
        if self.dlog is not None:
            return np.asarray(self.dlog(z), dtype=complex)
        lx = (np.log(self.lam_at(z + h)) - np.log(self.lam_at(z - h))) / (2 * h)
        ly = (np.log(self.lam_at(z + 1j * h)) - np.log(self.lam_at(z - 1j * h))) / (2 * h)
        return 0.5 * (lx - 1j * ly)

    def sigma_norm(self, z):
        return np.abs(self.f_at(z)) / self.lam_at(z) ** 2

    def gauss_residual(self, z, h=1e-3):
        """K_g + |sigma|_g^2 + 1 at z, with K from a Richardson-extrapolated
        five-point Laplacian of log lambda."""
        z = complex(z)

        def lap(s):
            pts = np.array([z, z + s, z - s, z + 1j * s, z - 1j * s])
            ll = np.log(self.lam_at(pts))
            return (ll[1:].sum() - 4 * ll[0]) / s ** 2

        L = (4 * lap(h / 2) - lap(h)) / 3
        lam = float(self.lam_at(z))
        K = -L / lam ** 2
        return K + float(self.sigma_norm(z)) ** 2 + 1


def _hmat(f):
    """Re sigma as a symmetric 2x2 matrix per sample (trailing axes)."""
    a, b = np.real(f), np.imag(f)
    return np.stack([np.stack([a, -b], -1), np.stack([-b, -a], -1)], -2)


def _metric_from(lam, f, t):
    lam, f, t = np.broadcast_arrays(np.asarray(lam, float), np.asarray(f, complex),
                                    np.asarray(t, float))
    c, s = np.cosh(t), np.sinh(t)
    S = _hmat(f) / (lam ** 2)[..., None, None]
    B = c[..., None, None] * np.eye(2) - s[..., None, None] * S
    out = np.zeros(lam.shape + (3, 3))
    out[..., :2, :2] = (lam ** 2)[..., None, None] * (B @ B)
    out[..., 2, 2] = 1.0
    return out


def af_metric_at(germ, z, t):
    """3x3 metric of the almost-Fuchsian manifold at (z, t)."""
    lam, f = germ.lam_at(z), germ.f_at(z)
    if np.any(np.abs(f) >= lam ** 2):
        raise OutsideDiscBundle("|sigma|_g >= 1")
    return _metric_from(lam, f, t)


# ---------------------------------------------------------------- curvature

_OFFSETS = [(0, 0, 0)]
for _i in range(3):
    _e = [0, 0, 0]
    _e[_i] = 1
    _OFFSETS += [tuple(_e), tuple(-x for x in _e)]
for _i in range(3):
    for _j in range(_i + 1, 3):
        for _a in (1, -1):
            for _b in (1, -1):
                _e = [0, 0, 0]
                _e[_i], _e[_j] = _a, _b
                _OFFSETS.append(tuple(_e))
_OFFSETS = np.array(_OFFSETS, dtype=float)
_IDX = {tuple(int(v) for v in o): k for k, o in enumerate(_OFFSETS)}


def _metric_stencil(metric_fn, p, h):
    """Metrics at the 19 points p + h*offset, in _OFFSETS order."""
    pts = p[None, :] + h * _OFFSETS
    return metric_fn(pts)


def _riemann(Gs, h):
    """Lowered Riemann tensor R_abcd = <R(e_a, e_b) e_c, e_d> at the centre
    of a 19-point stencil, by central differences of the metric."""

    def at(*o):
        return Gs[_IDX[o]]

    def unit(i, s=1):
        e = [0, 0, 0]
        e[i] = s
        return e

    g = at(0, 0, 0)
    dg = np.zeros((3, 3, 3))     # dg[k] = d_k g
    ddg = np.zeros((3, 3, 3, 3))  # ddg[k, l] = d_k d_l g
    for k in range(3):
        dg[k] = (at(*unit(k)) - at(*unit(k, -1))) / (2 * h)
        ddg[k, k] = (at(*unit(k)) - 2 * g + at(*unit(k, -1))) / h ** 2
        for l in range(k + 1, 3):
            def o(a, b):
                e = [0, 0, 0]
                e[k], e[l] = a, b
                return tuple(e)
            v = (at(*o(1, 1)) - at(*o(1, -1)) - at(*o(-1, 1)) + at(*o(-1, -1))) / (4 * h * h)
            ddg[k, l] = ddg[l, k] = v
    # first-kind Christoffels Gamma_{kij} = (d_i g_jk + d_j g_ik - d_k g_ij) / 2
    d = np.transpose(dg, (1, 2, 0))  # d[i, j, k] = d_k g_ij
    first = 0.5 * (np.einsum("jki->kij", d) + np.einsum("ikj->kij", d) - np.einsum("ijk->kij", d))
    gi = np.linalg.inv(g)
    second = np.einsum("mk,kij->mij", gi, first)
    # R_{iklm} with R(X, Y, X, Y) / Gram the sectional curvature
    D = np.transpose(ddg, (2, 3, 0, 1))  # D[i, j, k, l] = d_k d_l g_ij
    R = 0.5 * (np.einsum("imkl->iklm", D) + np.einsum("klim->iklm", D)
               - np.einsum("ilkm->iklm", D) - np.einsum("kmil->iklm", D))
    R += (np.einsum("nkl,nim->iklm", first, second)
          - np.einsum("nkm,nil->iklm", first, second))
    return g, R


def _sectional(metric_fn, p, X, Y, h):
    g, R = _riemann(_metric_stencil(metric_fn, p, h), h)
    gram = (X @ g @ X) * (Y @ g @ Y) - (X @ g @ Y) ** 2
    if gram < GRAM_TOL * max(1.0, (X @ g @ X) * (Y @ g @ Y)):
        raise DegeneratePlane(f"plane Gram determinant {gram:.3g}")
    return np.einsum("iklm,i,k,l,m->", R, X, Y, X, Y) / gram


def _germ_metric_fn(germ):
    def fn(pts):
        z = pts[:, 0] + 1j * pts[:, 1]
        return af_metric_at(germ, z, pts[:, 2])
    return fn


def sectional_curvature_fd(germ, z, t, plane, h_fd=FD_STEPS, with_error=False):
    """Sectional curvature of the plane span(X, Y) at (z, t).

    ``germ`` is an AFGerm or any callable mapping an (n, 3) array of
    (x, y, t) points to (n, 3, 3) metrics.  The step sweep h_fd feeds a
    Richardson extrapolation of the two finest steps; the error estimate
    is the spread between the two Richardson values.
    """
    X, Y = (np.asarray(v, dtype=float) for v in plane)
    fn = _germ_metric_fn(germ) if isinstance(germ, AFGerm) else germ
    p = np.array([np.real(z), np.imag(z), t], dtype=float)
    K = [_sectional(fn, p, X, Y, h) for h in h_fd]
    if len(K) == 1:
        return (K[0], float("nan")) if with_error else K[0]
    rich = [(4 * K[i + 1] - K[i]) / 3 for i in range(len(K) - 1)]
    val = rich[-1]
    err = abs(rich[-1] - rich[-2]) if len(rich) > 1 else abs(K[-1] - K[-2])
    return (val, err) if with_error else val


# ---------------------------------------------------------------- mean curvature

def mean_curvature_closed(s, t):
    """Mean curvature of the t-slice for pointwise |sigma|_g = s."""
    c, sh = np.cosh(t), np.sinh(t)
    return 2 * sh * c * (1 - s * s) / (c * c - sh * sh * s * s)


def mean_curvature_at(germ, z, t):
    return mean_curvature_closed(germ.sigma_norm(z), t)


def mean_curvature_fd(germ, z, t, h=MEAN_FD_STEP):
    """tr(g_t^{-1} d_t g_t) / 2 by a fourth-order central difference in t."""
    G = [af_metric_at(germ, z, t + k * h)[..., :2, :2] for k in (-2, -1, 1, 2)]
    dG = (G[0] - 8 * G[1] + 8 * G[2] - G[3]) / (12 * h)
    g = af_metric_at(germ, z, t)[..., :2, :2]
    return 0.5 * np.trace(np.linalg.solve(g, dG), axis1=-2, axis2=-1)


# ---------------------------------------------------------------- boundary data

def boundary_metric(germ, sign, z):
    """g(1 + |sigma|^2) -/+ 2 Re sigma at z, as 2x2 matrices; sign is +1 or -1."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    lam, f = germ.lam_at(z), germ.f_at(z)
    s2 = np.abs(f) ** 2 / lam ** 4
    I = np.eye(2)
    return ((lam ** 2 * (1 + s2))[..., None, None] * I - 2 * sign * _hmat(f))


def beltrami(G):
    """Beltrami coefficient mu of a positive 2x2 form, G ~ |dz + mu dzbar|^2."""
    G = np.asarray(G, dtype=float)
    a, b, c = G[..., 0, 0], G[..., 0, 1], G[..., 1, 1]
    det = a * c - b * b
    return (a - c + 2j * b) / (a + c + 2 * np.sqrt(det))


def half_plane_metric(zeta):
    """Positive form omega_0(., J_zeta .) attached to a half-plane point."""
    return fiber.OMEGA0 @ fiber.j_of(complex(zeta))


@dataclass(frozen=True)
class ConsistencyReport:
    points: np.ndarray
    deviation_plus: np.ndarray
    deviation_minus: np.ndarray
    swap_deviation: float

    @property
    def sup_deviation(self):
        return float(max(self.deviation_plus.max(initial=0.0),
                         self.deviation_minus.max(initial=0.0)))


def fiber_consistency_check(germ, points, tol=CONSISTENCY_TOL):
    """Compare the conformal classes of the two boundary metrics with the
    half-plane points given by the fiber's Hodge map.

    At each point sigma is written in a g_s-orthonormal frame (g_s the
    inverse-rescaled metric), giving the fiber point (i, conj(F_s)).
    """
    z = np.atleast_1d(np.asarray(points, dtype=complex))
    lam, f = germ.lam_at(z), germ.f_at(z)
    lam_s = unrescale_pair(lam, f)
    Fs = f / lam_s ** 2
    if np.any(np.abs(Fs) >= 1):
        raise NormalizationError("section leaves the disc bundle after rescaling")
    mu_p, mu_m = beltrami(boundary_metric(germ, 1, z)), beltrami(boundary_metric(germ, -1, z))
    dev_p, dev_m, swap = [], [], 0.0
    for k in range(len(z)):
        a, b = fiber.hodge_alpha((1j, np.conj(Fs[k])))
        dev_p.append(abs(mu_p[k] - beltrami(half_plane_metric(a.z))))
        dev_m.append(abs(mu_m[k] - beltrami(half_plane_metric(b.z))))
        a2, b2 = fiber.hodge_alpha((1j, -np.conj(Fs[k])))
        swap = max(swap, abs(a2.z - b.z), abs(b2.z - a.z))
    rep = ConsistencyReport(z, np.array(dev_p), np.array(dev_m), float(swap))
    if rep.sup_deviation > tol or rep.swap_deviation > tol:
        raise NormalizationError(
            f"boundary classes disagree with the Hodge map (sup {rep.sup_deviation:.3g})")
    return rep


# ---------------------------------------------------------------- sweeps

def sample_octagon(rng, n, r_max=0.8):
    """n seeded random points of the octagon with |z| <= r_max."""
    out = []
    while len(out) < n:
        w = r_max * np.sqrt(rng.uniform()) * np.exp(2j * np.pi * rng.uniform())
        if in_octagon(w, tol=-1e-3):
            out.append(complex(w))
    return np.array(out)


def _draw(rng, n, t_range):
    zs = sample_octagon(rng, n)
    ts = rng.uniform(t_range[0], t_range[1], n)
    planes = rng.normal(size=(n, 2, 3))
    return zs, ts, planes


def curvature_sweep(germ, n, rng, t_range=T_RANGE, mapper=map):
    """Rows (z_x, z_y, t, K, fd_error_estimate) at n random (z, t, plane).

    All samples are drawn before evaluation, so any order-preserving
    ``mapper`` gives the same rows.
    """
    zs, ts, planes = _draw(rng, n, t_range)

    def row(k):
        K, err = sectional_curvature_fd(germ, zs[k], ts[k], planes[k], with_error=True)
        return (zs[k].real, zs[k].imag, ts[k], K, err)

    return list(mapper(row, range(n)))


def mean_curvature_sweep(germ, n, rng, t_range=T_RANGE, mapper=map):
    """Rows (z_x, z_y, t, H, |H - H_fd|)."""
    zs, ts, _ = _draw(rng, n, t_range)

    def row(k):
        H = float(mean_curvature_at(germ, zs[k], ts[k]))
        return (zs[k].real, zs[k].imag, ts[k], H,
                abs(H - float(mean_curvature_fd(germ, zs[k], ts[k]))))

    return list(mapper(row, range(n)))


def rows_to_csv(rows):
    buf = io.StringIO()
    buf.write("z_x,z_y,t,value,fd_error_estimate\n")
    for r in rows:
        buf.write(",".join(f"{float(v):.17g}" for v in r) + "\n")
    return buf.getvalue()
