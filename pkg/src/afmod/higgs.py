"""Higgs pair, flat SL(2,C) connection and holonomy of a minimal-surface germ.

Everything is written in the holomorphic frame (e, e*) of E = L + L^{-1},
L = T^{1/2}, with e = (d/dz)^{1/2} on the whole disc.  For g = lambda^2|dz|^2
and sigma = f dz^2 the bundle metric is H = diag(lambda, 1/lambda) and, on a
tangent vector v (a complex number),

    A(v)    = [[a v,  fbar conj(v) / (2 lambda^2)], [-f v / 2, -a v]]
    phi(v)  = [[0, v / 2], [0, 0]]
    phi*(v) = [[0, 0], [lambda^2 conj(v) / 2, 0]]

with a = d(log lambda)/dz, the Chern connection of L.  B = A + phi + phi*
then has curvature ((K + 1 + |sigma|^2) / 2i) diag(1, -1) dvol plus an
off-diagonal term proportional to dbar sigma.

Fields outside the octagon are obtained from the germ by automorphy, so the
deck transformation gamma acts on frames by D = diag(gamma'^{-1/2}, gamma'^{1/2}).
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, minimum_spanning_tree

from . import mobius
from .af3d import AFGerm, _hmat
from .errors import (DevelopingMapError, GaussResidualTooLarge, HolonomyInconsistent,
                     MeshIdentificationError, PathLiftError)
from .germ import GermPair, residual_gauss
from .surface import geodesic_point, reduce_to_domain

TILE_RADIUS = 0.98
DEFAULT_STEPS = 256
RELATOR_TOL = 1e-6
PHI_Z = np.array([[0, 0.5], [0, 0]], dtype=complex)


# ---------------------------------------------------------------- Higgs data

@dataclass
class HiggsData:
    """Higgs pair of a germ; fields are evaluated on demand at disc points."""

    germ: AFGerm
    G: object

    def fields(self, z):
        """(lambda, a, f) at a disc point, folded into the octagon."""
        z = complex(z)
        if not abs(z) < TILE_RADIUS:
            raise PathLiftError(f"point {z} outside the tiled neighbourhood")
        try:
            w, M = reduce_to_domain(self.G, z)
        except MeshIdentificationError as e:
            raise PathLiftError(str(e)) from None
        d = mobius.mobius_deriv(M, z)
        c, dd = M[1, 0], M[1, 1]
        lam = float(self.germ.lam_at(w)) * abs(d)
        a = complex(self.germ.dlog_at(w)) * d - c / (c * z + dd)
        f = complex(self.germ.f_at(w)) * d * d
        return lam, a, f

    def bundle_metric(self, z):
        lam = self.fields(z)[0]
        return np.diag([lam, 1 / lam]).astype(complex)

    def A(self, z, v):
        lam, a, f = self.fields(z)
        vb = np.conj(v)
        return np.array([[a * v, np.conj(f) * vb / (2 * lam * lam)],
                         [-f * v / 2, -a * v]])

    def phi(self, z, v):
        return PHI_Z * v

    def phi_star(self, z, v):
        lam = self.fields(z)[0]
        return np.array([[0, 0], [lam * lam * np.conj(v) / 2, 0]], dtype=complex)

    def B(self, z, v):
        lam, a, f = self.fields(z)
        vb = np.conj(v)
        return np.array([[a * v, np.conj(f) * vb / (2 * lam * lam) + v / 2],
                         [-f * v / 2 + lam * lam * vb / 2, -a * v]])

    def sample(self, points):
        """Arrays of a, A(dx), A(dy), phi(dz-coefficient) at the points."""
        pts = np.atleast_1d(np.asarray(points, dtype=complex))
        return {
            "a": np.array([self.fields(z)[1] for z in pts]),
            "A_x": np.array([self.A(z, 1.0) for z in pts]),
            "A_y": np.array([self.A(z, 1j) for z in pts]),
            "phi": np.repeat(PHI_Z[None], len(pts), 0),
        }

    def metric_compatibility_residual(self, z, h=1e-5):
        """max over x, y of |d_v H - (A(v)^dag H + H A(v))|."""
        out = 0.0
        H = self.bundle_metric(z)
        for v in (1.0, 1j):
            dH = (self.bundle_metric(z + h * v) - self.bundle_metric(z - h * v)) / (2 * h)
            Av = self.A(z, v)
            out = max(out, np.abs(dH - (Av.conj().T @ H + H @ Av)).max())
        return float(out)


def build_higgs(source, G, gauss_tol=1e-8):
    """HiggsData from a solved GermPair (checked against gauss_tol) or an
    AFGerm (used as given)."""
    if isinstance(source, GermPair):
        r = float(np.abs(residual_gauss(source.mesh, source.u, source.sigma, source.t)).max())
        if gauss_tol is not None and r > gauss_tol:
            raise GaussResidualTooLarge(f"Gauss residual {r:.3e} exceeds {gauss_tol:.1e}")
        source = AFGerm.from_pair(source, G)
    return HiggsData(source, G)


def chern_curvature_integral(H, n_per_side=64):
    """Integral of F_a over the octagon, as the contour integral of a dz
    along its boundary (Gauss-Legendre on each geodesic side)."""
    from .surface import VERTEX_RADIUS
    corners = VERTEX_RADIUS * np.exp(1j * (np.pi / 8 + np.arange(9) * np.pi / 4))
    x, w = np.polynomial.legendre.leggauss(n_per_side)
    s = (x + 1) / 2
    total = 0j
    eps = 1e-7
    for k in range(8):
        p, q = corners[k], corners[k + 1]
        for sk, wk in zip(s, w):
            z = geodesic_point(p, q, sk)
            dz = (geodesic_point(p, q, sk + eps) - geodesic_point(p, q, sk - eps)) / (2 * eps)
            # a from the germ directly: the side is inside the closed octagon
            total += wk / 2 * complex(H.germ.dlog_at(z)) * dz
    return total


# ---------------------------------------------------------------- flat connection

@dataclass
class FlatConnectionField:
    """B = A + phi + phi*, optionally in a gauge-transformed frame.

    ``gauge`` is a callable z -> (g, g_x, g_y) with g in SL(2,C); the new
    frame is e' = e g, so B' = g^{-1} B g + g^{-1} dg and H' = g^dag H g.
    """

    higgs: HiggsData
    gauge: object = None

    def __call__(self, z, v):
        B = self.higgs.B(z, v)
        if self.gauge is None:
            return B
        g, gx, gy = self.gauge(z)
        gi = np.linalg.inv(g)
        return gi @ B @ g + gi @ (np.real(v) * gx + np.imag(v) * gy)

    def gauge_at(self, z):
        if self.gauge is None:
            return np.eye(2, dtype=complex)
        return self.gauge(z)[0]

    def bundle_metric(self, z):
        H = self.higgs.bundle_metric(z)
        g = self.gauge_at(z)
        return g.conj().T @ H @ g

    def A_zbar(self, z):
        """dzbar-component of the connection part (B minus phi, phi*)."""
        def Apart(v):
            P = self.higgs.phi(z, v) + self.higgs.phi_star(z, v)
            g = self.gauge_at(z)
            return self(z, v) - np.linalg.inv(g) @ P @ g
        return (Apart(1.0) + 1j * Apart(1j)) / 2

    def phi_z(self, z):
        g = self.gauge_at(z)
        return np.linalg.inv(g) @ PHI_Z @ g


def flat_connection(H, gauge=None):
    return FlatConnectionField(H, gauge)


def _rk4_segment(B, a, b, T):
    v = b - a
    m = (a + b) / 2
    k1 = -B(a, v) @ T
    Bm = B(m, v)
    k2 = -Bm @ (T + k1 / 2)
    k3 = -Bm @ (T + k2 / 2)
    k4 = -B(b, v) @ (T + k3)
    return T + (k1 + 2 * k2 + 2 * k3 + k4) / 6


def transport(B, path):
    """Parallel transport T along a polyline (one RK4 step per segment):
    a B-parallel section with components c(start) has c(end) = T c(start)."""
    path = np.asarray(path, dtype=complex)
    T = np.eye(2, dtype=complex)
    for a, b in zip(path[:-1], path[1:]):
        T = _rk4_segment(B, a, b, T)
    if not np.all(np.isfinite(T)):
        raise DevelopingMapError("transport produced non-finite values")
    return T


def geodesic_path(p, q, n_steps=DEFAULT_STEPS):
    return np.array([geodesic_point(p, q, s) for s in np.linspace(0, 1, n_steps + 1)])


def deck_cocycle(g, p, branch=0):
    """Frame identification D at the endpoint of a lift from p to g(p)."""
    d = mobius.mobius_deriv(g, complex(p))
    r = np.sqrt(complex(d)) * (-1) ** branch
    return np.diag([1 / r, r])


def holonomy_along(B, path, element=None, branch=0, n_steps=None):
    """Holonomy of a loop on the surface lifted to the disc as ``path``.

    ``element`` is the deck transformation taking the start of the path to
    its end (None for a closed lift); ``branch`` picks the sign of the
    square root in the cocycle.  With ``n_steps`` the path's end points are
    joined by a geodesic polyline instead.
    """
    path = np.asarray(path, dtype=complex)
    if n_steps is not None:
        path = geodesic_path(path[0], path[-1], n_steps)
    p = path[0]
    if element is None:
        if abs(path[-1] - p) > 1e-9:
            raise PathLiftError("open path without a deck transformation")
        T = transport(B, path)
        D = np.eye(2)
    else:
        if abs(mobius.mobius(element, p) - path[-1]) > 1e-9:
            raise PathLiftError("path end is not the image of its start")
        T = transport(B, path)
        D = deck_cocycle(element, p, branch)
    gauge_at = getattr(B, "gauge_at", None)
    if gauge_at is None:
        return D @ T
    # T lives in the gauged frames; D was written for the holomorphic frame
    return np.linalg.inv(gauge_at(p)) @ D @ gauge_at(path[-1]) @ T


def _square(z, delta, n):
    """Loop based at z: out to a corner, once around the square, back."""
    corners = z + delta / 2 * np.array([-1 - 1j, 1 - 1j, 1 + 1j, -1 + 1j, -1 - 1j])
    legs = [z] + list(corners) + [z]
    pts = [z]
    for a, b in zip(legs[:-1], legs[1:]):
        pts.extend(a + (b - a) * np.arange(1, n + 1) / n)
    return np.array(pts)


def _expm2(X):
    """exp of a traceless 2x2 matrix."""
    d = np.sqrt(complex(-np.linalg.det(X)))
    if abs(d) < 1e-8:
        return np.eye(2) + X + X @ X / 2
    return np.cosh(d) * np.eye(2) + np.sinh(d) / d * X


def plaquette_holonomy(B, z, delta, n=4, scheme="rk4"):
    """Transport around the counter-clockwise square of side delta centred
    at z (based at z), n steps per edge.  ``scheme="link"`` uses midpoint exponentials
    exp(-B(mid, step)) per step, a second-order rule."""
    pts = _square(complex(z), delta, n)
    if scheme == "rk4":
        return transport(B, pts)
    if scheme != "link":
        raise ValueError(f"unknown scheme {scheme!r}")
    T = np.eye(2, dtype=complex)
    for a, b in zip(pts[:-1], pts[1:]):
        T = _expm2(-B((a + b) / 2, b - a)) @ T
    return T


def _hnorm(X, H):
    """Operator norm of X with respect to the hermitian metric H."""
    w, V = np.linalg.eigh(H)
    R = V @ np.diag(np.sqrt(w)) @ V.conj().T
    return float(np.linalg.norm(R @ X @ np.linalg.inv(R), 2))


def hitchin_residual(B, points, delta=1e-3, n=2):
    """Per-point densities (with respect to dvol_g) of |F_A + [phi ^ phi*]|
    from plaquette holonomy, and of |dbar_A phi|, both in the bundle metric.

    ``B`` is a FlatConnectionField or HiggsData.
    """
    if isinstance(B, HiggsData):
        B = flat_connection(B)
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    f1, f2 = [], []
    h = 1e-5
    for z in pts:
        lam = B.higgs.fields(z)[0]
        H = B.bundle_metric(z)
        P = plaquette_holonomy(B, z, delta, n)
        F = (np.eye(2) - P) / delta ** 2
        f1.append(_hnorm(F, H) / lam ** 2)
        dphi = ((B.phi_z(z + h) - B.phi_z(z - h)) / (2 * h)
                + 1j * (B.phi_z(z + 1j * h) - B.phi_z(z - 1j * h)) / (2 * h)) / 2
        Az = B.A_zbar(z)
        Pz = B.phi_z(z)
        D = dphi + Az @ Pz - Pz @ Az
        f2.append(2 * _hnorm(D, H) / lam ** 2)
    return np.array(f1), np.array(f2)


# ---------------------------------------------------------------- holonomy representation

@dataclass
class HolonomyRep:
    basepoint: complex
    generators: np.ndarray
    branch_bits: tuple
    relator_residual: float
    relator_sign: int
    refinement_change: float = float("nan")

    @property
    def traces(self):
        return np.trace(self.generators, axis1=1, axis2=2)

    @property
    def det_residual(self):
        return float(np.abs(np.linalg.det(self.generators) - 1).max())

    def to_json(self):
        gens = [[[float(x.real), float(x.imag)] for x in g.ravel()] for g in self.generators]
        doc = {
            "basepoint": [float(np.real(self.basepoint)), float(np.imag(self.basepoint))],
            "generators": gens,
            "traces": [[float(t.real), float(t.imag)] for t in self.traces],
            "relator_residual": self.relator_residual,
            "relator_sign": self.relator_sign,
            "refinement_change": self.refinement_change,
            "branch_bits": list(self.branch_bits),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        gens = np.array([[complex(*x) for x in g] for g in d["generators"]]).reshape(-1, 2, 2)
        return cls(complex(*d["basepoint"]), gens, tuple(d["branch_bits"]),
                   d["relator_residual"], d["relator_sign"], d["refinement_change"])


def _relator(G, mats):
    P = np.eye(2, dtype=complex)
    for k in G.relator_word:
        P = P @ mats[k]
    I = np.eye(2)
    res_p, res_m = np.abs(P - I).max(), np.abs(P + I).max()
    return (float(res_p), 1) if res_p <= res_m else (float(res_m), -1)


def generator_holonomies(B, G, basepoint=0j, n_steps=DEFAULT_STEPS, tol=RELATOR_TOL,
                         check_refinement=True):
    """Images of the eight side pairings along geodesic lifts from the
    basepoint.  Branches of the square roots are fixed so that
    rho(gamma_{k+4}) = rho(gamma_k)^{-1}."""
    if isinstance(B, HiggsData):
        B = flat_connection(B)
    p = complex(basepoint)

    def run(n):
        mats, bits = [], []
        for k, g in enumerate(G.generators):
            path = geodesic_path(p, mobius.mobius(g, p), n)
            M = holonomy_along(B, path, g)
            bit = 0
            if k >= 4:
                inv = mats[k - 4]
                if np.abs(M @ inv + np.eye(2)).max() < np.abs(M @ inv - np.eye(2)).max():
                    M, bit = -M, 1
            mats.append(M)
            bits.append(bit)
        return np.array(mats), tuple(bits)

    mats, bits = run(n_steps)
    change = float("nan")
    if check_refinement:
        fine, _ = run(2 * n_steps)
        change = float(np.abs(np.trace(fine, axis1=1, axis2=2)
                              - np.trace(mats, axis1=1, axis2=2)).max())
    res, sign = _relator(G, mats)
    rep = HolonomyRep(p, mats, bits, res, sign, change)
    if res > tol:
        raise HolonomyInconsistent(f"relator residual {res:.3e} exceeds {tol:.1e}")
    return rep


# ---------------------------------------------------------------- developing map

def _bilinear(X, Y):
    """Minkowski pairing on hermitian 2x2 matrices with <X, X> = -det X."""
    return -0.5 * (np.trace(X) * np.trace(Y) - np.trace(X @ Y)).real


@dataclass
class ImmersionReport:
    points: np.ndarray              # sample points in the disc
    h3: np.ndarray                  # (n, 3) upper half-space coordinates (x, y, height)
    first_form: np.ndarray          # (n, 2, 2)
    second_form: np.ndarray         # (n, 2, 2)
    expected_first: np.ndarray
    expected_second: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def first_form_error(self):
        scale = np.abs(self.expected_first).max(axis=(1, 2))
        return float((np.abs(self.first_form - self.expected_first).max(axis=(1, 2)) / scale).max())

    @property
    def second_form_error(self):
        return float(np.abs(self.second_form - self.expected_second).max())


def develop_immersion(H, B, samples, basepoint=0j, fd_h=1e-4, step=0.01):
    """Twisted harmonic section P = T^dag H T of the frame bundle, sampled.

    T is transported along a minimum spanning tree of the samples rooted at
    the basepoint (geodesic polylines with steps of about ``step``); first
    and second fundamental forms come from central differences of P in the
    hyperboloid model of positive unimodular hermitian matrices.
    """
    if B is None:
        B = flat_connection(H)
    pts = np.concatenate([[complex(basepoint)], np.asarray(samples, dtype=complex)])
    n = len(pts)
    dist = np.abs(pts[:, None] - pts[None, :])
    tree = minimum_spanning_tree(csr_matrix(dist))
    tree = tree + tree.T
    order, pred = breadth_first_order(tree, 0, directed=False, return_predecessors=True)
    T = {0: np.eye(2, dtype=complex)}
    for i in order[1:]:
        j = pred[i]
        m = max(2, int(np.ceil(abs(pts[i] - pts[j]) / step)))
        T[i] = transport(B, geodesic_path(pts[j], pts[i], m)) @ T[j]

    def P_at(z, Tz):
        Hm = B.bundle_metric(z)
        return Tz.conj().T @ Hm @ Tz

    offs = {"x": 1.0, "y": 1j}
    h3, I_out, II_out, I_exp, II_exp = [], [], [], [], []
    for i in range(1, n):
        z, Tz = pts[i], T[i]

        def P_shift(d):
            if d == 0:
                return P_at(z, Tz)
            return P_at(z + d, transport(B, [z, z + d / 2, z + d]) @ Tz)

        P0 = P_shift(0)
        if not np.all(np.isfinite(P0)):
            raise DevelopingMapError(f"frame diverged at {z}")
        h = fd_h
        dP = {k: (P_shift(h * v) - P_shift(-h * v)) / (2 * h) for k, v in offs.items()}
        ddP = {}
        for k, v in offs.items():
            ddP[k + k] = (P_shift(h * v) - 2 * P0 + P_shift(-h * v)) / h ** 2
        ddP["xy"] = (P_shift(h * (1 + 1j)) - P_shift(h * (1 - 1j))
                     - P_shift(h * (-1 + 1j)) + P_shift(-h * (1 + 1j))) / (4 * h * h)
        Hm = B.bundle_metric(z)
        # unit normal, oriented so that the second fundamental form is +Re sigma
        N = Tz.conj().T @ Hm @ np.diag([-1.0, 1.0]) @ Tz
        I = np.array([[_bilinear(dP[a], dP[b]) for b in "xy"] for a in "xy"])
        II = np.array([[_bilinear(ddP["xx"], N), _bilinear(ddP["xy"], N)],
                       [_bilinear(ddP["xy"], N), _bilinear(ddP["yy"], N)]])
        lam, _, f = B.higgs.fields(z)
        I_out.append(I)
        II_out.append(II)
        I_exp.append(lam * lam * np.eye(2))
        II_exp.append(_hmat(f))
        w = P0[0, 1] / P0[1, 1].real
        h3.append((w.real, w.imag, 1 / P0[1, 1].real))
    return ImmersionReport(pts[1:], np.array(h3), np.array(I_out), np.array(II_out),
                           np.array(I_exp), np.array(II_exp))
