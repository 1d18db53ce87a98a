"""The disc bundle X = {(z, w) : |w| Im z < 1} over the half-plane.

Real coordinates on X are ordered (x, y, u, v) with z = x + iy and
w = u + iv.  Tangent vectors are either real 4-vectors in that order or
``FiberTangent(dz, dw)`` pairs of complex numbers.

Conventions, all pinned by tests:

* metric ``G``: a term ``da_bar db`` evaluates on tangent pairs as
  ``conj(a1) b2 + b1 conj(a2)``;
* Kaehler forms: ``omega_1(a, b) = g(J_1 a, b)`` with ``J_1`` multiplication
  by i, ``omega_2 + i omega_3 = dz ^ dw``;
* complex structures: ``g = omega_i(., J_i .)``, i.e. ``J_i = Omega_i^{-1} G``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from . import mobius
from .errors import NearBoundary, NotATangentVector, OutsideDiscBundle, OutsideHalfPlane

BOUNDARY_GUARD = 1e-9
FD_STEP = 1e-5

J0 = np.array([[0.0, -1.0], [1.0, 0.0]])
OMEGA0 = np.array([[0.0, 1.0], [-1.0, 0.0]])  # omega_0(a, b) = a^T OMEGA0 b

# real basis (e_x, e_y, e_u, e_v) -> complex (dz, dw)
_BASIS = np.array([[1, 0], [1j, 0], [0, 1], [0, 1j]])

OMEGA2 = np.zeros((4, 4))
OMEGA2[0, 2], OMEGA2[1, 3] = 1.0, -1.0
OMEGA2 = OMEGA2 - OMEGA2.T
OMEGA3 = np.zeros((4, 4))
OMEGA3[0, 3], OMEGA3[1, 2] = 1.0, 1.0
OMEGA3 = OMEGA3 - OMEGA3.T

J1 = np.zeros((4, 4))
J1[1, 0], J1[0, 1], J1[3, 2], J1[2, 3] = 1.0, -1.0, 1.0, -1.0


@dataclass(frozen=True)
class FiberPoint:
    z: complex
    w: complex

    def __post_init__(self):
        object.__setattr__(self, "z", complex(self.z))
        object.__setattr__(self, "w", complex(self.w))
        if not self.z.imag > 0:
            raise OutsideHalfPlane(f"Im z must be positive, got {self.z}")
        if not self.r < 1:
            raise OutsideDiscBundle(f"|w| Im z = {self.r} >= 1")

    @property
    def r(self):
        return abs(self.w) * self.z.imag

    def coords(self):
        return np.array([self.z.real, self.z.imag, self.w.real, self.w.imag])

    @classmethod
    def from_coords(cls, c):
        return cls(c[0] + 1j * c[1], c[2] + 1j * c[3])


@dataclass(frozen=True)
class FiberTangent:
    dz: complex
    dw: complex

    def coords(self):
        return np.array([self.dz.real, self.dz.imag, self.dw.real, self.dw.imag])


@dataclass(frozen=True)
class HKFrame:
    G: np.ndarray
    Omega: tuple
    J: tuple
    H: float


def _z_of(p):
    z = p.z if isinstance(p, (mobius.H2Point, FiberPoint)) else complex(p)
    if isinstance(p, mobius.H2Point) and p.model != mobius.HALF_PLANE:
        raise OutsideHalfPlane("j_of expects a half-plane point")
    if not z.imag > 0:
        raise OutsideHalfPlane(f"Im z must be positive, got {z}")
    return z


# ---------------------------------------------------------------- linear algebra on R^2

def j_of(p):
    z = _z_of(p)
    x, y = z.real, z.imag
    return np.array([[x / y, -(x * x + y * y) / y], [1 / y, -x / y]])


def dj(p, zhat):
    """Derivative of j at z in the direction zhat (a complex number)."""
    z = _z_of(p)
    x, y = z.real, z.imag
    djx = np.array([[1 / y, -2 * x / y], [0.0, -1 / y]])
    djy = np.array([[-x / y ** 2, -1 + x * x / y ** 2], [-1 / y ** 2, x / y ** 2]])
    return zhat.real * djx + zhat.imag * djy


def is_complex_structure(J, tol=1e-12):
    J = np.asarray(J, dtype=float)
    return (np.abs(J @ J + np.eye(2)).max() <= tol
            and np.array([1.0, 0.0]) @ OMEGA0 @ J @ np.array([1.0, 0.0]) > 0)


def hermitian_matrix(J):
    """Matrix M with h_J(v, w) = v^T M w."""
    return OMEGA0 @ np.asarray(J) + 1j * OMEGA0


def hermitian_h(J, v, w):
    return complex(np.asarray(v) @ hermitian_matrix(J) @ np.asarray(w))


def _zw(p):
    if isinstance(p, FiberPoint):
        return p.z, p.w
    z, w = p
    z = complex(z)
    if not z.imag > 0:
        raise OutsideHalfPlane(f"Im z must be positive, got {z}")
    return z, complex(w)


def q_of(p):
    """Quadratic form of (z, w); also accepts a raw (z, w) pair off X."""
    z, w = _zw(p)
    zb, wb = np.conj(z), np.conj(w)
    return np.array([[wb, -zb * wb], [-zb * wb, zb * zb * wb]])


def qform_of_tangent(J, Jhat, tol=1e-10):
    J, Jhat = np.asarray(J, float), np.asarray(Jhat, float)
    if np.abs(J @ Jhat + Jhat @ J).max() > tol:
        raise NotATangentVector("Jhat does not anticommute with J")
    return Jhat.T @ hermitian_matrix(J)


def tangent_norm(Jhat):
    return float(np.sqrt(0.5 * np.trace(np.asarray(Jhat) @ np.asarray(Jhat))))


def qform_norm(J, Q, v=(1.0, 0.0)):
    v = np.asarray(v, float)
    return float(abs(v @ Q @ v) / hermitian_h(J, v, v).real)


def duality_pair(p, zhat, v=(1.0, 0.0)):
    """<q(z, w), dj(z) zhat> evaluated with the test vector v."""
    v = np.asarray(v, float)
    z, _ = _zw(p)
    J = j_of(z)
    Jhat = dj(z, complex(zhat))
    return complex((Jhat @ v) @ q_of(p) @ v / hermitian_h(J, v, v))


# ---------------------------------------------------------------- hyperkaehler structure

def _check(p):
    if p.r > 1 - BOUNDARY_GUARD:
        raise NearBoundary(f"r = {p.r} too close to 1")


def metric_matrix(c):
    """Real 4x4 metric at coordinates c = (x, y, u, v); no validation."""
    x, y, u, v = c
    wb = u - 1j * v
    s = np.sqrt(1 - y * y * (u * u + v * v))
    gzz = 1 / (2 * y * y * s)
    gww = y * y / (2 * s)
    gzw = 1j * y * wb / (2 * s)
    M = np.array([[gzz, gzw], [np.conj(gzw), gww]])
    return 2 * np.real(np.conj(_BASIS) @ M @ _BASIS.T)


def omega1_matrix(c):
    return -metric_matrix(c) @ J1


def omega_matrices(c):
    return (omega1_matrix(c), OMEGA2, OMEGA3)


def hk_frame(p):
    _check(p)
    c = p.coords()
    G = metric_matrix(c)
    Om = omega_matrices(c)
    Js = tuple(np.linalg.solve(O, G) for O in Om)
    return HKFrame(G=G, Omega=Om, J=Js, H=s1_hamiltonian(p))


def hk_algebra_residual(frame):
    """Largest quaternion / compatibility defect of an HKFrame."""
    J1_, J2_, J3_ = frame.J
    I = np.eye(4)
    res = [np.abs(J @ J + I).max() for J in frame.J]
    res += [np.abs(J1_ @ J2_ - J3_).max(), np.abs(J2_ @ J3_ - J1_).max(),
            np.abs(J3_ @ J1_ - J2_).max()]
    res += [np.abs(O @ J - frame.G).max() for O, J in zip(frame.Omega, frame.J)]
    return float(max(res))


def s1_hamiltonian(p):
    return float(np.sqrt(1 - p.r ** 2))


def s1_hamiltonian_grad(c):
    x, y, u, v = c
    s = np.sqrt(1 - y * y * (u * u + v * v))
    return np.array([0.0, -y * (u * u + v * v), -y * y * u, -y * y * v]) / s


def s1_vector_field(p):
    """Rotation of the fibres, the flow generated by H."""
    return FiberTangent(0.0, 1j * p.w)


# ---------------------------------------------------------------- group action, moment maps

def act_X(A, p):
    A = mobius.check_real_special(A).real
    a, b, c, d = A.ravel()
    q = c * p.z + d
    return FiberPoint((a * p.z + b) / q, q * q * p.w)


def infinitesimal_X(xi, p):
    """Generator of exp(t xi) acting on X, as a FiberTangent."""
    a, c = xi[0][0], xi[1][0]
    return FiberTangent(mobius.infinitesimal_h2(xi, p.z), 2 * (c * p.z - a) * p.w)


def mu1_fiber(p, xi):
    xi = np.real(mobius.check_traceless(xi))
    return float(-np.sqrt(1 - p.r ** 2) * np.trace(j_of(p) @ xi))


def mu23_fiber(p, xi):
    z, w = _zw(p)
    xi = np.real(mobius.check_traceless(xi))
    return complex(w * mobius.infinitesimal_h2(xi, z))


def moment_maps(p, xi):
    m23 = mu23_fiber(p, xi)
    return np.array([mu1_fiber(p, xi), m23.real, m23.imag])


# ---------------------------------------------------------------- Hodge map

def hodge_alpha(p):
    z, w = _zw(p)
    x, y = z.real, z.imag
    u, v = w.real, w.imag
    if abs(w) * y >= 1:
        raise OutsideDiscBundle(f"r = {abs(w) * y} >= 1")
    g = np.sqrt(1 - y * y * (u * u + v * v))
    zp = x + y * y * v / (1 - y * u) + 1j * y * g / (1 - y * u)
    zm = x - y * y * v / (1 + y * u) + 1j * y * g / (1 + y * u)
    return mobius.H2Point(zp), mobius.H2Point(zm)


# ---------------------------------------------------------------- finite-difference checks

def _central_jacobian(F, c, h, order=2):
    cols = []
    for k in range(len(c)):
        e = np.zeros(len(c))
        e[k] = h
        if order == 2:
            cols.append((F(c + e) - F(c - e)) / (2 * h))
        else:
            cols.append((F(c - 2 * e) - 8 * F(c - e) + 8 * F(c + e) - F(c + 2 * e)) / (12 * h))
    return np.stack(cols, axis=-1)


def closedness_residual(p, h=FD_STEP):
    """max |d omega_1| over coordinate triples, by central differences."""
    c = p.coords()
    D = _central_jacobian(omega1_matrix, c, h)  # D[b, c, a] = d_a Omega_bc
    res = 0.0
    for a in range(4):
        for b in range(a + 1, 4):
            for k in range(b + 1, 4):
                val = D[b, k, a] + D[k, a, b] + D[a, b, k]
                res = max(res, abs(val))
    return float(res)


def _hamiltonian_c(c):
    x, y, u, v = c
    return np.sqrt(1 - y * y * (u * u + v * v))


def potential_residual(p, h=FD_STEP, which=2):
    """max |d(dH o J_i) - Omega_i|, i = 2 or 3, by numerical differentiation.

    dH is taken with a complex step of size h (truncation O(h^2), no
    cancellation) and the outer d by central differences.  dH o J_i is
    linear in the fibre coordinates, so the O(h^2) term comes from dH.
    """
    O = OMEGA2 if which == 2 else OMEGA3

    def beta(c):
        grad = np.array([_hamiltonian_c(c + 1j * h * e).imag / h for e in np.eye(4)])
        return grad @ np.linalg.solve(O, metric_matrix(c))

    D = _central_jacobian(beta, p.coords(), h)  # D[b, a] = d_a beta_b
    return float(np.abs(D.T - D - O).max())


def moment_residual(p, xi, direction, h=FD_STEP):
    """|d<mu_i, xi>[v] - Omega_i(L xi, v)| for i = 1, 2, 3."""
    xi = np.asarray(xi, dtype=float)
    c, v = p.coords(), np.asarray(direction, float)
    dmu = (moment_maps(FiberPoint.from_coords(c + h * v), xi)
           - moment_maps(FiberPoint.from_coords(c - h * v), xi)) / (2 * h)
    L = (act_X(expm(h * xi), p).coords() - act_X(expm(-h * xi), p).coords()) / (2 * h)
    om = omega_matrices(c)
    return np.abs(dmu - np.array([L @ O @ v for O in om]))


def intertwining_residual(p, h=FD_STEP, order=4):
    """max |d alpha o J_2 - (i, -i) o d alpha| with d alpha by central
    differences of the given order (2 or 4).  Near r = 1 the second-order
    truncation error of alpha grows like (1 - r^2)^(-5/2)."""

    def alpha_c(c):
        a, b = hodge_alpha(FiberPoint.from_coords(c))
        return np.array([a.z, b.z])

    c = p.coords()
    D = _central_jacobian(alpha_c, c, h, order)
    J2 = np.linalg.solve(OMEGA2, metric_matrix(c))
    return float(np.abs(D @ J2 - np.diag([1j, -1j]) @ D).max())


def random_fiber_points(rng, n, r_max=0.9, x_range=(-1.0, 1.0), y_range=(0.5, 2.0)):
    """Seeded points of X with r < r_max on unit-scale coordinates."""
    x = rng.uniform(x_range[0], x_range[1], n)
    y = np.exp(rng.uniform(np.log(y_range[0]), np.log(y_range[1]), n))
    r = r_max * np.sqrt(rng.uniform(0, 1, n))
    th = rng.uniform(0, 2 * np.pi, n)
    w = r / y * np.exp(1j * th)
    return [FiberPoint(x[k] + 1j * y[k], w[k]) for k in range(n)]
