"""Hyperbolic plane (half-plane and disc models), hyperbolic 3-space, and
the Moebius actions of SL(2,R), SU(1,1) and SL(2,C).

Matrices are plain ``(2, 2)`` complex numpy arrays.  Nothing is
projectivized; callers compare up to sign where PSL is meant.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import DegenerateAction, InvalidGroupElement, ModelMismatch

DET_TOL = 1e-12
REAL_TOL = 1e-12

HALF_PLANE = "half-plane"
DISC = "disc"

# Cayley matrix: half-plane -> disc, i -> 0.  Normalized to det 1.
CAYLEY = np.array([[1.0, -1j], [1.0, 1j]]) / np.sqrt(2j)
CAYLEY_INV = np.linalg.inv(CAYLEY)


@dataclass(frozen=True)
class H2Point:
    z: complex
    model: str = HALF_PLANE

    def __post_init__(self):
        object.__setattr__(self, "z", complex(self.z))
        if self.model == HALF_PLANE:
            if not self.z.imag > 0:
                raise ValueError(f"half-plane point needs Im z > 0, got {self.z}")
        elif self.model == DISC:
            if not abs(self.z) < 1:
                raise ValueError(f"disc point needs |z| < 1, got {self.z}")
        else:
            raise ValueError(f"unknown model {self.model!r}")


@dataclass(frozen=True)
class H3Point:
    z: complex
    y: float

    def __post_init__(self):
        object.__setattr__(self, "z", complex(self.z))
        object.__setattr__(self, "y", float(self.y))
        if not self.y > 0:
            raise ValueError(f"H3 point needs y > 0, got {self.y}")


def as_mat2(A):
    A = np.asarray(A, dtype=complex)
    if A.shape != (2, 2):
        raise InvalidGroupElement(f"expected a 2x2 matrix, got shape {A.shape}")
    return A


def is_special(A, tol=DET_TOL):
    return abs(np.linalg.det(as_mat2(A)) - 1) <= tol


def is_real(A, tol=REAL_TOL):
    return np.abs(as_mat2(A).imag).max() <= tol


def is_su11(A, tol=1e-10):
    A = as_mat2(A)
    a, b, c, d = A.ravel()
    return (is_special(A, tol) and abs(d - np.conj(a)) <= tol
            and abs(c - np.conj(b)) <= tol)


def check_special(A, tol=DET_TOL):
    A = as_mat2(A)
    if not is_special(A, tol):
        raise InvalidGroupElement(f"det = {np.linalg.det(A)} is not 1")
    return A


def check_real_special(A, tol=DET_TOL):
    A = check_special(A, tol)
    if not is_real(A):
        raise InvalidGroupElement("matrix is not real")
    return A


def check_traceless(xi, tol=1e-12):
    xi = as_mat2(xi)
    if abs(np.trace(xi)) > tol:
        raise InvalidGroupElement("Lie algebra element is not traceless")
    return xi


def mobius(A, z):
    """Vectorized (az+b)/(cz+d), no validation."""
    a, b, c, d = np.asarray(A).ravel()
    return (a * z + b) / (c * z + d)


def mobius_deriv(A, z):
    """Derivative 1/(cz+d)^2 of a unimodular Moebius map."""
    c, d = np.asarray(A).ravel()[2:]
    return 1.0 / (c * z + d) ** 2


def to_disc_matrix(A):
    """SL(2,R) -> SU(1,1) by Cayley conjugation."""
    return CAYLEY @ as_mat2(A) @ CAYLEY_INV


def to_half_plane_matrix(A):
    return CAYLEY_INV @ as_mat2(A) @ CAYLEY


def act_h2(A, p):
    if p.model == HALF_PLANE:
        A = check_special(A)
        if not is_real(A):
            if is_su11(A):
                raise ModelMismatch("SU(1,1) matrix applied to a half-plane point")
            raise InvalidGroupElement("matrix is not real")
        z = mobius(A.real, p.z)
        if not z.imag > 0:
            raise DegenerateAction("image left the half-plane")
        return H2Point(z, HALF_PLANE)
    A = check_special(A)
    if not is_su11(A):
        if is_real(A):
            raise ModelMismatch("SL(2,R) matrix applied to a disc point")
        raise InvalidGroupElement("matrix is not in SU(1,1)")
    return H2Point(mobius(A, p.z), DISC)


def act_h3(A, p):
    A = check_special(A)
    a, b, c, d = A.ravel()
    q = c * p.z + d
    D = abs(q) ** 2 + abs(c) ** 2 * p.y ** 2
    if not D > 0:
        raise DegenerateAction("vanishing denominator in the H3 action")
    z = ((a * p.z + b) * np.conj(q) + a * np.conj(c) * p.y ** 2) / D
    return H3Point(z, p.y / D)


def dist_h2(p, q):
    if p.model != q.model:
        raise ModelMismatch("points live in different models")
    if p.model == DISC:
        p, q = cayley(p), cayley(q)
    # arccosh(1 + x) written to keep precision for nearby points
    x = abs(p.z - q.z) ** 2 / (2 * p.z.imag * q.z.imag)
    return float(np.log1p(x + np.sqrt(x * (x + 2))))


def dist_h3(p, q):
    x = (abs(p.z - q.z) ** 2 + (p.y - q.y) ** 2) / (2 * p.y * q.y)
    return float(np.log1p(x + np.sqrt(x * (x + 2))))


def cayley(p):
    """Swap models: half-plane <-> disc (i <-> 0)."""
    if p.model == HALF_PLANE:
        return H2Point(mobius(CAYLEY, p.z), DISC)
    return H2Point(mobius(CAYLEY_INV, p.z), HALF_PLANE)


def exp_sl2(xi, t=1.0):
    return expm(t * check_traceless(xi))


def infinitesimal_h2(xi, z):
    """Vector field of exp(t xi) on the half-plane: b + 2az - cz^2."""
    a, b, c = xi[0][0], xi[0][1], xi[1][0]
    return b + 2 * a * z - c * z * z


def random_sl2r(rng, scale=1.0):
    """Random real unimodular matrix exp(X) for Gaussian traceless X."""
    a, b, c = rng.normal(scale=scale, size=3)
    return expm(np.array([[a, b], [c, -a]]))


def random_sl2c(rng, scale=1.0):
    v = rng.normal(scale=scale, size=6)
    X = np.array([[v[0] + 1j * v[1], v[2] + 1j * v[3]],
                  [v[4] + 1j * v[5], -v[0] - 1j * v[1]]])
    return expm(X)
