"""Gauss-equation solver and moment-map evaluators on the Bolza surface.

A germ is stored relative to the hyperbolic background g0 = lambda0^2|dz|^2:
g = e^{2u} g0 and sigma = f dz^2, so that |sigma|_g = |f| e^{-2u} / lambda0^2.
The equation K_g + |t sigma|_g^2 = -1 becomes

    F(u) = Delta_0 u - 1 + e^{2u} + t^2 |sigma|_0^2 e^{-2u} = 0

with Delta_0 the positive cotangent Laplacian of g0.
"""

import io
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from . import surface
from .errors import (ConfigError, ContinuationStall, InvalidState,
                     LeavesAlmostFuchsianRegime, NewtonDivergence, OutsideDiscBundle)
from .surface import QuadDiffField

# when continuation stalls with a positivity margin below this, the path is
# running into |t sigma|_g = 1 rather than failing numerically
REGIME_MARGIN = 0.05


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-10
    max_newton_iters: int = 30
    dt_init: float = 0.25
    dt_min: float = 1e-4
    cg_tol: float = 1e-12
    fd_h: float = 1e-6

    def __post_init__(self):
        for name in ("newton_tol", "max_newton_iters", "dt_init", "dt_min", "cg_tol", "fd_h"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and np.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive, got {v!r}")
        if self.newton_tol < np.finfo(float).eps * 1e3:
            raise ConfigError("newton_tol below 1e3 machine epsilons")
        if self.dt_min > self.dt_init:
            raise ConfigError("dt_min exceeds dt_init")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown solver options {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class TraceRecord:
    t: float
    iters: int
    residual: float
    max_sigma_norm: float
    positivity_margin: float


@dataclass
class ContinuationTrace:
    records: list = field(default_factory=list)

    def append(self, rec):
        if self.records and not rec.t > self.records[-1].t:
            raise InvalidState("continuation parameter must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self):
        buf = io.StringIO()
        buf.write("t,iters,residual,max_sigma_norm,positivity_margin\n")
        for r in self.records:
            buf.write(f"{r.t:.17g},{r.iters},{r.residual:.17g},"
                      f"{r.max_sigma_norm:.17g},{r.positivity_margin:.17g}\n")
        return buf.getvalue()


@dataclass
class GermPair:
    mesh: object
    u: np.ndarray
    sigma: QuadDiffField
    t: float = 1.0

    @property
    def lam(self):
        return self.mesh.lambda0_classes * np.exp(self.u)

    @property
    def f(self):
        """Samples of t*sigma at the class representatives."""
        return self.t * _f_samples(self.mesh, self.sigma)

    def sigma_norm(self):
        return np.abs(self.f) / self.lam ** 2


# ---------------------------------------------------------------- helpers

def _f_samples(mesh, sigma):
    if sigma is None:
        return np.zeros(mesh.n_classes, dtype=complex)
    if isinstance(sigma, QuadDiffField):
        return sigma.sample(mesh)
    if callable(sigma):
        return np.asarray(sigma(mesh.class_positions), dtype=complex)
    return np.asarray(sigma, dtype=complex)


def _s0sq(mesh, sigma):
    """|sigma|^2_{g0} per class."""
    return np.abs(_f_samples(mesh, sigma)) ** 2 / mesh.lambda0_classes ** 4


def _check_u(u):
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise InvalidState("conformal factor is not positive and finite")
    return u


def sigma_norm_t(u, s0sq, t):
    """|t sigma|_{g_t} from |sigma|_0^2 samples."""
    return t * np.sqrt(s0sq) * np.exp(-2 * u)


def positivity_margin(u, s0sq, t):
    return float(np.min(1 - sigma_norm_t(u, s0sq, t) ** 2))


# ---------------------------------------------------------------- Gauss equation

def residual_gauss(mesh, u, sigma, t=1.0):
    u = _check_u(u)
    s0sq = _s0sq(mesh, sigma)
    return mesh.stiffness @ u / mesh.mass - 1 + np.exp(2 * u) + t * t * s0sq * np.exp(-2 * u)


def _potential(u, s0sq, t):
    return 2 * np.exp(2 * u) - 2 * t * t * s0sq * np.exp(-2 * u)


def linearized_matrix(mesh, u, s0sq, t):
    """Mass-weighted linearization M L_u: symmetric, sparse."""
    return (mesh.stiffness + sparse.diags(mesh.mass * _potential(u, s0sq, t))).tocsr()


def linearized_apply(mesh, u, sigma, t, xi):
    u = _check_u(u)
    s0sq = _s0sq(mesh, sigma)
    margin = positivity_margin(u, s0sq, t)
    if margin <= 0:
        raise LeavesAlmostFuchsianRegime(f"positivity margin {margin:.3g} <= 0", last_good_t=None)
    xi = np.asarray(xi)
    return mesh.stiffness @ xi / mesh.mass + _potential(u, s0sq, t) * xi


def inner(mesh, a, b):
    """Discrete L2(g0) pairing."""
    return float(np.sum(mesh.mass * a * b))


def newton_solve(mesh, u0, sigma, t, cfg=SolverConfig(), history=None):
    """Newton iteration for F(u) = 0 at fixed t.

    Returns (u, iterations).  ``history`` (a list) receives the residual
    sup-norm before each step and after the last one.
    """
    s0sq = _s0sq(mesh, sigma)
    u = _check_u(u0).copy()
    for it in range(cfg.max_newton_iters + 1):
        F = mesh.stiffness @ u / mesh.mass - 1 + np.exp(2 * u) + t * t * s0sq * np.exp(-2 * u)
        r = float(np.abs(F).max())
        if history is not None:
            history.append(r)
        if not np.isfinite(r):
            raise NewtonDivergence("residual is not finite")
        if r < cfg.newton_tol:
            return u, it
        if it == cfg.max_newton_iters:
            break
        margin = positivity_margin(u, s0sq, t)
        if margin <= 0:
            raise LeavesAlmostFuchsianRegime(f"Newton iterate left the regime at t={t}")
        A = linearized_matrix(mesh, u, s0sq, t)
        b = -mesh.mass * F
        # preconditioned by the diagonal; A is SPD when margin > 0
        Dinv = sparse.diags(1 / A.diagonal())
        du, info = cg(A, b, rtol=cfg.cg_tol, atol=0.0, maxiter=20 * len(u), M=Dinv)
        if info != 0:
            raise NewtonDivergence(f"conjugate gradients did not converge (info={info})")
        u = u + du
    raise NewtonDivergence(f"no convergence in {cfg.max_newton_iters} iterations, residual {r:.3g}")


def continuation_solve(mesh, sigma, cfg=SolverConfig(), schedule=None):
    """Track u_t from t = 0 (u = 0) to t = 1.

    With ``schedule`` (increasing t values ending at 1) the steps are fixed;
    otherwise dt adapts: halved on Newton failure, doubled after a step that
    needed at most three iterations.
    """
    s0sq = _s0sq(mesh, sigma)
    trace = ContinuationTrace()
    u = np.zeros(mesh.n_classes)
    if not np.any(s0sq):
        trace.append(TraceRecord(1.0, 0, 0.0, 0.0, 1.0))
        return GermPair(mesh, u, sigma, 1.0), trace

    def record(t, iters):
        F = residual_gauss(mesh, u, sigma, t)
        s = sigma_norm_t(u, s0sq, t)
        trace.append(TraceRecord(t, iters, float(np.abs(F).max()), float(s.max()),
                                 float(1 - s.max())))

    def regime_error(t_fail, why):
        last = trace.records[-1].t if trace.records else 0.0
        return LeavesAlmostFuchsianRegime(
            f"|t sigma|_g reached 1 near t={t_fail:.6g} ({why})", last_good_t=last, trace=trace)

    if schedule is not None:
        ts = [float(t) for t in schedule]
        if any(b <= a for a, b in zip(ts, ts[1:])) or ts[-1] != 1.0 or ts[0] <= 0:
            raise ConfigError("schedule must increase strictly within (0, 1] and end at 1")
        for t in ts:
            try:
                u, it = newton_solve(mesh, u, sigma, t, cfg)
            except LeavesAlmostFuchsianRegime as e:
                raise regime_error(t, str(e)) from e
            record(t, it)
        return GermPair(mesh, u, sigma, 1.0), trace

    t, dt = 0.0, cfg.dt_init
    while t < 1.0:
        t_new = min(1.0, t + dt)
        try:
            u_new, it = newton_solve(mesh, u, sigma, t_new, cfg)
            ok = positivity_margin(u_new, s0sq, t_new) > 0
        except (NewtonDivergence, LeavesAlmostFuchsianRegime):
            ok = False
        if not ok:
            dt /= 2
            if dt < cfg.dt_min:
                margin = positivity_margin(u, s0sq, t)
                if margin < REGIME_MARGIN:
                    raise regime_error(t_new, f"margin {margin:.3g}")
                raise ContinuationStall(f"step size underflow at t={t:.6g}", last_good_t=t,
                                        trace=trace)
            continue
        u, t = u_new, t_new
        record(t, it)
        if it <= 3:
            dt *= 2
    return GermPair(mesh, u, sigma, 1.0), trace


# ---------------------------------------------------------------- rescaling

def rescale_pair(lam_d, f):
    """(g, sigma) -> ((1 + sqrt(1 - |sigma|_g^2)) g, sigma), on length densities."""
    lam_d = np.asarray(lam_d, dtype=float)
    s = np.abs(f) / lam_d ** 2
    if np.any(s >= 1):
        raise OutsideDiscBundle("|sigma|_g >= 1")
    return lam_d * np.sqrt(1 + np.sqrt(1 - s * s))


def unrescale_pair(lam, f):
    """Inverse of rescale_pair: the conformal factor is (1 + |sigma|_g^2) / 2."""
    lam = np.asarray(lam, dtype=float)
    s = np.abs(f) / lam ** 2
    if np.any(s >= 1):
        raise OutsideDiscBundle("|sigma|_g >= 1")
    return lam * np.sqrt((1 + s * s) / 2)


# ---------------------------------------------------------------- moment maps

def coupling_constant(mesh, lam):
    """c = 2 pi chi / vol."""
    return 2 * np.pi * mesh.euler_characteristic() / surface.total_area(mesh, lam)


def _lam_classes(mesh, lam):
    if callable(lam):
        lam = lam(mesh.class_positions)
    return np.asarray(lam, dtype=float)


def _sigma_jet(mesh, sigma):
    """(f, f_z, f_zbar) per class from stencils on the samples."""
    if isinstance(sigma, QuadDiffField) or not callable(sigma):
        f = _f_samples(mesh, sigma)
        fz, fzb = mesh.grad(f, (2, 0))
    else:
        f = np.asarray(sigma(mesh.class_positions), dtype=complex)
        fz, fzb = mesh.grad_of_function(sigma)
    return f, fz, fzb


def _h(f, lam):
    h = np.abs(f) ** 2 / lam ** 4
    if np.any(h >= 1):
        raise OutsideDiscBundle("|sigma|_g >= 1")
    return h


def mu1_form(mesh, lam, sigma, method="cotan", c=-2.0):
    """Density of the first moment map against rho = dvol_g (full form).

    c is the genus-2 constant for area 2 pi; coupling_constant gives the
    value for the actual discrete area.

    (|d sigma|^2 - |dbar sigma|^2) / sqrt(1 - h) - 2 sqrt(1 - h) K
        - Delta sqrt(1 - h) + 2c,   h = |sigma|_g^2.
    """
    lam = _lam_classes(mesh, lam)
    f, fz, fzb = _sigma_jet(mesh, sigma)
    h = _h(f, lam)
    u = np.log(lam / mesh.lambda0_classes)
    dlog = surface.dz_log_lambda0(mesh.class_positions) + mesh.grad(u)[0]
    d_sq = np.abs(fz - 4 * f * dlog) ** 2 / lam ** 6
    db_sq = np.abs(fzb) ** 2 / lam ** 6
    r = np.sqrt(1 - h)
    K = surface.gauss_curvature(mesh, lam, method)
    return (d_sq - db_sq) / r - 2 * r * K - surface.laplace_beltrami(mesh, lam, r, method) + 2 * c


def mu1_form_simplified(mesh, lam, sigma, method="cotan", c=-2.0):
    """-(2K + Delta log(1 + sqrt(1 - h))) + 2c, valid for holomorphic sigma."""
    lam = _lam_classes(mesh, lam)
    h = _h(_f_samples(mesh, sigma), lam)
    K = surface.gauss_curvature(mesh, lam, method)
    w = np.log1p(np.sqrt(1 - h))
    return -2 * K - surface.laplace_beltrami(mesh, lam, w, method) + 2 * c


def mu23_form(mesh, lam, sigma):
    """Density of mu2 + i mu3 = 2i dbar r(dbar sigma) against rho.

    With r(dbar sigma) = a dz, a = f_zbar / lambda^2, the 2-form is
    2i a_zbar dzbar^dz = -4 a_zbar dx^dy.
    """
    lam = _lam_classes(mesh, lam)
    _, _, fzb = _sigma_jet(mesh, sigma)
    a = surface.r_contraction(lam, fzb)
    _, a_zb = mesh.grad(a, (1, 0))
    return -4 * a_zb / lam ** 2


# ---------------------------------------------------------------- functionals

def area_functional(mesh, lam=None, sigma=None, form="metric"):
    """vol(Sigma, g), or for form="Ms" the integral of (1 + sqrt(1 - h)) rho."""
    if form == "metric":
        return surface.total_area(mesh, lam)
    if form != "Ms":
        raise ValueError(f"unknown area form {form!r}")
    lam = mesh.lambda0_classes if lam is None else _lam_classes(mesh, lam)
    h = _h(_f_samples(mesh, sigma), lam)
    rho = mesh.mass * (lam / mesh.lambda0_classes) ** 2
    return float(np.sum(rho * (1 + np.sqrt(1 - h))))


def wp_pairing(mesh, sigma1, sigma2):
    """Integral of conj(f1) f2 / lambda0^2 dx dy (hyperbolic background)."""
    f1, f2 = _f_samples(mesh, sigma1), _f_samples(mesh, sigma2)
    return complex(np.sum(mesh.mass * np.conj(f1) * f2 / mesh.lambda0_classes ** 4))
