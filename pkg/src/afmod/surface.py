"""The Bolza surface: a genus-2 Fuchsian octagon group in the disc model,
holomorphic quadratic differentials from Poincare series, a triangulated
fundamental octagon and discrete operators on it.

All fields live in the single disc chart restricted to the octagon.  A
scalar (weight-0) field has one value per identified vertex class.  A
field F of weight (p, q) obeys ``F(m z) m'(z)^p conj(m'(z))^q = F(z)`` for
m in the group: quadratic differentials are (2, 0), the length density
of a conformal metric is (1/2, 1/2) in absolute value.

Discrete operators are intrinsic: each triangle is flattened with its
hyperbolic edge lengths, so every stencil is invariant under the side
pairings and boundary vertices need no special treatment.
"""

import json
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from . import mobius
from .errors import (EnumerationOverflow, GroupConstructionError,
                     MeshIdentificationError, MeshQualityError,
                     TruncationInsufficient)

COSH_HALF_LENGTH = 1 + np.sqrt(2)                      # |tr gamma_k| / 2
CIRCUMRADIUS = float(np.arccosh(COSH_HALF_LENGTH ** 2))  # d(0, octagon vertex)
VERTEX_RADIUS = float(np.tanh(CIRCUMRADIUS / 2))       # Euclidean radius of the corners
SIDE_RADIUS = float(np.tanh(np.arccosh(COSH_HALF_LENGTH) / 2))
RELATOR_WORD = (0, 3, 6, 1, 4, 7, 2, 5)
MAX_WORD_LEN = 16
DEFAULT_MAX_ELEMENTS = 2_000_000
DEFAULT_SERIES_RADIUS = 13.0
SNAP_TOL = 1e-8

# dedup grid in the image of the origin; distinct elements are ~1e-6 apart
# out to displacement 14, equal ones agree to ~1e-13
_KEY_CELL = 1e-10
_KEY_SHIFTS = ((0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.5, 0.5))


# ---------------------------------------------------------------- group

@dataclass(frozen=True)
class FuchsianGroup:
    generators: np.ndarray
    relator_word: tuple = RELATOR_WORD
    genus: int = 2

    @staticmethod
    def inverse_index(k):
        return (k + 4) % 8

    def relator_product(self):
        P = np.eye(2, dtype=complex)
        for k in self.relator_word:
            P = P @ self.generators[k]
        return P

    def relator_residual(self):
        P = self.relator_product()
        I = np.eye(2)
        return float(min(np.abs(P - I).max(), np.abs(P + I).max()))


def _rotation(theta):
    return np.diag([np.exp(0.5j * theta), np.exp(-0.5j * theta)])


def build_bolza_group():
    c = COSH_HALF_LENGTH
    s = np.sqrt(c * c - 1)
    T = np.array([[c, s], [s, c]], dtype=complex)
    gens = []
    for k in range(8):
        R = _rotation(k * np.pi / 4)
        gens.append(R @ T @ np.linalg.inv(R))
    G = FuchsianGroup(np.array(gens))
    for k, g in enumerate(G.generators):
        if not mobius.is_su11(g, 1e-12):
            raise GroupConstructionError(f"generator {k} is not in SU(1,1)")
        if not abs(np.trace(g)) > 2:
            raise GroupConstructionError(f"generator {k} is not hyperbolic")
    if G.relator_residual() > 1e-9:
        raise GroupConstructionError(f"relator residual {G.relator_residual():.3e}")
    return G


def _origin_image(M):
    return M[..., 0, 1] / M[..., 1, 1]


def _keys(w, shift):
    kx = np.floor(w.real / _KEY_CELL + shift[0]).astype(np.int64)
    ky = np.floor(w.imag / _KEY_CELL + shift[1]).astype(np.int64)
    return kx * (1 << 36) + ky


class _ElementSet:
    """Incremental dedup of group elements (PSL: keyed by the image of 0).

    Four shifted grids guarantee that two images closer than a quarter
    cell share a cell in at least one of them.
    """

    def __init__(self):
        self.seen = [np.empty(0, np.int64) for _ in _KEY_SHIFTS]

    def add_new(self, P):
        w = _origin_image(P)
        keep = np.ones(len(P), bool)
        for seen, sh in zip(self.seen, _KEY_SHIFTS):
            keep &= ~np.isin(_keys(w, sh), seen, assume_unique=False)
        P, w = P[keep], w[keep]
        for sh in _KEY_SHIFTS:
            _, idx = np.unique(_keys(w, sh), return_index=True)
            idx.sort()
            P, w = P[idx], w[idx]
        self.seen = [np.union1d(seen, _keys(w, sh)) for seen, sh in zip(self.seen, _KEY_SHIFTS)]
        return P


def enumerate_group(G, max_word_len, max_elements=DEFAULT_MAX_ELEMENTS):
    """Distinct elements of word length <= N, identity first, breadth-first."""
    if not 0 <= max_word_len <= MAX_WORD_LEN:
        raise ValueError(f"max_word_len must be in [0, {MAX_WORD_LEN}]")
    ident = np.eye(2, dtype=complex)[None]
    found = _ElementSet()
    front = found.add_new(ident)
    out = [front]
    total = 1
    for _ in range(max_word_len):
        P = np.einsum("nij,gjk->ngik", front, G.generators).reshape(-1, 2, 2)
        front = found.add_new(P)
        total += len(front)
        if total > max_elements:
            raise EnumerationOverflow(f"more than {max_elements} elements")
        out.append(front)
    return np.concatenate(out)


def enumerate_ball(G, radius, max_elements=DEFAULT_MAX_ELEMENTS):
    """All elements with d(0, gamma 0) <= radius.

    Breadth-first over octagon tiles; a tile met by the geodesic from 0 to
    gamma 0 has its centre within radius + CIRCUMRADIUS, which bounds the
    search.
    """
    bound = radius + CIRCUMRADIUS
    found = _ElementSet()
    front = found.add_new(np.eye(2, dtype=complex)[None])
    out = [front]
    total = 1
    while len(front):
        P = np.einsum("nij,gjk->ngik", front, G.generators).reshape(-1, 2, 2)
        P = P[_displacement(P) <= bound]
        front = found.add_new(P)
        total += len(front)
        if total > max_elements:
            raise EnumerationOverflow(f"more than {max_elements} elements")
        out.append(front)
    els = np.concatenate(out)
    return els[_displacement(els) <= radius]


def mobius_stack(M, z):
    """Moebius action of a stack of matrices M[n] on points z[n]."""
    return (M[:, 0, 0] * z + M[:, 0, 1]) / (M[:, 1, 0] * z + M[:, 1, 1])


def mobius_deriv_stack(M, z):
    return 1.0 / (M[:, 1, 0] * z + M[:, 1, 1]) ** 2


def _displacement(M):
    r = np.minimum(np.abs(_origin_image(M)), 1 - 1e-16)
    return 2 * np.arctanh(r)


def _series_terms(elements, coeffs, z, chunk=4096):
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    out = np.zeros(z.shape, dtype=complex)
    for i in range(0, len(elements), chunk):
        g = elements[i:i + chunk]
        a, b, c, d = (g[:, 0, 0, None], g[:, 0, 1, None], g[:, 1, 0, None], g[:, 1, 1, None])
        den = c * z[None] + d
        out += (np.polynomial.polynomial.polyval((a * z[None] + b) / den, coeffs) / den ** 4).sum(0)
    return out


def poincare_q4(G, P, z, max_word_len):
    """sum over |gamma| <= N of P(gamma z) gamma'(z)^2, word-length truncation."""
    z = complex(z)
    if not abs(z) < 1:
        raise ValueError("poincare_q4 needs a disc point")
    coeffs = np.atleast_1d(np.asarray(P, dtype=complex))
    return complex(_series_terms(enumerate_group(G, max_word_len), coeffs, z)[0])


# ---------------------------------------------------------------- fundamental domain

def in_octagon(z, tol=0.0):
    """True when z lies in the closed octagon (up to tol in each side test)."""
    z = np.asarray(z, dtype=complex)
    ok = np.abs(z) < 1
    for k in range(8):
        # side k lies on the circle orthogonal to the unit circle with
        # centre e^{i k pi/4} / cosh-ratio; inside means outside that circle
        cen, rad = _side_circle(k)
        ok &= np.abs(z - cen) >= rad - tol
    return ok


@lru_cache(maxsize=None)
def _side_circle(k):
    m = SIDE_RADIUS * np.exp(1j * k * np.pi / 4)
    # circle orthogonal to |z| = 1 through m with centre on the ray of m
    r0 = abs(m)
    cr = (1 + r0 * r0) / (2 * r0)
    return cr * np.exp(1j * k * np.pi / 4), np.sqrt(cr * cr - 1)


def reduce_to_domain(G, z, max_steps=64):
    """(z', M) with z' = M z in the closed octagon and M in the group."""
    z = complex(z)
    M = np.eye(2, dtype=complex)
    for _ in range(max_steps):
        worst, k_out = 0.0, None
        for k in range(8):
            cen, rad = _side_circle(k)
            gap = rad - abs(z - cen)
            if gap > worst:
                worst, k_out = gap, k
        if k_out is None:
            return z, M
        g = G.generators[(k_out + 4) % 8]  # maps side k_out to side k_out + 4
        z = mobius.mobius(g, z)
        M = g @ M
    raise MeshIdentificationError(f"could not reduce {z} to the octagon")


# ---------------------------------------------------------------- quadratic differentials

@dataclass(frozen=True)
class QuadDiffField:
    """Holomorphic quadratic differential f dz^2 on the disc.

    Stored by Taylor coefficients about 0 which represent the truncated
    series exactly on |z| <= VALID_RADIUS.  ``radius`` is the displacement
    truncation used (nan for fields that do not come from a series).
    """

    coeffs: np.ndarray
    radius: float = float("nan")
    n_terms: int = 0
    automorphy_residual: float = float("nan")

    VALID_RADIUS = 0.9
    weight = (2, 0)

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        if np.any(np.abs(z) > self.VALID_RADIUS):
            raise ValueError("evaluation outside the represented disc; reduce first")
        return np.polynomial.polynomial.polyval(z, self.coeffs)

    def derivative(self, z, k=1):
        z = np.asarray(z, dtype=complex)
        c = np.polynomial.polynomial.polyder(self.coeffs, k) if k else self.coeffs
        return np.polynomial.polynomial.polyval(z, c)

    def scaled(self, s):
        return QuadDiffField(self.coeffs * s, self.radius, self.n_terms,
                             self.automorphy_residual * abs(s))

    def is_zero(self):
        return not np.any(self.coeffs)

    def sample(self, mesh):
        return self(mesh.class_positions)

    def evaluate_anywhere(self, G, z):
        """f at any disc point, folding back into the octagon by automorphy."""
        w, M = reduce_to_domain(G, z)
        return complex(self(w) * mobius.mobius_deriv(M, z) ** 2)


def zero_quad_diff():
    return QuadDiffField(np.zeros(1, dtype=complex), 0.0, 0, 0.0)


@lru_cache(maxsize=8)
def _series_coeffs(seed, radius, n_samples, rho):
    G = build_bolza_group()
    els = enumerate_ball(G, radius)
    z = rho * np.exp(2j * np.pi * np.arange(n_samples) / n_samples)
    vals = _series_terms(els, np.array(seed, dtype=complex), z)
    coeffs = np.fft.fft(vals) / n_samples / rho ** np.arange(n_samples)
    return coeffs, len(els)


def boundary_pairs(G, n_pairs, rng):
    """n_pairs random (z, k) with z on side k+4 so that gamma_k z is on side k."""
    out = []
    for i in range(n_pairs):
        k = i % 8
        a = VERTEX_RADIUS * np.exp(1j * ((k + 4) * np.pi / 4 - np.pi / 8))
        b = VERTEX_RADIUS * np.exp(1j * ((k + 4) * np.pi / 4 + np.pi / 8))
        out.append((geodesic_point(a, b, rng.uniform()), k % 8))
    return out


def automorphy_residual(G, f, n_pairs=50, seed=0):
    """sup |f(gamma z) gamma'(z)^2 - f(z)| over paired boundary points."""
    rng = np.random.default_rng(seed)
    res = 0.0
    for z, k in boundary_pairs(G, n_pairs, rng):
        g = G.generators[k]
        lhs = f(mobius.mobius(g, z)) * mobius.mobius_deriv(g, z) ** 2
        res = max(res, abs(lhs - f(z)))
    return float(res)


def build_quad_diff(G, seed, radius=DEFAULT_SERIES_RADIUS, tol=1e-5, n_pairs=50,
                    n_samples=512, rho=0.93, normalize_to=None):
    """Poincare series of the polynomial ``seed`` truncated at displacement
    ``radius``, optionally rescaled so that max |sigma|_{g0} on the octagon
    equals ``normalize_to``.  Raises TruncationInsufficient when the
    automorphy residual exceeds tol."""
    seed = tuple(complex(c) for c in np.atleast_1d(seed))
    coeffs, n = _series_coeffs(seed, float(radius), int(n_samples), float(rho))
    field = QuadDiffField(coeffs.copy(), float(radius), n)
    if normalize_to is not None:
        peak = max_hyperbolic_norm(field)
        if peak == 0:
            raise TruncationInsufficient("series vanished identically")
        field = field.scaled(normalize_to / peak)
    res = automorphy_residual(G, field, n_pairs)
    field = QuadDiffField(field.coeffs, field.radius, n, res)
    if res > tol:
        raise TruncationInsufficient(f"automorphy residual {res:.3e} > {tol:.1e}")
    return field


def max_hyperbolic_norm(f, n=40000, seed=1):
    """max over the octagon of |f| / lambda0^2 by dense sampling."""
    rng = np.random.default_rng(seed)
    z = VERTEX_RADIUS * np.sqrt(rng.uniform(0, 1, n)) * np.exp(2j * np.pi * rng.uniform(0, 1, n))
    z = z[in_octagon(z)]
    return float((np.abs(f(z)) / lambda0(z) ** 2).max())


# ---------------------------------------------------------------- metric helpers

def lambda0(z):
    """Length density 2/(1-|z|^2) of the curvature -1 disc metric."""
    return 2.0 / (1.0 - np.abs(z) ** 2)


def dz_log_lambda0(z):
    return np.conj(z) / (1.0 - np.abs(z) ** 2)


def hyperbolic_distance(a, b):
    a, b = np.asarray(a, dtype=complex), np.asarray(b, dtype=complex)
    q = np.abs(a - b) / np.abs(1 - np.conj(a) * b)
    return 2 * np.arctanh(np.minimum(q, 1 - 1e-16))


def geodesic_point(a, b, t):
    """Point at fraction t along the disc geodesic from a to b."""
    q = (b - a) / (1 - np.conj(a) * b)
    if q == 0:
        return complex(a)
    r = np.tanh(t * np.arctanh(abs(q))) * q / abs(q)
    return complex((r + a) / (1 + np.conj(a) * r))


def sigma_norm(lam, f):
    """|sigma|_g = |f| / lambda^2 pointwise."""
    return np.abs(f) / np.asarray(lam) ** 2


# ---------------------------------------------------------------- mesh

@dataclass(frozen=True)
class FundamentalMesh:
    vertices: np.ndarray          # raw positions (complex), boundary copies kept
    triangles: np.ndarray         # (m, 3) raw indices, counter-clockwise
    identifications: np.ndarray   # (k, 3): vertices[j] = gamma_g(vertices[i])
    interior_mask: np.ndarray     # raw vertices off the octagon boundary
    vclass: np.ndarray            # raw -> class
    reps: np.ndarray              # class -> representative raw index
    charts: np.ndarray            # raw -> element g with vertices[v] = g(vertices[rep])
    level: int = -1

    @property
    def n_classes(self):
        return len(self.reps)

    @property
    def class_positions(self):
        return self.vertices[self.reps]

    # -------------------------------------------------- combinatorics
    def euler_characteristic(self):
        edges = set()
        for t in self.triangles:
            for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                edges.add((min(a, b), max(a, b)))
        # an edge on a source side is glued to its image on the target side
        src = {int(i) for i, _, _ in self.identifications}
        glued = sum(1 for a, b in edges if a in src and b in src
                    and self._same_side(a, b))
        return self.n_classes - (len(edges) - glued) + len(self.triangles)

    def _same_side(self, a, b):
        sa, sb = self._sides[a], self._sides[b]
        return bool(sa & sb & {4, 5, 6, 7})

    @cached_property
    def copies(self):
        """class -> raw vertices in it"""
        out = [[] for _ in range(self.n_classes)]
        for v, c in enumerate(self.vclass):
            out[c].append(v)
        return out

    @cached_property
    def _sides(self):
        return [_sides_of(z) for z in self.vertices]

    # -------------------------------------------------- intrinsic geometry
    @cached_property
    def edge_lengths(self):
        """(m, 3) hyperbolic length of the edge opposite each corner."""
        P = self.vertices[self.triangles]
        return np.stack([hyperbolic_distance(P[:, 1], P[:, 2]),
                         hyperbolic_distance(P[:, 2], P[:, 0]),
                         hyperbolic_distance(P[:, 0], P[:, 1])], axis=1)

    @cached_property
    def flat_areas(self):
        a, b, c = self.edge_lengths.T
        s = (a + b + c) / 2
        A2 = s * (s - a) * (s - b) * (s - c)
        if np.any(A2 <= 0):
            raise MeshQualityError("degenerate triangle")
        return np.sqrt(A2)

    @cached_property
    def cotangents(self):
        """(m, 3) cot of the flat angle at each corner."""
        L2 = self.edge_lengths ** 2
        A = self.flat_areas[:, None]
        return (L2.sum(1, keepdims=True) - 2 * L2) / (4 * A)

    @cached_property
    def angles(self):
        return np.arctan2(1.0, self.cotangents)

    @cached_property
    def class_triangles(self):
        return self.vclass[self.triangles]

    @cached_property
    def stiffness(self):
        """Positive semidefinite cotangent matrix on vertex classes."""
        T, C = self.class_triangles, self.cotangents
        rows, cols, vals = [], [], []
        for k in range(3):
            i, j = T[:, (k + 1) % 3], T[:, (k + 2) % 3]
            w = 0.5 * C[:, k]
            rows += [i, j, i, j]
            cols += [j, i, i, j]
            vals += [-w, -w, w, w]
        n = self.n_classes
        L = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(n, n)).tocsr()
        L.sum_duplicates()
        return L

    @cached_property
    def mass(self):
        """Barycentric vertex areas of the flattened triangles."""
        return np.bincount(self.class_triangles.ravel(),
                           np.repeat(self.flat_areas / 3, 3), minlength=self.n_classes)

    @cached_property
    def angle_defect_curvature(self):
        """Discrete curvature of the hyperbolic background per vertex class."""
        ang = np.bincount(self.class_triangles.ravel(), self.angles.ravel(),
                          minlength=self.n_classes)
        return (2 * np.pi - ang) / self.mass

    @cached_property
    def lambda0_classes(self):
        return lambda0(self.class_positions)

    @cached_property
    def spacing(self):
        return float(self.edge_lengths.max())

    # -------------------------------------------------- local stencils
    @cached_property
    def patches(self):
        return _build_patches(self)

    def grad(self, values, weight=(0, 0)):
        """(d/dz, d/dzbar) at each class in its representative's chart.

        ``values`` are samples at the representatives of a field with the
        given automorphy weight (p, q); neighbours across the octagon
        boundary are pulled back with m'(z)^-p conj(m'(z))^-q.
        """
        P = self.patches
        v = np.asarray(values)[P.nb]
        p, q = weight
        if p or q:
            v = v * P.dm ** (-p) * np.conj(P.dm) ** (-q)
        return _segment_sum(P.wz * v, P.row, self.n_classes), \
            _segment_sum(P.wzb * v, P.row, self.n_classes)

    def flat_laplacian(self, values):
        """d_xx + d_yy of a weight-0 class field in each representative's chart."""
        P = self.patches
        return _segment_sum(P.wlap * np.asarray(values)[P.nb], P.row, self.n_classes)

    def grad_of_function(self, F):
        """Derivatives of a chart function F(z) sampled at patch positions."""
        P = self.patches
        v = F(P.pos)
        return _segment_sum(P.wz * v, P.row, self.n_classes), \
            _segment_sum(P.wzb * v, P.row, self.n_classes)

    # -------------------------------------------------- export
    def to_json(self, fields=None):
        doc = {
            "schema": "afmod-mesh-v1",
            "level": int(self.level),
            "vertices": [[float(z.real), float(z.imag)] for z in self.vertices],
            "triangles": self.triangles.tolist(),
            "identifications": self.identifications.tolist(),
            "fields": {},
        }
        for name, vals in (fields or {}).items():
            vals = np.asarray(vals)
            if np.iscomplexobj(vals):
                doc["fields"][name] = [[float(v.real), float(v.imag)] for v in vals]
            else:
                doc["fields"][name] = [float(v) for v in vals]
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _segment_sum(vals, rows, n):
    vals = np.asarray(vals)
    if np.iscomplexobj(vals):
        return np.bincount(rows, vals.real, n) + 1j * np.bincount(rows, vals.imag, n)
    return np.bincount(rows, vals, n)


def _sides_of(z, tol=1e-9):
    out = set()
    for k in range(8):
        cen, rad = _side_circle(k)
        if abs(abs(z - cen) - rad) < tol:
            out.add(k)
    return out


def _hyperbolic_midpoint(a, b):
    return geodesic_point(a, b, 0.5)


def build_mesh(G, refinement):
    """Hyperbolic midpoint subdivision of the eight triangles (0, v_k, v_k+1)."""
    if refinement < 0:
        raise ValueError("refinement must be >= 0")
    corners = [VERTEX_RADIUS * np.exp(1j * (np.pi / 8 + k * np.pi / 4)) for k in range(8)]
    pos = [0j] + corners
    tris = [(0, 1 + k, 1 + (k + 1) % 8) for k in range(8)]
    for _ in range(refinement):
        mid = {}

        def m(i, j):
            key = (min(i, j), max(i, j))
            if key not in mid:
                mid[key] = len(pos)
                pos.append(_hyperbolic_midpoint(pos[i], pos[j]))
            return mid[key]

        new = []
        for i, j, k in tris:
            a, b, c = m(i, j), m(j, k), m(k, i)
            new += [(i, a, c), (a, j, b), (c, b, k), (a, b, c)]
        tris = new
    V = np.array(pos, dtype=complex)
    T = np.array(tris, dtype=np.int64)
    sides = [_sides_of(z) for z in V]
    interior = np.array([not s for s in sides])
    ident = _identify(G, V, sides)
    vclass, reps, charts = _classes(G, V, ident)
    return FundamentalMesh(V, T, ident, interior, vclass, reps, charts, refinement)


def _identify(G, V, sides):
    rows = []
    for k in range(4):
        src = [i for i, s in enumerate(sides) if (k + 4) in s]
        dst = [i for i, s in enumerate(sides) if k in s]
        tree = cKDTree(np.c_[V[dst].real, V[dst].imag])
        img = mobius.mobius(G.generators[k], V[src])
        for i, z in zip(src, img):
            hits = tree.query_ball_point([z.real, z.imag], SNAP_TOL)
            if len(hits) != 1:
                raise MeshIdentificationError(
                    f"vertex {i} on side {k + 4} has {len(hits)} partners on side {k}")
            rows.append((i, dst[hits[0]], k))
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def _classes(G, V, ident):
    n = len(V)
    adj = [[] for _ in range(n)]
    for i, j, k in ident:
        adj[i].append((j, G.generators[k]))
        adj[j].append((i, np.linalg.inv(G.generators[k])))
    vclass = -np.ones(n, dtype=np.int64)
    charts = np.tile(np.eye(2, dtype=complex), (n, 1, 1))
    reps = []
    for v in range(n):
        if vclass[v] >= 0:
            continue
        c = len(reps)
        reps.append(v)
        vclass[v] = c
        stack = [v]
        while stack:
            a = stack.pop()
            for b, g in adj[a]:
                if vclass[b] < 0:
                    vclass[b] = c
                    charts[b] = g @ charts[a]
                    stack.append(b)
    reps = np.array(reps, dtype=np.int64)
    err = np.abs(mobius_stack(charts, V[reps][vclass]) - V).max()
    if err > SNAP_TOL:
        raise MeshIdentificationError(f"chart composition mismatch {err:.2e}")
    return vclass, reps, charts


def mesh_from_json(G, text):
    doc = json.loads(text)
    if doc.get("schema") != "afmod-mesh-v1":
        raise ValueError("not an afmod-mesh-v1 document")
    V = np.array([complex(x, y) for x, y in doc["vertices"]])
    T = np.array(doc["triangles"], dtype=np.int64).reshape(-1, 3)
    ident = np.array(doc["identifications"], dtype=np.int64).reshape(-1, 3)
    for i, j, k in ident:
        if abs(mobius.mobius(G.generators[k], V[i]) - V[j]) > SNAP_TOL:
            raise MeshIdentificationError(f"stored identification ({i}, {j}, {k}) is wrong")
    interior = np.array([not _sides_of(z) for z in V])
    vclass, reps, charts = _classes(G, V, ident)
    fields = {}
    for name, vals in doc.get("fields", {}).items():
        arr = np.array(vals, dtype=float)
        fields[name] = arr[:, 0] + 1j * arr[:, 1] if arr.ndim == 2 else arr
    return FundamentalMesh(V, T, ident, interior, vclass, reps, charts, doc.get("level", -1)), fields


# ---------------------------------------------------------------- stencils

@dataclass(frozen=True)
class _Patches:
    row: np.ndarray   # class the stencil entry belongs to
    nb: np.ndarray    # neighbouring class
    pos: np.ndarray   # neighbour position in the row's chart
    dm: np.ndarray    # m'(z_rep(nb)) for the element placing nb at pos
    wz: np.ndarray    # d/dz weight
    wzb: np.ndarray   # d/dzbar weight
    wlap: np.ndarray  # flat Laplacian d_xx + d_yy weight (cubic fit)
    local: np.ndarray  # per class: stencil needs no boundary transfer


def _star_points(mesh, tri_of, c, M, seen, out):
    """Add the one-ring of class c, placed in a chart by element M acting on
    the representative, to ``out``."""
    for v in mesh.copies[c]:
        h = M @ np.linalg.inv(mesh.charts[v])  # raw neighbourhood of v -> chart
        for t in tri_of[v]:
            for n in mesh.triangles[t]:
                m = h @ mesh.charts[n]
                z = complex(mobius.mobius(m, mesh.vertices[mesh.reps[mesh.vclass[n]]]))
                key = (int(mesh.vclass[n]), round(z.real, 9), round(z.imag, 9))
                if key not in seen:
                    seen.add(key)
                    out.append((int(mesh.vclass[n]), z, m))


def _build_patches(mesh):
    n = len(mesh.vertices)
    tri_of = [[] for _ in range(n)]
    for t, tri in enumerate(mesh.triangles):
        for v in tri:
            tri_of[v].append(t)
    I = np.eye(2, dtype=complex)
    rows, nbs, poss, dms, wzs, wzbs, wlaps = [], [], [], [], [], [], []
    local = np.ones(mesh.n_classes, dtype=bool)
    for c in range(mesh.n_classes):
        seen, ring1 = set(), []
        _star_points(mesh, tri_of, c, I, seen, ring1)
        pts = list(ring1)
        for c1, _, m1 in ring1:
            _star_points(mesh, tri_of, c1, m1, seen, pts)
        z0 = mesh.vertices[mesh.reps[c]]
        cls = np.array([p[0] for p in pts])
        zs = np.array([p[1] for p in pts])
        ms = np.array([p[2] for p in pts])
        dm = mobius_deriv_stack(ms, mesh.vertices[mesh.reps[cls]])
        d = zs - z0
        h = np.abs(d).max()
        x, y = d.real / h, d.imag / h
        A = np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], axis=1)
        A3 = np.concatenate([A, np.stack([x ** 3, x * x * y, x * y * y, y ** 3], axis=1)], axis=1)
        if np.linalg.matrix_rank(A3) < 10:
            raise MeshQualityError(f"cubic stencil at class {c} is rank deficient")
        P3 = np.linalg.pinv(A3)
        wx, wy = P3[1] / h, P3[2] / h
        wlaps.append(2 * (P3[3] + P3[5]) / h ** 2)
        rows.append(np.full(len(pts), c))
        nbs.append(cls)
        poss.append(zs)
        dms.append(dm)
        wzs.append(0.5 * (wx - 1j * wy))
        wzbs.append(0.5 * (wx + 1j * wy))
        local[c] = np.allclose(ms, I, atol=1e-12) or np.allclose(ms, -I, atol=1e-12)
    cat = np.concatenate
    return _Patches(cat(rows), cat(nbs), cat(poss), cat(dms), cat(wzs), cat(wzbs), cat(wlaps), local)


# ---------------------------------------------------------------- operators

def _u_of(mesh, lam):
    """Log-ratio u = log(lambda / lambda0) per class.  ``lam`` is either a
    class array of u-compatible samples at representatives, or a callable
    lambda(z) evaluated there."""
    if callable(lam):
        lam = lam(mesh.class_positions)
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (mesh.n_classes,):
        raise ValueError("conformal factor must be sampled per vertex class")
    if np.any(lam <= 0):
        raise MeshQualityError("conformal factor must be positive")
    return np.log(lam / mesh.lambda0_classes)


def laplace_beltrami(mesh, lam, f, method="cotan"):
    """Positive Laplacian of g = lambda^2 |dz|^2 applied to a class field f.

    ``cotan`` is the symmetric cotangent operator divided by vertex areas.
    ``stencil`` differentiates a cubic least-squares fit on each 2-ring;
    it is not symmetric but is pointwise consistent for smooth f on every
    vertex, including those whose stars are not lattice-like.
    """
    u = _u_of(mesh, lam)
    f = np.asarray(f)
    if method == "cotan":
        return (mesh.stiffness @ f) / (mesh.mass * np.exp(2 * u))
    if method == "stencil":
        return -mesh.flat_laplacian(f) / (mesh.lambda0_classes * np.exp(u)) ** 2
    raise ValueError(f"unknown Laplacian method {method!r}")


def gauss_curvature(mesh, lam, method="cotan"):
    """K of g = lambda^2 |dz|^2 = e^{2u} g0: e^{-2u} (K0 + Delta_0 u), with
    K0 the angle-defect curvature of the background."""
    u = _u_of(mesh, lam)
    return np.exp(-2 * u) * (mesh.angle_defect_curvature
                             + laplace_beltrami(mesh, mesh.lambda0_classes, u, method))


def total_area(mesh, lam=None):
    if lam is None:
        return float(mesh.mass.sum())
    return float((mesh.mass * np.exp(2 * _u_of(mesh, lam))).sum())


def dbar_residual(mesh, sigma):
    """sup |d f / d zbar| over vertex classes.

    A QuadDiffField (or a class array of weight-(2,0) samples) is
    differentiated from its samples with boundary transfer; a plain
    callable is sampled directly at the stencil positions.
    """
    if isinstance(sigma, QuadDiffField):
        _, fzb = mesh.grad(sigma.sample(mesh), (2, 0))
    elif callable(sigma):
        _, fzb = mesh.grad_of_function(sigma)
    else:
        _, fzb = mesh.grad(np.asarray(sigma), (2, 0))
    return float(np.abs(fzb).max())


def r_contraction(lam, gamma, v=1.0):
    """r(gamma) = gamma(v)(v, .) / |v|^2 as the dz-coefficient.

    ``gamma`` is the coefficient of dzbar (x) dz^2; v a nonzero tangent
    vector written as a complex number; |v|^2 uses g = lambda^2 |dz|^2.
    """
    v = np.asarray(v, dtype=complex)
    lam = np.asarray(lam, dtype=float)
    return np.asarray(gamma) * np.conj(v) * v / (lam ** 2 * np.abs(v) ** 2)


# ---------------------------------------------------------------- smooth surrogate

class ScalarSurrogate:
    """Smooth moving-least-squares cubic interpolant of a weight-0 class
    field, defined on a neighbourhood of the octagon.

    The point cloud holds every raw vertex and its images under the eight
    generators; weights use a C^4 Wendland kernel of radius proportional
    to the local hyperbolic scale 1/lambda0, so the surrogate is C^2.
    """

    def __init__(self, mesh, G, values, support=3.5):
        values = np.asarray(values, dtype=float)
        pts = [mesh.vertices]
        vals = [values[mesh.vclass]]
        for g in G.generators:
            pts.append(mobius.mobius(g, mesh.vertices))
            vals.append(values[mesh.vclass])
        P = np.concatenate(pts)
        Vv = np.concatenate(vals)
        keep = np.abs(P) < 0.97
        P, Vv = P[keep], Vv[keep]
        # drop duplicates created by boundary copies
        key = np.round(np.c_[P.real, P.imag], 10)
        _, idx = np.unique(key, axis=0, return_index=True)
        idx.sort()
        self.points, self.values = P[idx], Vv[idx]
        self.tree = cKDTree(np.c_[self.points.real, self.points.imag])
        self.scale = support * mesh.spacing
        self.G = G

    def _radius(self, z):
        return self.scale / lambda0(z)

    def fit(self, z):
        """Cubic coefficients (c, cx, cy, cxx, cxy, cyy, cxxx, cxxy, cxyy, cyyy)
        in the scaled variables, and the scale."""
        z = complex(z)
        H = self._radius(z)
        idx = self.tree.query_ball_point([z.real, z.imag], H)
        if len(idx) < 16:
            raise MeshQualityError(f"too few surrogate points near {z}")
        d = (self.points[idx] - z) / H
        r = np.abs(d)
        w = (1 - r) ** 6 * (35 * r * r + 18 * r + 3)
        x, y = d.real, d.imag
        A = np.stack([np.ones_like(x), x, y, x * x, x * y, y * y,
                      x ** 3, x * x * y, x * y * y, y ** 3], axis=1)
        sw = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(A * sw[:, None], self.values[idx] * sw, rcond=None)
        return coef, H

    def __call__(self, z):
        return float(self.fit(z)[0][0])

    def jet(self, z):
        """(u, u_x, u_y, u_xx, u_xy, u_yy) at z."""
        c, H = self.fit(z)
        return np.array([c[0], c[1] / H, c[2] / H, 2 * c[3] / H ** 2, c[4] / H ** 2,
                         2 * c[5] / H ** 2])
