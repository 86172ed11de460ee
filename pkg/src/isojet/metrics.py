"""Chart-based Riemannian metrics: geodesics, exponential/log maps, frames.

A metric is presented as a smooth map from chart coordinates to symmetric
positive-definite matrices on an axis-aligned box (optionally shrunk by a
predicate).  Geodesics are integrated with an adaptive Dormand-Prince pair;
the same integrator run on truncated power-series coefficients transports
jets of the exponential map in its initial velocity, which supplies both
exact differentials of exp (degree 1) and the higher-order normal-coordinate
expansions used by the invariants layer.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .jets import jet_space
from .odeint import RegionExit, StepUnderflow, rk45

__all__ = [
    "Box", "ChartMetric", "Frame", "GeodesicState", "MetricFamily",
    "SmoothMap", "MobiusMap", "christoffel", "exp_map", "exp_with_jacobian",
    "geodesic_points", "log_map", "metric_distance", "orthonormal_frame",
    "injectivity_radius_floor", "transport_exp_jet", "pushforward_metric",
    "build_metric", "build_family", "fd_taylor", "fornberg_weights",
    "MetricError",
]


class MetricError(RuntimeError):
    pass


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))

    @classmethod
    def cube(cls, dim, halfwidth, center=None):
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        return cls(c - halfwidth, c + halfwidth)

    @property
    def dim(self):
        return self.lo.size

    @property
    def scale(self):
        return float(np.max(self.hi - self.lo))

    def contains(self, x, margin=0.0):
        x = np.asarray(x)
        return bool(np.all(x >= self.lo + margin) and np.all(x <= self.hi - margin))

    def sample(self, n, seed=0):
        rng = np.random.default_rng(seed)
        return self.lo + rng.random((n, self.dim)) * (self.hi - self.lo)


@dataclass(frozen=True)
class Frame:
    """A base point with an ordered basis of the tangent space (columns)."""
    point: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        object.__setattr__(self, "basis", np.asarray(self.basis, dtype=float))

    @property
    def dim(self):
        return self.point.size

    def vector(self, coords):
        """Tangent vector with the given coordinates in this basis."""
        return self.basis @ np.asarray(coords, dtype=float)

    def coords(self, vector):
        return np.linalg.solve(self.basis, np.asarray(vector, dtype=float))

    def gram_defect(self, metric):
        g = metric.matrix(self.point)
        return float(np.max(np.abs(self.basis.T @ g @ self.basis - np.eye(self.dim))))


@dataclass(frozen=True)
class GeodesicState:
    position: np.ndarray
    velocity: np.ndarray
    s: float


class ChartMetric:
    """Riemannian metric on a chart box.

    ``matrix_fn(p)`` returns the symmetric positive-definite matrix g(p).
    ``derivative_fn(p)`` returns all first partials, shape (d, d, d) with
    [l, i, j] = d_l g_ij; a 4th-order central-difference fallback is used when
    absent.  ``taylor_fn(p, degree, space)`` returns the Taylor coefficients of
    g around p as a raw (d, d, n_terms) array in the given jet space; the
    fallback fits a tensor-grid finite-difference stencil.
    """

    def __init__(self, dim, box, matrix_fn, derivative_fn=None, taylor_fn=None,
                 predicate=None, name="custom", fd_step=None, fd_taylor_step=None,
                 matrix_many_fn=None):
        self.dim = int(dim)
        self.box = box
        self._matrix_fn = matrix_fn
        self._derivative_fn = derivative_fn
        self._taylor_fn = taylor_fn
        self.predicate = predicate
        self.name = name
        self.fd_step = fd_step if fd_step is not None else 1e-4 * box.scale
        self.fd_taylor_step = (fd_taylor_step if fd_taylor_step is not None
                               else 0.01 * box.scale)
        self._matrix_many_fn = matrix_many_fn

    def contains(self, p, margin=0.0):
        if not self.box.contains(p, margin):
            return False
        return self.predicate is None or bool(self.predicate(np.asarray(p, dtype=float)))

    def require_inside(self, p):
        if not self.contains(p):
            raise MetricError(f"point {np.asarray(p)} outside chart region of {self.name}")

    def matrix(self, p):
        return self._matrix_fn(np.asarray(p, dtype=float))

    def matrix_many(self, points):
        points = np.asarray(points, dtype=float)
        if self._matrix_many_fn is not None:
            return self._matrix_many_fn(points)
        return np.stack([self._matrix_fn(p) for p in points])

    def derivative(self, p):
        p = np.asarray(p, dtype=float)
        if self._derivative_fn is not None:
            return self._derivative_fn(p)
        h = self.fd_step
        out = np.empty((self.dim, self.dim, self.dim))
        for l in range(self.dim):
            e = np.zeros(self.dim)
            e[l] = h
            out[l] = (8.0 * (self.matrix(p + e) - self.matrix(p - e))
                      - (self.matrix(p + 2 * e) - self.matrix(p - 2 * e))) / (12.0 * h)
        return out

    def taylor(self, p, degree, space=None):
        """Taylor coefficients of g around p, exact through ``degree``."""
        p = np.asarray(p, dtype=float)
        if space is None:
            space = jet_space(self.dim, degree)
        if self._taylor_fn is not None:
            return self._taylor_fn(p, degree, space)
        return fd_taylor(self.matrix, self.dim, p, degree, self.fd_taylor_step,
                         space=space, value_shape=(self.dim, self.dim))

    def check_spd(self, points=None, n=64, seed=0, floor=1e-12):
        """Eigenvalue floor check at sampled points; raises on failure."""
        if points is None:
            points = [p for p in self.box.sample(4 * n, seed) if self.contains(p)][:n]
        for p in points:
            w = np.linalg.eigvalsh(self.matrix(p))
            if w.min() <= floor:
                raise MetricError(
                    f"metric {self.name} not positive definite at {p} (min eig {w.min():.3g})")
        return True


class MetricFamily:
    """A one-parameter family of chart metrics t -> g_t on a fixed region."""

    def __init__(self, t_domain, builder, name="family"):
        self.t_domain = (float(t_domain[0]), float(t_domain[1]))
        self._builder = builder
        self.name = name
        self._cache = {}

    def at(self, t):
        t = float(t)
        if not (self.t_domain[0] - 1e-12 <= t <= self.t_domain[1] + 1e-12):
            raise MetricError(f"parameter {t} outside domain {self.t_domain}")
        if t not in self._cache:
            self._cache[t] = self._builder(t)
        return self._cache[t]


# ---------------------------------------------------------------------------
# finite-difference Taylor machinery
# ---------------------------------------------------------------------------

def fornberg_weights(x0, grid, m):
    """Finite-difference weights for derivatives 0..m at x0 on arbitrary nodes."""
    grid = np.asarray(grid, dtype=float)
    n = grid.size
    w = np.zeros((m + 1, n))
    c1 = 1.0
    c4 = grid[0] - x0
    w[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = grid[i] - x0
        for j in range(i):
            c3 = grid[i] - grid[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    w[k, i] = c1 * (k * w[k - 1, i - 1] - c5 * w[k, i - 1]) / c2
                w[0, i] = -c1 * c5 * w[0, i - 1] / c2
            for k in range(mn, 0, -1):
                w[k, j] = (c4 * w[k, j] - k * w[k - 1, j]) / c3
            w[0, j] = c4 * w[0, j] / c3
        c1 = c2
    return w


def fd_taylor(fn, dim, base, degree, step, space=None, value_shape=()):
    """Taylor coefficients of ``fn`` around ``base`` from a tensor-grid stencil.

    Returns raw coefficients of shape value_shape + (n_terms,) in graded-lex
    order, correct through ``degree`` (stencil order exceeds the requested
    degree, so truncation error decays faster than the lowest kept term).
    """
    base = np.asarray(base, dtype=float)
    if space is None:
        space = jet_space(dim, degree)
    K = degree + 2
    offsets = step * np.arange(-K, K + 1)
    W = fornberg_weights(0.0, offsets, degree)  # (degree+1, 2K+1)
    npts = offsets.size
    shape_grid = (npts,) * dim
    vals = np.empty(shape_grid + value_shape)
    for idx in np.ndindex(shape_grid):
        point = base + np.array([offsets[i] for i in idx])
        vals[idx] = fn(point)
    # contract one axis at a time: leading grid axes become derivative orders
    out = vals
    for axis in range(dim):
        out = np.tensordot(W, np.moveaxis(out, axis, 0), axes=(1, 0))
        out = np.moveaxis(out, 0, axis)
    coeffs = np.zeros(value_shape + (space.n_terms,))
    for r, alpha in enumerate(space.multi_indices):
        if space.orders[r] > degree:
            continue
        fact = np.prod([math.factorial(int(a)) for a in alpha])
        coeffs[..., r] = out[tuple(alpha)] / fact
    return coeffs


# ---------------------------------------------------------------------------
# Christoffel symbols and geodesics
# ---------------------------------------------------------------------------

def christoffel(metric, p, check=True):
    """Gamma^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)."""
    p = np.asarray(p, dtype=float)
    if check:
        metric.require_inside(p)
    g = metric.matrix(p)
    D = metric.derivative(p)  # [l, i, j]
    try:
        ginv = np.linalg.inv(g)
    except np.linalg.LinAlgError as exc:
        raise MetricError(f"singular metric at {p}") from exc
    # T[l, i, j] = d_i g_jl + d_j g_il - d_l g_ij
    T = np.transpose(D, (2, 0, 1)) + np.transpose(D, (2, 1, 0)) - D
    return 0.5 * np.einsum("kl,lij->kij", ginv, T)


def _geodesic_rhs(metric, s, y):
    d = metric.dim
    x, v = y[:d], y[d:]
    gamma = christoffel(metric, x, check=False)
    acc = -np.einsum("kij,i,j->k", gamma, v, v)
    return np.concatenate([v, acc])


def _region_guard(metric):
    d = metric.dim

    def guard(y):
        x = y[:d] if y.ndim == 1 else y[:d, 0]
        if not metric.contains(x):
            raise RegionExit("geodesic exits chart region", state=np.array(y), s=None)
    return guard


def exp_map(metric, p, v, rtol=1e-10, atol=1e-12):
    """Time-1 point of the geodesic from p with initial velocity v."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    metric.require_inside(p)
    if np.max(np.abs(v)) == 0.0:
        return p.copy()
    y = rk45(lambda s, y: _geodesic_rhs(metric, s, y), np.concatenate([p, v]),
             0.0, 1.0, rtol=rtol, atol=atol, guard=_region_guard(metric))
    return y[:metric.dim]


def geodesic_points(metric, p, v, fractions, rtol=1e-10, atol=1e-12):
    """Geodesic states at the given arc fractions of [0, 1]."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    fractions = sorted(float(f) for f in fractions)
    _, captured = rk45(lambda s, y: _geodesic_rhs(metric, s, y),
                       np.concatenate([p, v]), 0.0, 1.0, rtol=rtol, atol=atol,
                       guard=_region_guard(metric),
                       checkpoints=[f for f in fractions if f < 1.0] + [1.0])
    d = metric.dim
    return [GeodesicState(y[:d], y[d:], f) for y, f in zip(captured, fractions + [1.0])]


# ---------------------------------------------------------------------------
# jet transport of the exponential map
# ---------------------------------------------------------------------------

def _jet_matmul_series(space, g_rows):
    """Inverse of a matrix of scalar jets whose constant part is invertible.

    Uses the exact Neumann series: with G = G0 (I + X), X nilpotent in the
    truncated ring, G^{-1} = (sum_k (-X)^k) G0^{-1}.
    """
    d = g_rows.shape[0]
    G0 = g_rows[:, :, 0].copy()
    G0inv = np.linalg.inv(G0)
    X = np.einsum("ik,kjn->ijn", G0inv, g_rows)
    X[:, :, 0] -= np.eye(d)
    acc = np.zeros_like(g_rows)
    acc[:, :, 0] = np.eye(d)
    term = acc.copy()
    for _ in range(space.degree):
        new = np.zeros_like(term)
        for i in range(d):
            for j in range(d):
                row = np.zeros(space.n_terms)
                for k in range(d):
                    row += space.mul(term[i, k], X[k, j])
                new[i, j] = -row
        term = new
        acc += term
    out = np.einsum("ijn,jk->ikn", acc, G0inv)
    return out


def _resize_rows(rows, n):
    """Prefix-truncate or zero-pad trailing coefficients (spaces nest)."""
    if rows.shape[-1] >= n:
        return rows[..., :n]
    out = np.zeros(rows.shape[:-1] + (n,))
    out[..., :rows.shape[-1]] = rows
    return out


def _christoffel_jets(metric, base, space, taylor_degree):
    """Christoffel symbols around ``base`` as raw jets in ``space``.

    ``taylor_degree`` controls how far the metric is expanded: degree + 1 for
    full space accuracy, degree - 1 when the caller's velocity jets have no
    constant term (their contraction shifts contributions up two degrees).
    """
    d = metric.dim
    big = jet_space(d, taylor_degree)
    g_big = metric.taylor(base, taylor_degree, big)
    n = space.n_terms
    g = _resize_rows(g_big, n)
    dg = np.empty((d, d, d, n))
    for l in range(d):
        for i in range(d):
            for j in range(d):
                dg[l, i, j] = _resize_rows(big.diff(g_big[i, j], l), n)
    ginv = _jet_matmul_series(space, g)
    gam = np.empty((d, d, d, n))
    for k in range(d):
        for i in range(d):
            for j in range(i, d):
                row = np.zeros(n)
                for l in range(d):
                    row += space.mul(ginv[k, l], dg[i, j, l] + dg[j, i, l] - dg[l, i, j])
                gam[k, i, j] = 0.5 * row
                gam[k, j, i] = gam[k, i, j]
    return gam


def _jet_geodesic_rhs(metric, space, y, taylor_degree):
    """RHS for geodesic transport with state rows of jet coefficients."""
    d = metric.dim
    x, v = y[:d], y[d:]
    base = x[:, 0].copy()
    gam = _christoffel_jets(metric, base, space, taylor_degree)
    delta = x.copy()
    delta[:, 0] = 0.0
    M = space.monomial_matrix(list(delta))
    acc = np.zeros((d, space.n_terms))
    vv = {}
    for i in range(d):
        for j in range(i, d):
            vv[(i, j)] = space.mul(v[i], v[j])
    for k in range(d):
        row = np.zeros(space.n_terms)
        for i in range(d):
            for j in range(i, d):
                w = 2.0 if j > i else 1.0
                gam_at_x = gam[k, i, j] @ M
                row += w * space.mul(gam_at_x, vv[(i, j)])
        acc[k] = -row
    return np.vstack([v, acc])


def transport_exp_jet(metric, p, basis, degree, v_center=None,
                      rtol=1e-11, atol=1e-13):
    """Jet (in the initial-velocity coordinates) of v -> exp_p(B (c + v)).

    Returns raw rows (d, n_terms) in jet_space(d, degree).  ``basis`` maps
    velocity coordinates to chart tangent vectors; ``v_center`` (optional)
    recenters the expansion at velocity coordinates c.

    The geodesic equation is integrated with coefficients in the truncated
    ring; the metric is Taylor-expanded at the moving base point each
    evaluation, one degree above the state so all retained coefficients of
    the Christoffel symbols are exact.
    """
    p = np.asarray(p, dtype=float)
    basis = np.asarray(basis, dtype=float)
    metric.require_inside(p)
    d = metric.dim
    space = jet_space(d, degree)
    x0 = np.zeros((d, space.n_terms))
    x0[:, 0] = p
    v0 = np.zeros((d, space.n_terms))
    v0[:, 1:1 + d] = basis
    centered = v_center is None or not np.any(np.asarray(v_center))
    if v_center is not None:
        v0[:, 0] = basis @ np.asarray(v_center, dtype=float)
    y0 = np.vstack([x0, v0])
    taylor_degree = max(degree - 1, 1) if centered else degree + 1

    def rhs(s, y):
        return _jet_geodesic_rhs(metric, space, y, taylor_degree)

    try:
        y = rk45(rhs, y0, 0.0, 1.0, rtol=rtol, atol=atol,
                 guard=_region_guard(metric))
    except StepUnderflow as exc:
        raise MetricError(f"jet transport diverged: {exc}") from exc
    return y[:d]


def exp_with_jacobian(metric, p, v, rtol=1e-11, atol=1e-13):
    """exp_p(v) together with its exact differential in v (variational jets)."""
    v = np.asarray(v, dtype=float)
    if np.max(np.abs(v)) == 0.0:
        return np.asarray(p, dtype=float).copy(), np.eye(metric.dim)
    rows = transport_exp_jet(metric, p, np.eye(metric.dim), 1, v_center=v,
                             rtol=rtol, atol=atol)
    return rows[:, 0].copy(), rows[:, 1:1 + metric.dim].copy()


# ---------------------------------------------------------------------------
# log map, frames, distances
# ---------------------------------------------------------------------------

def log_map(metric, p, q, tol=1e-12, max_iter=40, rtol=1e-11):
    """Newton shooting for v with exp_p(v) = q (q within the normal ball of p).

    The Jacobian is the variational differential of exp; it is reused across
    iterations while the residual keeps contracting.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    metric.require_inside(p)
    metric.require_inside(q)
    v = q - p
    if np.max(np.abs(v)) == 0.0:
        return v
    scale = max(1.0, float(np.max(np.abs(q - p))))
    J = None
    r_prev = None
    for _ in range(max_iter):
        if J is None:
            x, J = exp_with_jacobian(metric, p, v, rtol=rtol)
        else:
            x = exp_map(metric, p, v, rtol=rtol)
        r = x - q
        rn = float(np.max(np.abs(r)))
        if rn < tol * scale:
            return v
        if r_prev is not None and rn > 0.25 * r_prev:
            # slow contraction: refresh the Jacobian at the current iterate
            x, J = exp_with_jacobian(metric, p, v, rtol=rtol)
            r = x - q
            rn = float(np.max(np.abs(r)))
            if rn < tol * scale:
                return v
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError as exc:
            raise MetricError("log map: singular differential of exp") from exc
        # damped update
        lam = 1.0
        for _ in range(8):
            v_new = v - lam * step
            x_new = exp_map(metric, p, v_new, rtol=rtol)
            if float(np.max(np.abs(x_new - q))) < rn:
                break
            lam *= 0.5
        else:
            raise MetricError(
                "log map shooting failed to contract; target may be outside "
                "the normal ball")
        v = v_new
        r_prev = rn
    raise MetricError("log map did not converge; target may be outside the normal ball")


def metric_distance(metric, p, q, **kwargs):
    """Geodesic distance estimate |log_p(q)|_g (valid inside the normal ball)."""
    v = log_map(metric, p, q, **kwargs)
    g = metric.matrix(p)
    return float(np.sqrt(v @ g @ v))


def orthonormal_frame(metric, p, seed=None):
    """Gram-Schmidt of the seed vectors with respect to g(p); deterministic."""
    p = np.asarray(p, dtype=float)
    metric.require_inside(p)
    d = metric.dim
    seed = np.eye(d) if seed is None else np.asarray(seed, dtype=float).copy()
    if seed.shape != (d, d) or np.linalg.matrix_rank(seed) < d:
        raise MetricError("frame seed must be d linearly independent vectors")
    g = metric.matrix(p)
    basis = np.empty((d, d))
    for i in range(d):
        w = seed[:, i].copy()
        for j in range(i):
            w -= (basis[:, j] @ g @ w) * basis[:, j]
        norm = math.sqrt(max(w @ g @ w, 0.0))
        if norm < 1e-12 * max(1.0, float(np.max(np.abs(seed)))):
            raise MetricError("rank-deficient frame seed")
        basis[:, i] = w / norm
    return Frame(p, basis)


# ---------------------------------------------------------------------------
# injectivity radius floor
# ---------------------------------------------------------------------------

def _sphere_directions(dim, n, seed=12345):
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    from scipy.special import ndtri
    sob = qmc.Sobol(dim, scramble=True, seed=seed)
    u = sob.random(n)
    g = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    return g / np.maximum(norms, 1e-300)


def injectivity_radius_floor(metric, p, r_max, n_directions=512, n_radii=16,
                             det_floor=1e-6, match_tol=None, directions=None,
                             rtol=1e-10, fd_frac=1e-5, return_details=False):
    """Certified sampled floor for the injectivity radius at p.

    For each direction of a deterministic low-discrepancy net, the geodesic
    ray and finite-difference neighbours are integrated once out to r_max,
    capturing chart positions at each tested radius; a radius passes if every
    in-region ray has a nonsingular finite-difference differential of exp and
    no two distinct net velocities land on the same chart point.  Returns the
    largest tested radius r such that all radii <= r pass (0 if even the
    smallest fails).  This is a floor certificate on the sample net only.
    """
    p = np.asarray(p, dtype=float)
    metric.require_inside(p)
    d = metric.dim
    if directions is None:
        dirs = _sphere_directions(d, n_directions)
    else:
        dirs = np.asarray(directions, dtype=float)
    # radii are metric radii: normalize directions to unit g(p)-norm
    gp = metric.matrix(p)
    dirs = dirs / np.sqrt(np.einsum("ni,ij,nj->n", dirs, gp, dirs))[:, None]
    radii = r_max * np.arange(1, n_radii + 1) / n_radii
    fractions = (radii / r_max).tolist()
    if match_tol is None:
        match_tol = 1e-6 * r_max
    h = fd_frac * r_max

    def ray(v):
        """Positions at each tested radius; None past a region exit."""
        out = [None] * n_radii
        try:
            _, captured = rk45(lambda s, y: _geodesic_rhs(metric, s, y),
                               np.concatenate([p, v]), 0.0, 1.0, rtol=rtol,
                               atol=1e-12, guard=_region_guard(metric),
                               checkpoints=fractions)
            for j, y in enumerate(captured[:n_radii]):
                out[j] = y[:d]
        except (RegionExit, StepUnderflow):
            # re-run radius by radius to keep the in-region prefix
            for j, f in enumerate(fractions):
                try:
                    out[j] = exp_map(metric, p, f * v, rtol=rtol)
                except (RegionExit, StepUnderflow, MetricError):
                    break
        return out

    radius_ok = np.ones(n_radii, dtype=bool)
    points, vels = [[] for _ in range(n_radii)], [[] for _ in range(n_radii)]
    for u in dirs:
        center = ray(r_max * u)
        plus = [ray(r_max * u + h * np.eye(d)[k]) for k in range(d)]
        minus = [ray(r_max * u - h * np.eye(d)[k]) for k in range(d)]
        sign0 = 0.0
        for j, r in enumerate(radii):
            if center[j] is None:
                radius_ok[j:] = False
                break
            cols = []
            for k in range(d):
                if plus[k][j] is None or minus[k][j] is None:
                    cols = None
                    break
                cols.append((plus[k][j] - minus[k][j]) / (2.0 * h * fractions[j]))
            if cols is None:
                radius_ok[j:] = False
                break
            det = np.linalg.det(np.stack(cols, axis=1))
            if sign0 == 0.0:
                sign0 = math.copysign(1.0, det)
            # signed check: an orientation flip means the differential
            # degenerated between tested radii
            if sign0 * det < det_floor:
                radius_ok[j:] = False
                break
            points[j].append(center[j])
            vels[j].append(r * u)
    # injectivity on the cumulative net B(0, r_j)
    from scipy.spatial import cKDTree
    cum_pts, cum_vel = [], []
    for j in range(n_radii):
        if not radius_ok[j]:
            break
        cum_pts.extend(points[j])
        cum_vel.extend(vels[j])
        tree = cKDTree(np.asarray(cum_pts))
        for a, b in tree.query_pairs(match_tol):
            if np.max(np.abs(np.asarray(cum_vel[a]) - cum_vel[b])) > 10 * match_tol:
                radius_ok[j:] = False
                break
    floor = 0.0
    details = []
    for j in range(n_radii):
        if radius_ok[j]:
            floor = float(radii[j])
            details.append((float(radii[j]), True))
        else:
            details.append((float(radii[j]), False))
            break
    if return_details:
        return floor, details
    return floor


# ---------------------------------------------------------------------------
# smooth chart maps (for pushforward metrics)
# ---------------------------------------------------------------------------

class SmoothMap:
    """A chart self-map with optional analytic Jacobian and jet expansions."""

    def __init__(self, fn, jacobian_fn=None, jet_fn=None, name="map", fd_step=1e-5):
        self._fn = fn
        self._jacobian_fn = jacobian_fn
        self._jet_fn = jet_fn
        self.name = name
        self.fd_step = fd_step

    def __call__(self, x):
        return self._fn(np.asarray(x, dtype=float))

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        if self._jacobian_fn is not None:
            return self._jacobian_fn(x)
        d = x.size
        h = self.fd_step
        cols = []
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            cols.append((8.0 * (self(x + e) - self(x - e))
                         - (self(x + 2 * e) - self(x - 2 * e))) / (12.0 * h))
        return np.stack(cols, axis=1)

    def jet(self, x, degree, space):
        """Raw rows (dim_out, n_terms) of the expansion around x."""
        x = np.asarray(x, dtype=float)
        if self._jet_fn is not None:
            return self._jet_fn(x, degree, space)
        return fd_taylor(self._fn, x.size, x, degree,
                         max(10 * self.fd_step, 1e-3), space=space,
                         value_shape=(self(x).size,))

    @classmethod
    def linear(cls, A, b=None, name="linear"):
        A = np.asarray(A, dtype=float)
        b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float)

        def jet_fn(x, degree, space):
            rows = np.zeros((A.shape[0], space.n_terms))
            rows[:, 0] = A @ x + b
            rows[:, 1:1 + A.shape[1]] = A
            return rows

        return cls(lambda x: A @ x + b, jacobian_fn=lambda x: A.copy(),
                   jet_fn=jet_fn, name=name)


def _complex_mul(space, ar, ai, br, bi):
    return (space.mul(ar, br) - space.mul(ai, bi),
            space.mul(ar, bi) + space.mul(ai, br))


def holomorphic_jet(space, series):
    """Real 2-D jet rows of z -> sum_k series[k] zeta^k, zeta = x + i y."""
    pr, pi = space.const(1.0), space.zeros()
    xr, xi = space.var(0), space.var(1)
    out_r = series[0].real * pr
    out_i = series[0].imag * pr
    for k in range(1, min(len(series), space.degree + 1)):
        pr, pi = _complex_mul(space, pr, pi, xr, xi)
        out_r = out_r + series[k].real * pr - series[k].imag * pi
        out_i = out_i + series[k].real * pi + series[k].imag * pr
    return np.stack([out_r, out_i])


class MobiusMap(SmoothMap):
    """Fractional-linear map of the complex plane acting on real 2-D charts."""

    def __init__(self, matrix, name="mobius"):
        self.matrix = np.asarray(matrix, dtype=complex)
        super().__init__(self._call_real, jacobian_fn=self._jacobian_real,
                         jet_fn=self._jet_real, name=name)

    @classmethod
    def disc_automorphism(cls, a=0.0, theta=0.0):
        """z -> e^{i theta} (z - a) / (1 - conj(a) z)."""
        phase = np.exp(1j * theta)
        return cls([[phase, -phase * a], [-np.conj(a), 1.0]])

    def inverse(self):
        (al, be), (ga, de) = self.matrix
        return MobiusMap([[de, -be], [-ga, al]], name=self.name + "_inv")

    def complex_call(self, z):
        (al, be), (ga, de) = self.matrix
        return (al * z + be) / (ga * z + de)

    def complex_derivative(self, z):
        (al, be), (ga, de) = self.matrix
        return (al * de - be * ga) / (ga * z + de) ** 2

    def complex_series(self, z0, degree):
        """Coefficients of m(z0 + zeta) in powers of zeta."""
        (al, be), (ga, de) = self.matrix
        A = al * z0 + be
        C = ga * z0 + de
        if abs(C) < 1e-14:
            raise MetricError("mobius expansion at a pole")
        q = -ga / C
        series = [A / C]
        for k in range(1, degree + 1):
            series.append((A * q ** k + al * q ** (k - 1)) / C)
        return series

    def _call_real(self, x):
        w = self.complex_call(x[0] + 1j * x[1])
        return np.array([w.real, w.imag])

    def _jacobian_real(self, x):
        fp = self.complex_derivative(x[0] + 1j * x[1])
        return np.array([[fp.real, -fp.imag], [fp.imag, fp.real]])

    def _jet_real(self, x, degree, space):
        return holomorphic_jet(space, self.complex_series(x[0] + 1j * x[1], degree))


def pushforward_metric(inner, inverse_map, box=None, name=None, predicate=None):
    """The metric whose pullback under ``inverse_map`` is ``inner``.

    With psi the inverse chart map (target -> source), the result is
    g_hat(y) = J_psi(y)^T g(psi(y)) J_psi(y), so ``inverse_map``'s inverse is
    an isometry from ``inner`` onto the result.
    """
    d = inner.dim
    box = box if box is not None else inner.box
    name = name or f"pushforward({inner.name})"

    def matrix_fn(y):
        x = inverse_map(y)
        J = inverse_map.jacobian(y)
        return J.T @ inner.matrix(x) @ J

    def taylor_fn(y, degree, space):
        big = jet_space(d, degree + 1)
        psi_full = inverse_map.jet(y, degree + 1, big)
        x0 = psi_full[:, 0].copy()
        # Jacobian jets of psi: J[i, k] = d psi_i / d y_k
        Jrows = np.empty((d, d, space.n_terms))
        for i in range(d):
            for k in range(d):
                Jrows[i, k] = big.diff(psi_full[i], k)[:space.n_terms]
        g_inner = inner.taylor(x0, degree, space)
        delta = psi_full[:, :space.n_terms].copy()
        delta[:, 0] = 0.0
        M = space.monomial_matrix(list(delta))
        g_at = np.einsum("ijn,nm->ijm", g_inner, M)
        out = np.empty((d, d, space.n_terms))
        for a in range(d):
            for b in range(a, d):
                row = np.zeros(space.n_terms)
                for i in range(d):
                    for j in range(d):
                        row += space.mul(Jrows[i, a], space.mul(g_at[i, j], Jrows[j, b]))
                out[a, b] = row
                out[b, a] = row
        return out

    return ChartMetric(d, box, matrix_fn, taylor_fn=taylor_fn, name=name,
                       predicate=predicate)


# ---------------------------------------------------------------------------
# built-in metrics
# ---------------------------------------------------------------------------

def _conformal_metric(dim, box, lam, grad_lam, lam_jet, name, predicate=None):
    """g = exp(2 lam(x)) I with analytic derivatives and jets."""
    eye = np.eye(dim)

    def matrix_fn(p):
        return math.exp(2.0 * lam(p)) * eye

    def derivative_fn(p):
        f = math.exp(2.0 * lam(p))
        g = grad_lam(p)
        return 2.0 * f * g[:, None, None] * eye[None, :, :]

    def taylor_fn(p, degree, space):
        factor = space.exp(2.0 * lam_jet(p, space))
        out = np.zeros((dim, dim, space.n_terms))
        for i in range(dim):
            out[i, i] = factor
        return out

    return ChartMetric(dim, box, matrix_fn, derivative_fn=derivative_fn,
                       taylor_fn=taylor_fn, name=name, predicate=predicate)


def euclidean_metric(dim=2, halfwidth=10.0):
    box = Box.cube(dim, halfwidth)
    eye = np.eye(dim)
    zero = np.zeros((dim, dim, dim))

    def taylor_fn(p, degree, space):
        out = np.zeros((dim, dim, space.n_terms))
        for i in range(dim):
            out[i, i, 0] = 1.0
        return out

    return ChartMetric(dim, box, lambda p: eye.copy(),
                       derivative_fn=lambda p: zero.copy(),
                       taylor_fn=taylor_fn, name="euclidean")


def scaled_flat_metric(dim=2, factor=4.0, halfwidth=10.0):
    c = 0.5 * math.log(factor)
    box = Box.cube(dim, halfwidth)
    return _conformal_metric(
        dim, box,
        lam=lambda p: c,
        grad_lam=lambda p: np.zeros(dim),
        lam_jet=lambda p, space: space.const(c),
        name=f"flat*{factor}")


def poincare_disc_metric(chart_radius=0.93):
    """g = 4 (1 - |x|^2)^{-2} I on a disc chart inside the unit disc."""
    box = Box.cube(2, chart_radius)
    r2max = chart_radius ** 2

    def lam(p):
        return math.log(2.0) - math.log(1.0 - p @ p)

    def grad_lam(p):
        return 2.0 * p / (1.0 - p @ p)

    def lam_jet(p, space):
        q = space.zeros()
        for i in range(2):
            xi = space.var(i, base=p[i])
            q = q + space.mul(xi, xi)
        one_minus = space.const(1.0) - q
        return math.log(2.0) * space.const(1.0) + (-1.0) * space.log(one_minus)

    return _conformal_metric(
        2, box, lam, grad_lam, lam_jet, "poincare_disc",
        predicate=lambda p: p @ p < r2max)


def sphere_patch_metric(halfwidth=8.0):
    """Unit round sphere in a stereographic chart: g = 4 (1 + |x|^2)^{-2} I."""
    box = Box.cube(2, halfwidth)

    def lam(p):
        return math.log(2.0) - math.log(1.0 + p @ p)

    def grad_lam(p):
        return -2.0 * p / (1.0 + p @ p)

    def lam_jet(p, space):
        q = space.zeros()
        for i in range(2):
            xi = space.var(i, base=p[i])
            q = q + space.mul(xi, xi)
        return math.log(2.0) * space.const(1.0) - space.log(space.const(1.0) + q)

    return _conformal_metric(2, box, lam, grad_lam, lam_jet, "sphere_patch")


def conformal_bump_metric(bumps, dim=2, halfwidth=1.5, name="conformal_bumps"):
    """g = exp(2 lam) I with lam a sum of Gaussian bumps (amp, center, width)."""
    bumps = [(float(a), np.asarray(c, dtype=float), float(w)) for a, c, w in bumps]
    box = Box.cube(dim, halfwidth)

    def lam(p):
        return sum(a * math.exp(-((p - c) @ (p - c)) / (2.0 * w * w))
                   for a, c, w in bumps)

    def grad_lam(p):
        out = np.zeros(dim)
        for a, c, w in bumps:
            out += (a * math.exp(-((p - c) @ (p - c)) / (2.0 * w * w))
                    * (-(p - c) / (w * w)))
        return out

    def lam_jet(p, space):
        total = space.zeros()
        for a, c, w in bumps:
            q = space.zeros()
            for i in range(dim):
                xi = space.var(i, base=p[i] - c[i])
                q = q + space.mul(xi, xi)
            total = total + a * space.exp((-1.0 / (2.0 * w * w)) * q)
        return total

    return _conformal_metric(dim, box, lam, grad_lam, lam_jet, name)


def grid_metric(x_axis, y_axis, values, name="custom_grid", spline_degree=5):
    """Metric sampled on a 2-D lattice, evaluated by tensor splines.

    values has shape (nx, ny, 2, 2); Taylor jets come from exact spline
    derivatives, so requested degrees are capped at spline_degree - 1.
    """
    from scipy.interpolate import RectBivariateSpline
    x_axis = np.asarray(x_axis, dtype=float)
    y_axis = np.asarray(y_axis, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape[:2] != (x_axis.size, y_axis.size) or values.shape[2:] != (2, 2):
        raise MetricError("grid metric values must have shape (nx, ny, 2, 2)")
    splines = [[RectBivariateSpline(x_axis, y_axis, values[:, :, i, j],
                                    kx=spline_degree, ky=spline_degree)
                for j in range(2)] for i in range(2)]
    box = Box(np.array([x_axis[0], y_axis[0]]), np.array([x_axis[-1], y_axis[-1]]))
    max_deriv = spline_degree - 1

    def matrix_fn(p):
        out = np.empty((2, 2))
        for i in range(2):
            for j in range(2):
                out[i, j] = splines[i][j](p[0], p[1])[0, 0]
        return 0.5 * (out + out.T)

    def derivative_fn(p):
        out = np.empty((2, 2, 2))
        for l in range(2):
            dx, dy = (1, 0) if l == 0 else (0, 1)
            for i in range(2):
                for j in range(2):
                    out[l, i, j] = splines[i][j](p[0], p[1], dx=dx, dy=dy)[0, 0]
            out[l] = 0.5 * (out[l] + out[l].T)
        return out

    def taylor_fn(p, degree, space):
        if degree > max_deriv:
            raise MetricError(
                f"grid metric supports Taylor degree <= {max_deriv}, got {degree}")
        out = np.zeros((2, 2, space.n_terms))
        for r, alpha in enumerate(space.multi_indices):
            fact = math.factorial(int(alpha[0])) * math.factorial(int(alpha[1]))
            for i in range(2):
                for j in range(i, 2):
                    val = splines[i][j](p[0], p[1], dx=int(alpha[0]),
                                        dy=int(alpha[1]))[0, 0]
                    out[i, j, r] = val / fact
                    out[j, i, r] = out[i, j, r]
        return out

    return ChartMetric(2, box, matrix_fn, derivative_fn=derivative_fn,
                       taylor_fn=taylor_fn, name=name)


def rotation_matrix(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

_METRIC_BUILDERS = {
    "euclidean": lambda cfg: euclidean_metric(
        dim=int(cfg.get("dim", 2)), halfwidth=float(cfg.get("halfwidth", 10.0))),
    "scaled_flat": lambda cfg: scaled_flat_metric(
        dim=int(cfg.get("dim", 2)), factor=float(cfg.get("factor", 4.0)),
        halfwidth=float(cfg.get("halfwidth", 10.0))),
    "poincare_disc": lambda cfg: poincare_disc_metric(
        chart_radius=float(cfg.get("chart_radius", 0.93))),
    "sphere_patch": lambda cfg: sphere_patch_metric(
        halfwidth=float(cfg.get("halfwidth", 8.0))),
    "conformal_scalar": lambda cfg: conformal_bump_metric(
        bumps=[(b["amplitude"], b["center"], b["width"]) for b in cfg["bumps"]],
        dim=int(cfg.get("dim", 2)), halfwidth=float(cfg.get("halfwidth", 1.5))),
}


def build_metric(cfg):
    """Build a registered metric from a plain config mapping with a ``type``."""
    kind = cfg.get("type")
    if kind == "mobius_pushforward":
        base = build_metric(cfg["base"])
        phi = MobiusMap.disc_automorphism(
            a=complex(cfg.get("a_re", 0.0), cfg.get("a_im", 0.0)),
            theta=float(cfg.get("theta", 0.0)))
        return pushforward_metric(base, phi.inverse(), box=base.box,
                                  predicate=base.predicate,
                                  name=f"mobius*{base.name}")
    if kind == "custom_grid":
        return grid_metric(np.asarray(cfg["x_axis"]), np.asarray(cfg["y_axis"]),
                           np.asarray(cfg["values"]))
    if kind not in _METRIC_BUILDERS:
        raise MetricError(f"unknown metric type {kind!r}")
    return _METRIC_BUILDERS[kind](cfg)


def rotation_pushforward_family(base_family, angle, name=None):
    """The family whose members make the fixed rotation an isometry from base."""
    R = rotation_matrix(angle)
    inv = SmoothMap.linear(R.T, name="rotation_inv")

    def builder(t):
        inner = base_family.at(t)
        return pushforward_metric(inner, inv, box=inner.box,
                                  predicate=inner.predicate,
                                  name=f"rot*{inner.name}")

    return MetricFamily(base_family.t_domain, builder,
                        name=name or f"rot({base_family.name})")


def conformal_profile_family(bumps, t_domain=(-1.0, 1.0), dim=2, halfwidth=1.5,
                             profile="one_plus_t", name="conformal_family"):
    """Conformal bump metric with t-scaled amplitudes."""
    profiles = {
        "one_plus_t": lambda t: 1.0 + t,
        "cosine": lambda t: math.cos(t),
        "constant": lambda t: 1.0,
        "linear": lambda t: t,
    }
    prof = profiles[profile] if isinstance(profile, str) else profile

    def builder(t):
        scaled = [(a * prof(t), c, w) for a, c, w in bumps]
        return conformal_bump_metric(scaled, dim=dim, halfwidth=halfwidth,
                                     name=f"{name}@{t:.6g}")

    return MetricFamily(t_domain, builder, name=name)


def build_family(cfg):
    kind = cfg.get("type")
    if kind == "constant":
        metric = build_metric(cfg["metric"])
        return MetricFamily(tuple(cfg.get("t_domain", (-1.0, 1.0))),
                            lambda t: metric, name=f"const({metric.name})")
    if kind == "conformal_profile":
        return conformal_profile_family(
            bumps=[(b["amplitude"], b["center"], b["width"]) for b in cfg["bumps"]],
            t_domain=tuple(cfg.get("t_domain", (-1.0, 1.0))),
            dim=int(cfg.get("dim", 2)),
            halfwidth=float(cfg.get("halfwidth", 1.5)),
            profile=cfg.get("profile", "one_plus_t"))
    if kind == "rotation_pushforward":
        return rotation_pushforward_family(build_family(cfg["base"]),
                                           angle=float(cfg["angle"]))
    raise MetricError(f"unknown family type {kind!r}")
