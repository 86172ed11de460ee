"""Jet invariants of normal-coordinate charts over ball atlases.

Two families of invariants characterize local isometry of unions of metric
balls: the Taylor jet of the metric written in normal coordinates of an
orthonormal frame (one per ball), and the Taylor jet of the transition map
between the normal charts of two overlapping balls (one per overlap edge).
Both are computed by integrating the geodesic equation with coefficients in
the truncated power-series ring over the initial velocity.
"""

import json
from dataclasses import dataclass

import numpy as np

from .jets import Jet, JetMap, jet_space, jet_truncate
from .metrics import (
    MetricError,
    injectivity_radius_floor,
    log_map,
    metric_distance,
    orthonormal_frame,
    transport_exp_jet,
)

__all__ = [
    "BallAtlas", "JetSignature", "normal_metric_jet", "normal_transition_jet",
    "atlas_signature", "signature_distance", "signature_vector",
    "sym_pack_indices",
]


def sym_pack_indices(d):
    """Ordered (i, j) pairs with i <= j for packing symmetric matrices."""
    return [(i, j) for i in range(d) for j in range(i, d)]


def _restrict_rows(rows, small_space):
    # graded-lex spaces nest as prefixes
    return rows[..., :small_space.n_terms]


def normal_metric_jet(metric, frame, degree, rtol=1e-11):
    """Taylor jet at 0 of the metric pulled back through exp and the frame.

    Returns a Jet in the frame-coordinate variables with packed symmetric
    values (row order: (0,0), (0,1), ..., (1,1), ...).  In exact arithmetic
    the constant term is the identity and all first-order coefficients vanish
    (normal coordinates).
    """
    d = metric.dim
    if frame.dim != d:
        raise MetricError("frame dimension does not match metric")
    if frame.gram_defect(metric) > 1e-8:
        raise MetricError("frame is not orthonormal for this metric")
    space_n = jet_space(d, degree)
    # exp jet one degree higher: differentiation drops one order
    E = transport_exp_jet(metric, frame.point, frame.basis, degree + 1, rtol=rtol)
    big = jet_space(d, degree + 1)
    J = np.empty((d, d, space_n.n_terms))
    for i in range(d):
        for k in range(d):
            J[i, k] = _restrict_rows(big.diff(E[i], k), space_n)
    delta = _restrict_rows(E, space_n).copy()
    delta[:, 0] = 0.0  # expansion is centered at the base point
    M = space_n.monomial_matrix(list(delta))
    g_rows = metric.taylor(frame.point, degree, space_n)
    g_at = np.einsum("ijn,nm->ijm", g_rows, M)
    pairs = sym_pack_indices(d)
    coeffs = np.empty((space_n.n_terms, len(pairs)))
    for col, (a, b) in enumerate(pairs):
        row = np.zeros(space_n.n_terms)
        for i in range(d):
            for j in range(d):
                row += space_n.mul(J[i, a], space_n.mul(g_at[i, j], J[j, b]))
        coeffs[:, col] = row
    return Jet(space_n, coeffs)


def normal_transition_jet(metric, frame1, frame2, degree, rtol=1e-11,
                          log_tol=1e-12):
    """Taylor jet at 0 of the transition between the two normal charts.

    The map sends frame2-normal coordinates to frame1-normal coordinates:
    x -> (exp o L_1)^{-1}((exp o L_2)(x)).  Computed as the jet of exp at
    frame2 composed with the inverse of the exp jet at frame1 recentered at
    frame2's base point.  Requires the base points to be within each other's
    normal balls.
    """
    d = metric.dim
    space = jet_space(d, degree)
    p1, p2 = frame1.point, frame2.point
    v12 = log_map(metric, p1, p2, tol=log_tol, rtol=rtol)
    u2 = frame1.coords(v12)
    A = transport_exp_jet(metric, p2, frame2.basis, degree, rtol=rtol)
    C = transport_exp_jet(metric, p1, frame1.basis, degree, v_center=u2,
                          rtol=rtol)
    c0 = C[:, 0].copy()
    shoot_err = float(np.max(np.abs(c0 - p2)))
    if shoot_err > 1e-8 * max(1.0, float(np.max(np.abs(p2)))):
        raise MetricError(
            f"transition jet recentering failed (shooting error {shoot_err:.3g}); "
            "base points may be too far apart")
    A_c = A.copy()
    A_c[:, 0] -= c0
    resid_const = np.max(np.abs(A_c[:, 0]))
    A_c[:, 0] = 0.0  # within log tolerance of zero; see check above
    if resid_const > 1e-8:
        raise MetricError("transition jet composition constant too large")
    C_c = C.copy()
    C_c[:, 0] = 0.0
    inv = jet_invert_rows(space, C_c)
    composed = compose_rows(space, inv, A_c)
    composed[:, 0] += u2
    return Jet(space, composed.T)


def jet_invert_rows(space, rows):
    """Raw-row wrapper around compositional inversion of a square jet map."""
    from .jets import jet_invert
    inv = jet_invert(JetMap.from_coeff_rows(space, rows))
    return inv.coeff_rows()


def compose_rows(space, f_rows, g_rows):
    """Raw-row wrapper around jet composition (g must have zero constants)."""
    comps = [g_rows[i].copy() for i in range(g_rows.shape[0])]
    M = space.monomial_matrix(comps)
    return f_rows @ M


# ---------------------------------------------------------------------------
# ball atlases and signatures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BallAtlas:
    """Frames at distinct base points with a shared metric-ball radius.

    ``edges`` lists index pairs (i, j), i < j, of balls that overlap
    (distance between base points below twice the radius).
    """
    frames: tuple
    delta: float
    edges: tuple

    @property
    def size(self):
        return len(self.frames)

    @classmethod
    def build(cls, metric, points, delta, seeds=None, validate_injectivity=False,
              injectivity_kwargs=None, edge_guard=1e-9):
        """Construct frames by orthonormalization and detect overlap edges.

        Base points must be pairwise distinct; the overlap criterion is the
        strict inequality dist(p_i, p_j) < 2 delta with a small guard band so
        boundary ties are excluded.  ``validate_injectivity=True`` certifies
        delta against a sampled injectivity floor at every base point (the
        floor is itself a sampled certificate, not the true radius).
        """
        points = [np.asarray(p, dtype=float) for p in points]
        m = len(points)
        for i in range(m):
            for j in range(i + 1, m):
                if np.max(np.abs(points[i] - points[j])) < 1e-12:
                    raise MetricError(f"atlas base points {i} and {j} coincide")
        if seeds is None:
            seeds = [None] * m
        frames = tuple(orthonormal_frame(metric, p, seed)
                       for p, seed in zip(points, seeds))
        if validate_injectivity:
            kwargs = dict(n_directions=32, n_radii=8)
            kwargs.update(injectivity_kwargs or {})
            for fr in frames:
                floor = injectivity_radius_floor(metric, fr.point,
                                                 2.5 * delta, **kwargs)
                if floor <= delta:
                    raise MetricError(
                        f"ball radius {delta} exceeds sampled injectivity floor "
                        f"{floor:.4g} at {fr.point}")
        edges = []
        for i in range(m):
            for j in range(i + 1, m):
                dist = metric_distance(metric, points[i], points[j])
                if dist < 2.0 * delta * (1.0 - edge_guard):
                    edges.append((i, j))
        return cls(frames=frames, delta=float(delta), edges=tuple(edges))

    def permuted(self, perm):
        """Atlas with frames reordered by ``perm`` (edges relabeled)."""
        inv = {old: new for new, old in enumerate(perm)}
        frames = tuple(self.frames[old] for old in perm)
        edges = tuple(sorted(tuple(sorted((inv[i], inv[j]))) for i, j in self.edges))
        return BallAtlas(frames=frames, delta=self.delta, edges=edges)


@dataclass(frozen=True)
class JetSignature:
    """Per-ball metric jets and per-edge transition jets of an atlas."""
    metric_jets: tuple
    transition_jets: tuple
    edges: tuple
    degree: int

    def to_json_dict(self):
        return {
            "degree": self.degree,
            "edges": [list(e) for e in self.edges],
            "metric_jets": [j.to_json_dict() for j in self.metric_jets],
            "transition_jets": [j.to_json_dict() for j in self.transition_jets],
        }

    def to_json(self):
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, data):
        return cls(
            metric_jets=tuple(Jet.from_json_dict(j) for j in data["metric_jets"]),
            transition_jets=tuple(Jet.from_json_dict(j)
                                  for j in data["transition_jets"]),
            edges=tuple(tuple(e) for e in data["edges"]),
            degree=int(data["degree"]),
        )

    def truncated(self, n):
        return JetSignature(
            metric_jets=tuple(jet_truncate(j, n) for j in self.metric_jets),
            transition_jets=tuple(jet_truncate(j, n) for j in self.transition_jets),
            edges=self.edges,
            degree=n,
        )


def atlas_signature(metric, atlas, degree, rtol=1e-11):
    """Assemble the metric jets per frame and transition jets per edge."""
    s_jets = tuple(normal_metric_jet(metric, fr, degree, rtol=rtol)
                   for fr in atlas.frames)
    t_jets = tuple(normal_transition_jet(metric, atlas.frames[i],
                                         atlas.frames[j], degree, rtol=rtol)
                   for i, j in atlas.edges)
    for j in s_jets:
        w = np.linalg.eigvalsh(_sym_unpack(j.constant_term()))
        if w.min() <= 0.0:
            raise MetricError("metric jet constant term is not positive definite")
    return JetSignature(metric_jets=s_jets, transition_jets=t_jets,
                        edges=atlas.edges, degree=degree)


def _sym_unpack(packed):
    n = packed.size
    d = int((np.sqrt(8 * n + 1) - 1) / 2)
    out = np.empty((d, d))
    for col, (i, j) in enumerate(sym_pack_indices(d)):
        out[i, j] = out[j, i] = packed[col]
    return out


def signature_vector(sig):
    """All coefficients as one flat vector (frames first, then edges)."""
    parts = [j.coeffs.ravel() for j in sig.metric_jets]
    parts += [j.coeffs.ravel() for j in sig.transition_jets]
    return np.concatenate(parts) if parts else np.zeros(0)


def signature_distance(sig_a, sig_b):
    """Max coefficientwise absolute difference between two signatures."""
    if sig_a.edges != sig_b.edges or sig_a.degree != sig_b.degree:
        raise MetricError("signatures are not comparable (edges or degree differ)")
    va, vb = signature_vector(sig_a), signature_vector(sig_b)
    if va.size != vb.size:
        raise MetricError("signatures are not comparable (sizes differ)")
    if va.size == 0:
        return 0.0
    return float(np.max(np.abs(va - vb)))
