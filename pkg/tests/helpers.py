"""Shared test oracles, kept independent of the jet-transport code paths."""

import numpy as np

from isojet.jets import jet_space
from isojet.metrics import exp_map, fornberg_weights


def pullback_matrix_fd(metric, frame, v, jac_step=1e-3, exp_rtol=1e-13):
    """Pulled-back metric of exp o frame at velocity coordinates v.

    Uses plain geodesic integration plus 4th-order finite-difference
    Jacobians; never touches the truncated-series transport.
    """
    d = metric.dim

    def E(w):
        return exp_map(metric, frame.point, frame.basis @ w, rtol=exp_rtol)

    cols = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = jac_step
        cols.append((8.0 * (E(v + e) - E(v - e))
                     - (E(v + 2 * e) - E(v - 2 * e))) / (12.0 * jac_step))
    J = np.stack(cols, axis=1)
    g = metric.matrix(E(v))
    return J.T @ g @ J


def pullback_taylor_fd(metric, frame, degree, grid_step=0.05, **kwargs):
    """Taylor coefficients of the normal-coordinate metric by stencil fitting.

    Returns packed symmetric coefficients with shape (n_terms, d(d+1)/2),
    ordered like the production invariant, but derived purely from sampled
    pullback matrices on a tensor grid.
    """
    d = metric.dim
    space = jet_space(d, degree)
    K = degree + 1
    offsets = grid_step * np.arange(-K, K + 1)
    W = fornberg_weights(0.0, offsets, degree)
    pairs = [(i, j) for i in range(d) for j in range(i, d)]
    vals = np.empty((offsets.size,) * d + (len(pairs),))
    for idx in np.ndindex(vals.shape[:-1]):
        v = np.array([offsets[i] for i in idx])
        S = pullback_matrix_fd(metric, frame, v, **kwargs)
        vals[idx] = [S[i, j] for i, j in pairs]
    out = vals
    for axis in range(d):
        out = np.tensordot(W, np.moveaxis(out, axis, 0), axes=(1, 0))
        out = np.moveaxis(out, 0, axis)
    import math
    coeffs = np.zeros((space.n_terms, len(pairs)))
    for r, alpha in enumerate(space.multi_indices):
        fact = np.prod([math.factorial(int(a)) for a in alpha])
        coeffs[r] = out[tuple(alpha)] / fact
    return coeffs
