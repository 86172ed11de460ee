import numpy as np
import pytest

from isojet.invariants import (
    BallAtlas,
    JetSignature,
    atlas_signature,
    normal_metric_jet,
    normal_transition_jet,
    signature_distance,
    signature_vector,
    sym_pack_indices,
)
from isojet.jets import jet_space, jet_truncate
from isojet.metrics import (
    MetricError,
    MobiusMap,
    conformal_bump_metric,
    euclidean_metric,
    orthonormal_frame,
    poincare_disc_metric,
    pushforward_metric,
    sphere_patch_metric,
)

from helpers import pullback_taylor_fd


def transported_frame(metric_target, phi, frame):
    """Push a frame through a map: base point and basis columns."""
    from isojet.metrics import Frame
    return Frame(phi(frame.point), phi.jacobian(frame.point) @ frame.basis)


# ---------------------------------------------------------------------------
# metric jets in normal coordinates
# ---------------------------------------------------------------------------

def test_metric_jet_flat_identity():
    m = euclidean_metric(2)
    fr = orthonormal_frame(m, [0.4, -0.2])
    S = normal_metric_jet(m, fr, 3)
    expected = np.zeros((jet_space(2, 3).n_terms, 3))
    expected[0] = [1.0, 0.0, 1.0]
    assert np.max(np.abs(S.coeffs - expected)) < 1e-12


@pytest.mark.parametrize("build", [
    euclidean_metric,
    poincare_disc_metric,
    sphere_patch_metric,
    lambda: conformal_bump_metric([(0.35, (0.3, -0.2), 0.6)]),
])
def test_metric_jet_normal_coordinate_facts(build):
    m = build()
    fr = orthonormal_frame(m, [0.15, 0.1], seed=np.array([[1.0, 0.3], [0.2, 1.0]]))
    S = normal_metric_jet(m, fr, 2)
    space = S.space
    # degree 0: identity; degree 1: zero
    const = S.coeffs[0]
    assert np.max(np.abs(const - [1.0, 0.0, 1.0])) < 1e-8
    deg1 = S.coeffs[space.orders == 1]
    assert np.max(np.abs(deg1)) < 1e-8


def test_metric_jet_matches_fd_pullback_oracle():
    m = conformal_bump_metric([(0.35, (0.3, -0.2), 0.6)])
    fr = orthonormal_frame(m, [0.1, 0.05])
    S = normal_metric_jet(m, fr, 2)
    oracle = pullback_taylor_fd(m, fr, 2)
    assert np.max(np.abs(S.coeffs - oracle)) < 1e-5


def test_metric_jet_sphere_curvature_pattern():
    # degree-2 coefficients of the round unit sphere follow
    # -(1/3)(delta_ij |x|^2 - x_i x_j)
    m = sphere_patch_metric()
    fr = orthonormal_frame(m, [0.3, 0.1], seed=np.array([[1.0, -0.1], [0.4, 1.0]]))
    S = normal_metric_jet(m, fr, 2)
    space = S.space
    r = {tuple(a): i for i, a in enumerate(space.multi_indices)}
    third = 1.0 / 3.0
    # packed columns: (0,0), (0,1), (1,1)
    assert abs(S.coeffs[r[(0, 2)], 0] + third) < 1e-9
    assert abs(S.coeffs[r[(2, 0)], 0]) < 1e-9
    assert abs(S.coeffs[r[(1, 1)], 1] - third) < 1e-9
    assert abs(S.coeffs[r[(2, 0)], 2] + third) < 1e-9
    assert abs(S.coeffs[r[(0, 2)], 2]) < 1e-9
    oracle = pullback_taylor_fd(m, fr, 2)
    assert np.max(np.abs(S.coeffs - oracle)) < 1e-5


def test_metric_jet_degree_monotone():
    m = poincare_disc_metric()
    fr = orthonormal_frame(m, [0.2, -0.1])
    S3 = normal_metric_jet(m, fr, 3)
    S2 = normal_metric_jet(m, fr, 2)
    assert jet_truncate(S3, 2).allclose(S2, tol=1e-10)


def test_metric_jet_frame_equivariance():
    # rotating the frame acts by substitution x -> Qx and conjugation of values
    m = conformal_bump_metric([(0.3, (0.25, 0.1), 0.5)])
    p = np.array([0.1, 0.0])
    fr = orthonormal_frame(m, p)
    theta = 0.6
    c, s = np.cos(theta), np.sin(theta)
    Q = np.array([[c, -s], [s, c]])
    from isojet.metrics import Frame
    fr_rot = Frame(p, fr.basis @ Q)
    S = normal_metric_jet(m, fr, 2)
    S_rot = normal_metric_jet(m, fr_rot, 2)
    space = S.space
    # evaluate both at matched arguments: S_rot(x) = Q^T S(Qx) Q
    rng = np.random.default_rng(0)
    pairs = sym_pack_indices(2)
    for _ in range(4):
        x = rng.normal(size=2) * 0.1

        def unpack(vals):
            out = np.empty((2, 2))
            for col, (i, j) in enumerate(pairs):
                out[i, j] = out[j, i] = vals[col]
            return out

        lhs = unpack(S_rot(x))
        rhs = Q.T @ unpack(S(Q @ x)) @ Q
        assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_metric_jet_requires_orthonormal_frame():
    m = poincare_disc_metric()
    from isojet.metrics import Frame
    bad = Frame([0.0, 0.0], np.eye(2))  # not orthonormal for g(0) = 4I
    with pytest.raises(MetricError):
        normal_metric_jet(m, bad, 2)


# ---------------------------------------------------------------------------
# transition jets
# ---------------------------------------------------------------------------

def test_transition_flat_translation():
    m = euclidean_metric(2)
    fr1 = orthonormal_frame(m, [1.0, 0.0])
    fr2 = orthonormal_frame(m, [0.0, 0.0])
    T = normal_transition_jet(m, fr1, fr2, 2)
    assert np.allclose(T.constant_term(), [-1.0, 0.0], atol=1e-10)
    lin = T.coeffs[1:3].T
    assert np.allclose(lin, np.eye(2), atol=1e-10)
    # all higher coefficients vanish
    assert np.max(np.abs(T.coeffs[3:])) < 1e-10


def test_transition_same_frame_identity():
    m = poincare_disc_metric()
    fr = orthonormal_frame(m, [0.15, 0.1])
    T = normal_transition_jet(m, fr, fr, 3)
    expect = np.zeros_like(T.coeffs)
    expect[1:3] = np.eye(2)
    assert np.max(np.abs(T.coeffs - expect)) < 1e-9


def test_transition_linear_part_metric_orthogonal():
    # the transition between normal charts is an isometry of the pullback
    # metrics, so its linear part carries the chart-1 pullback metric at T(0)
    # to the identity; the pullback value comes from the FD oracle
    from helpers import pullback_matrix_fd
    m = poincare_disc_metric()
    fr1 = orthonormal_frame(m, [0.0, 0.0])
    fr2 = orthonormal_frame(m, [0.3, 0.0])
    T = normal_transition_jet(m, fr1, fr2, 3)
    u2 = T.constant_term()
    L = T.coeffs[1:3].T
    G = pullback_matrix_fd(m, fr1, u2, jac_step=2e-3)
    assert np.max(np.abs(L.T @ G @ L - np.eye(2))) < 1e-8


# ---------------------------------------------------------------------------
# atlases and signatures
# ---------------------------------------------------------------------------

def test_atlas_flat_single_ball():
    m = euclidean_metric(2)
    atlas = BallAtlas.build(m, [[0.0, 0.0]], delta=0.5)
    assert atlas.edges == ()
    sig = atlas_signature(m, atlas, 2)
    assert len(sig.metric_jets) == 1 and len(sig.transition_jets) == 0
    expected = np.zeros_like(sig.metric_jets[0].coeffs)
    expected[0] = [1.0, 0.0, 1.0]
    assert np.max(np.abs(sig.metric_jets[0].coeffs - expected)) < 1e-12


def test_atlas_edges_by_distance():
    m = euclidean_metric(2)
    atlas = BallAtlas.build(m, [[0.0, 0.0], [0.5, 0.0], [3.0, 0.0]], delta=0.4)
    assert atlas.edges == ((0, 1),)


def test_atlas_duplicate_points_rejected():
    m = euclidean_metric(2)
    with pytest.raises(MetricError):
        BallAtlas.build(m, [[0.0, 0.0], [0.0, 0.0]], delta=0.3)


def test_atlas_injectivity_validation():
    m = sphere_patch_metric()
    # radius above the sampled floor must be rejected
    with pytest.raises(MetricError):
        BallAtlas.build(m, [[0.0, 0.0]], delta=3.5, validate_injectivity=True,
                        injectivity_kwargs={"n_directions": 8, "n_radii": 6,
                                            "det_floor": 1e-3})
    atlas = BallAtlas.build(m, [[0.0, 0.0]], delta=0.5, validate_injectivity=True,
                            injectivity_kwargs={"n_directions": 8, "n_radii": 6})
    assert atlas.delta == 0.5


def test_signature_permutation_consistency():
    m = poincare_disc_metric()
    pts = [[0.0, 0.0], [0.25, 0.0], [0.0, 0.55]]
    atlas = BallAtlas.build(m, pts, delta=0.3)
    assert atlas.edges == ((0, 1),)
    sig = atlas_signature(m, atlas, 2)
    perm = [2, 0, 1]  # edge (0,1) -> (1,2), orientation preserved
    atlas_p = atlas.permuted(perm)
    assert atlas_p.edges == ((1, 2),)
    sig_p = atlas_signature(m, atlas_p, 2)
    for new, old in enumerate(perm):
        assert sig_p.metric_jets[new].allclose(sig.metric_jets[old], tol=1e-10)
    assert sig_p.transition_jets[0].allclose(sig.transition_jets[0], tol=1e-9)


def test_signature_mobius_invariance():
    # an isometry with transported frames reproduces the signature
    m = poincare_disc_metric()
    phi = MobiusMap.disc_automorphism(a=0.2 + 0.1j, theta=0.5)
    pts = [[0.0, 0.0], [0.3, 0.0], [0.1, 0.28]]
    seeds = [np.array([[1.0, 0.2], [-0.1, 1.0]]), None, None]
    atlas = BallAtlas.build(m, pts, delta=0.3, seeds=seeds)
    ghat = pushforward_metric(m, phi.inverse(), box=m.box, predicate=m.predicate)
    frames_hat = [transported_frame(ghat, phi, fr) for fr in atlas.frames]
    atlas_hat = BallAtlas(frames=tuple(frames_hat), delta=atlas.delta,
                          edges=atlas.edges)
    sig = atlas_signature(m, atlas, 3)
    sig_hat = atlas_signature(ghat, atlas_hat, 3)
    assert signature_distance(sig, sig_hat) < 1e-7


def test_signature_distance_and_vector():
    m = euclidean_metric(2)
    atlas = BallAtlas.build(m, [[0.0, 0.0], [0.4, 0.0]], delta=0.3)
    sig = atlas_signature(m, atlas, 2)
    assert signature_distance(sig, sig) == 0.0
    v = signature_vector(sig)
    n_terms = jet_space(2, 2).n_terms
    assert v.size == 2 * n_terms * 3 + 1 * n_terms * 2


def test_signature_json_round_trip():
    m = poincare_disc_metric()
    atlas = BallAtlas.build(m, [[0.0, 0.0], [0.3, 0.1]], delta=0.3)
    sig = atlas_signature(m, atlas, 2)
    back = JetSignature.from_json_dict(sig.to_json_dict())
    assert signature_distance(sig, back) == 0.0
    assert sig.to_json() == back.to_json()
