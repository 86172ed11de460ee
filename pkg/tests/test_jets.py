import time

import numpy as np
import pytest

from isojet.jets import (
    Jet,
    JetError,
    JetMap,
    jet_arith,
    jet_compose,
    jet_invert,
    jet_space,
    jet_truncate,
)


def random_jet_map(rng, dim, degree, invertible=True, scale=0.3):
    """Jet map with zero constant term and a well-conditioned linear part."""
    space = jet_space(dim, degree)
    rows = rng.normal(size=(dim, space.n_terms))
    rows *= scale ** space.orders[None, :]
    rows[:, 0] = 0.0
    if invertible:
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        rows[:, 1:1 + dim] = q @ np.diag(rng.uniform(0.5, 2.0, size=dim))
    return JetMap.from_coeff_rows(space, rows)


def test_mul_polynomial_identity():
    # (1+x)(1-x) = 1 - x^2 at degree 2
    a = Jet.from_terms(1, 2, [((0,), 1.0), ((1,), 1.0)])
    b = Jet.from_terms(1, 2, [((0,), 1.0), ((1,), -1.0)])
    expected = Jet.from_terms(1, 2, [((0,), 1.0), ((2,), -1.0)])
    assert jet_arith(a, b, "mul").allclose(expected)


def test_additive_identity():
    rng = np.random.default_rng(0)
    space = jet_space(3, 3)
    a = Jet(space, rng.normal(size=(space.n_terms, 2)))
    zero = Jet.constant(space, [0.0, 0.0])
    assert jet_arith(a, zero, "add").allclose(a)


def test_mul_respects_truncation():
    # x^2 * x^2 = 0 at degree 3
    x2 = Jet.from_terms(1, 3, [((2,), 1.0)])
    out = x2 * x2
    assert out.max_abs() == 0.0


def test_scale():
    a = Jet.from_terms(2, 2, [((1, 0), 2.0), ((0, 2), -1.0)])
    out = jet_arith(a, -0.5, "scale")
    assert out.coefficient((1, 0))[0] == -1.0
    assert out.coefficient((0, 2))[0] == 0.5


def test_mul_commutative_associative():
    rng = np.random.default_rng(1)
    space = jet_space(2, 4)
    a, b, c = (Jet(space, rng.normal(size=(space.n_terms, 1))) for _ in range(3))
    assert (a * b).allclose(b * a, tol=1e-13 * max(1.0, (a * b).max_abs()))
    lhs = (a * b) * c
    rhs = a * (b * c)
    assert lhs.allclose(rhs, tol=1e-13 * max(1.0, lhs.max_abs()))


def test_value_dim_mismatch_raises():
    space = jet_space(2, 2)
    a = Jet.constant(space, [1.0, 2.0])
    b = Jet.constant(space, 1.0)
    with pytest.raises(JetError):
        _ = a + b
    with pytest.raises(JetError):
        _ = a * a  # vector values cannot multiply


def test_compose_direct_expansion():
    # f = x + x^2, g = 2x, degree 2: f(g) = 2x + 4x^2
    f = JetMap([Jet.from_terms(1, 2, [((1,), 1.0), ((2,), 1.0)])])
    g = JetMap([Jet.from_terms(1, 2, [((1,), 2.0)])])
    out = jet_compose(f, g)
    expected = Jet.from_terms(1, 2, [((1,), 2.0), ((2,), 4.0)])
    assert out.components[0].allclose(expected)


def test_compose_identity_law():
    rng = np.random.default_rng(2)
    f = random_jet_map(rng, 3, 3, invertible=False)
    ident = JetMap.identity(3, 3)
    assert jet_compose(f, ident).allclose(f, tol=1e-14)


def test_compose_associativity_spot():
    # computed coefficientwise by the two evaluation orders themselves
    rng = np.random.default_rng(3)
    f = random_jet_map(rng, 2, 3, invertible=False)
    g = random_jet_map(rng, 2, 3)
    h = random_jet_map(rng, 2, 3)
    lhs = jet_compose(jet_compose(f, g), h)
    rhs = jet_compose(f, jet_compose(g, h))
    assert lhs.allclose(rhs, tol=1e-12)


def test_compose_rejects_nonzero_constant():
    f = JetMap.identity(2, 2)
    space = jet_space(2, 2)
    g = JetMap([Jet.constant(space, 1.0), Jet.variable(space, 1)])
    with pytest.raises(JetError):
        jet_compose(f, g)
    # explicit opt-in drops the constant
    out = jet_compose(f, g, recenter=True)
    assert out.components[0].max_abs() == 0.0


def test_invert_identity():
    f = JetMap.identity(2, 3)
    assert jet_invert(f).allclose(f, tol=1e-14)


def test_invert_hand_oracle():
    # f = 2y + y^2 at degree 2; triangular solve by hand gives
    # g = x/2 - x^2/8, and f(g) = x exactly at this truncation.
    f = JetMap([Jet.from_terms(1, 2, [((1,), 2.0), ((2,), 1.0)])])
    g = jet_invert(f)
    expected = JetMap([Jet.from_terms(1, 2, [((1,), 0.5), ((2,), -0.125)])])
    assert g.allclose(expected, tol=1e-14)
    ident = JetMap.identity(1, 2)
    assert jet_compose(f, g).allclose(ident, tol=1e-14)


def test_invert_rotation_is_transpose():
    theta = 0.37
    c, s = np.cos(theta), np.sin(theta)
    space = jet_space(2, 3)
    rows = np.zeros((2, space.n_terms))
    rows[:, 1:3] = np.array([[c, -s], [s, c]])
    rot = JetMap.from_coeff_rows(space, rows)
    inv = jet_invert(rot)
    assert np.allclose(inv.linear_part(), np.array([[c, s], [-s, c]]), atol=1e-14)


def test_invert_singular_linear_part_raises():
    space = jet_space(2, 2)
    rows = np.zeros((2, space.n_terms))
    rows[0, 1] = 1.0  # second row identically zero
    f = JetMap.from_coeff_rows(space, rows)
    with pytest.raises(JetError):
        jet_invert(f)


def test_compose_invert_identity_property():
    rng = np.random.default_rng(4)
    for _ in range(25):
        d = int(rng.integers(1, 5))
        n = int(rng.integers(1, 5))
        f = random_jet_map(rng, d, n)
        g = jet_invert(f)
        ident = JetMap.identity(d, n)
        assert jet_compose(f, g).allclose(ident, tol=1e-12)
        assert jet_compose(g, f).allclose(ident, tol=1e-12)


def test_truncate_examples():
    # pi_1(1 + x + x^2) = 1 + x
    a = Jet.from_terms(1, 2, [((0,), 1.0), ((1,), 1.0), ((2,), 1.0)])
    t1 = jet_truncate(a, 1)
    assert t1.degree == 1
    assert t1.allclose(Jet.from_terms(1, 1, [((0,), 1.0), ((1,), 1.0)]))
    # projection fixes its range
    assert jet_truncate(a, 2).allclose(a)
    # pi_0 keeps the constant term
    t0 = jet_truncate(a, 0)
    assert t0.degree == 0 and t0.constant_term()[0] == 1.0
    with pytest.raises(JetError):
        jet_truncate(a, 3)


def test_truncate_composition_is_min():
    rng = np.random.default_rng(5)
    space = jet_space(2, 4)
    a = Jet(space, rng.normal(size=(space.n_terms, 1)))
    assert jet_truncate(jet_truncate(a, 3), 2).allclose(jet_truncate(a, 2))
    assert jet_truncate(jet_truncate(a, 2), 2).allclose(jet_truncate(a, 2))


def test_json_round_trip_bit_stable():
    rng = np.random.default_rng(6)
    space = jet_space(3, 3)
    a = Jet(space, rng.normal(size=(space.n_terms, 4)))
    b = Jet.from_json(a.to_json())
    assert np.array_equal(a.coeffs, b.coeffs)
    assert a.to_json() == b.to_json()


def test_evaluate_matches_polynomial():
    f = Jet.from_terms(2, 3, [((0, 0), 1.0), ((1, 1), 2.0), ((0, 3), -1.0)])
    x = np.array([0.3, -0.2])
    expected = 1.0 + 2.0 * 0.3 * -0.2 - (-0.2) ** 3
    assert np.allclose(f(x), [expected])


def test_series_helpers_match_scalar_functions():
    space = jet_space(1, 5)
    a = space.var(0, base=0.7)
    for fn, jfn in [(np.exp, space.exp), (np.log, space.log),
                    (lambda t: 1.0 / t, space.reciprocal)]:
        out = jfn(a)
        # compare against the scalar Taylor expansion at 0.7 by evaluation
        h = 0.01
        vals = Jet(space, out)(np.array([h]))
        assert abs(vals[0] - fn(0.7 + h)) < 1e-10


def test_compose_invert_speed_budget():
    # 100 random jets with d <= 4, N <= 4 under one second
    rng = np.random.default_rng(7)
    cases = []
    for _ in range(100):
        d = int(rng.integers(1, 5))
        n = int(rng.integers(1, 5))
        cases.append(random_jet_map(rng, d, n))
    start = time.perf_counter()
    worst = 0.0
    for f in cases:
        g = jet_invert(f)
        ident = JetMap.identity(f.dim_in, f.degree)
        resid = jet_compose(f, g)
        worst = max(worst, max(abs(a.coeffs - b.coeffs).max()
                               for a, b in zip(resid.components, ident.components)))
    elapsed = time.perf_counter() - start
    assert worst <= 1e-12
    assert elapsed < 1.0
