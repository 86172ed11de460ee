"""Truncated multivariate power series (degree-N jets) with exact ring arithmetic.

A jet is a polynomial in ``dim_in`` variables, truncated at total degree
``degree``, with coefficients in R^value_dim.  Coefficients are stored densely,
ordered by graded lexicographic rank of the multi-index; all index bookkeeping
(multiplication pair tables, derivative maps, monomial ranks) lives in a
:class:`JetSpace` that is computed once per ``(dim_in, degree)`` and cached.

Hot paths (geodesic jet transport) work on raw coefficient arrays through the
``JetSpace`` kernels; :class:`Jet` / :class:`JetMap` are the immutable value
types used at module boundaries.
"""

import itertools
import json
import math

import numpy as np


class JetError(ValueError):
    pass


def _graded_lex_indices(dim, degree):
    """All multi-indices with |alpha| <= degree, graded then lexicographic."""
    out = []
    for total in range(degree + 1):
        level = [a for a in itertools.product(range(total + 1), repeat=dim)
                 if sum(a) == total]
        level.sort(reverse=True)  # lexicographic within the grade
        out.extend(level)
    return np.array(out, dtype=np.int64).reshape(len(out), dim)


_SPACE_CACHE = {}


def jet_space(dim_in, degree):
    """Shared arithmetic context for jets with the given shape."""
    key = (int(dim_in), int(degree))
    if key not in _SPACE_CACHE:
        _SPACE_CACHE[key] = JetSpace(*key)
    return _SPACE_CACHE[key]


class JetSpace:
    """Precomputed tables for the truncated polynomial ring in d variables.

    Do not construct directly; use :func:`jet_space` so tables are shared.
    """

    def __init__(self, dim_in, degree):
        if dim_in < 1 or degree < 0:
            raise JetError(f"invalid jet space ({dim_in}, {degree})")
        self.dim_in = dim_in
        self.degree = degree
        self.multi_indices = _graded_lex_indices(dim_in, degree)
        self.n_terms = len(self.multi_indices)
        self.orders = self.multi_indices.sum(axis=1)
        self.rank = {tuple(a): r for r, a in enumerate(self.multi_indices)}
        self._build_mul_table()
        self._build_diff_tables()
        # rank of the first nonzero variable's "parent" index, used to build
        # monomial products by a single multiplication each
        self._parent_var = np.full(self.n_terms, -1, dtype=np.int64)
        self._parent_rank = np.full(self.n_terms, -1, dtype=np.int64)
        for r in range(1, self.n_terms):
            alpha = self.multi_indices[r]
            i = int(np.nonzero(alpha)[0][0])
            parent = alpha.copy()
            parent[i] -= 1
            self._parent_var[r] = i
            self._parent_rank[r] = self.rank[tuple(parent)]

    def _build_mul_table(self):
        pairs_i, pairs_j, pairs_k = [], [], []
        for i, a in enumerate(self.multi_indices):
            for j, b in enumerate(self.multi_indices):
                if self.orders[i] + self.orders[j] > self.degree:
                    continue
                pairs_i.append(i)
                pairs_j.append(j)
                pairs_k.append(self.rank[tuple(a + b)])
        self._mi = np.array(pairs_i, dtype=np.int64)
        self._mj = np.array(pairs_j, dtype=np.int64)
        self._mk = np.array(pairs_k, dtype=np.int64)

    def _build_diff_tables(self):
        # d/dx_i maps coefficient at alpha to alpha_i * coeff at alpha - e_i
        self._diff_src = []
        self._diff_dst = []
        self._diff_mult = []
        for i in range(self.dim_in):
            src = np.nonzero(self.multi_indices[:, i] > 0)[0]
            dst = np.array([self.rank[tuple(a)] for a in
                            self.multi_indices[src] - np.eye(1, self.dim_in, i, dtype=np.int64)],
                           dtype=np.int64)
            self._diff_src.append(src)
            self._diff_dst.append(dst)
            self._diff_mult.append(self.multi_indices[src, i].astype(float))

    # ---- raw kernels on (n_terms,) float arrays -------------------------

    def zeros(self):
        return np.zeros(self.n_terms)

    def const(self, c):
        out = self.zeros()
        out[0] = c
        return out

    def var(self, i, base=0.0):
        """Raw coefficients of ``base + x_i``."""
        out = self.zeros()
        out[0] = base
        out[1 + i] = 1.0
        return out

    def mul(self, a, b):
        prod = a[self._mi] * b[self._mj]
        return np.bincount(self._mk, weights=prod, minlength=self.n_terms)

    def diff(self, a, i):
        out = self.zeros()
        out[self._diff_dst[i]] = self._diff_mult[i] * a[self._diff_src[i]]
        return out

    def truncate_mask(self, n):
        return self.orders <= n

    def monomial_matrix(self, components):
        """Rows = raw coefficients of prod_i components[i]^alpha_i per multi-index.

        ``components`` must have zero constant term; the result lets any jet f
        be composed with them as ``f_coeffs @ M``.
        """
        for c in components:
            if c[0] != 0.0:
                raise JetError("composition argument has nonzero constant term")
        M = np.empty((self.n_terms, self.n_terms))
        M[0] = self.const(1.0)
        for r in range(1, self.n_terms):
            M[r] = self.mul(M[self._parent_rank[r]], components[self._parent_var[r]])
        return M

    def apply_series(self, a, derivative_values):
        """Analytic function of a scalar jet from derivatives at its constant term.

        ``derivative_values[k]`` must be the k-th derivative of the function at
        ``a[0]``; the composition f(a) = sum_k f^(k)(a0)/k! (a - a0)^k is exact
        in the truncated ring.
        """
        u = a.copy()
        u[0] = 0.0
        out = self.const(derivative_values[0])
        power = self.const(1.0)
        for k in range(1, self.degree + 1):
            power = self.mul(power, u)
            out = out + (derivative_values[k] / math.factorial(k)) * power
        return out

    def reciprocal(self, a):
        c = a[0]
        if c == 0.0:
            raise JetError("reciprocal of jet with zero constant term")
        dvals = [(-1.0) ** k * math.factorial(k) / c ** (k + 1)
                 for k in range(self.degree + 1)]
        return self.apply_series(a, dvals)

    def exp(self, a):
        e = math.exp(a[0])
        return self.apply_series(a, [e] * (self.degree + 1))

    def log(self, a):
        c = a[0]
        if c <= 0.0:
            raise JetError("log of jet with non-positive constant term")
        dvals = [math.log(c)]
        dvals += [(-1.0) ** (k - 1) * math.factorial(k - 1) / c ** k
                  for k in range(1, self.degree + 1)]
        return self.apply_series(a, dvals)


class Jet:
    """Immutable truncated power series with values in R^value_dim.

    ``coeffs`` has shape ``(space.n_terms, value_dim)``; row r holds the
    coefficient vector of the multi-index ``space.multi_indices[r]``.
    """

    __slots__ = ("space", "coeffs")

    def __init__(self, space, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.ndim == 1:
            coeffs = coeffs[:, None]
        if coeffs.shape[0] != space.n_terms:
            raise JetError(
                f"coefficient rows {coeffs.shape[0]} != {space.n_terms} terms")
        coeffs = np.ascontiguousarray(coeffs)
        coeffs.flags.writeable = False
        self.space = space
        self.coeffs = coeffs

    # -- constructors ------------------------------------------------------

    @classmethod
    def constant(cls, space, value):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        coeffs = np.zeros((space.n_terms, value.size))
        coeffs[0] = value
        return cls(space, coeffs)

    @classmethod
    def variable(cls, space, i):
        """The scalar jet of the coordinate function x_i."""
        return cls(space, space.var(i))

    @classmethod
    def from_terms(cls, dim_in, degree, terms, value_dim=1):
        """Build from an iterable of (multi_index, value) pairs."""
        space = jet_space(dim_in, degree)
        coeffs = np.zeros((space.n_terms, value_dim))
        for alpha, value in terms:
            alpha = tuple(int(a) for a in alpha)
            if sum(alpha) > degree:
                raise JetError(f"term {alpha} exceeds degree {degree}")
            coeffs[space.rank[alpha]] = value
        return cls(space, coeffs)

    # -- basic queries -------------------------------------------------------

    @property
    def dim_in(self):
        return self.space.dim_in

    @property
    def degree(self):
        return self.space.degree

    @property
    def value_dim(self):
        return self.coeffs.shape[1]

    def coefficient(self, alpha):
        return self.coeffs[self.space.rank[tuple(int(a) for a in alpha)]].copy()

    def constant_term(self):
        return self.coeffs[0].copy()

    def max_abs(self):
        return float(np.max(np.abs(self.coeffs)))

    def __call__(self, x):
        """Evaluate the truncated polynomial at a point."""
        x = np.asarray(x, dtype=float)
        mono = np.prod(x[None, :] ** self.space.multi_indices, axis=1)
        return mono @ self.coeffs

    # -- ring operations -----------------------------------------------------

    def _check_compatible(self, other, need_same_value_dim=True):
        if self.space is not other.space:
            raise JetError(
                f"jet shape mismatch: ({self.dim_in},{self.degree}) vs "
                f"({other.dim_in},{other.degree})")
        if need_same_value_dim and self.value_dim != other.value_dim:
            raise JetError(
                f"value dimension mismatch: {self.value_dim} vs {other.value_dim}")

    def __add__(self, other):
        if not isinstance(other, Jet):
            return NotImplemented
        self._check_compatible(other)
        return Jet(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other):
        if not isinstance(other, Jet):
            return NotImplemented
        self._check_compatible(other)
        return Jet(self.space, self.coeffs - other.coeffs)

    def __neg__(self):
        return Jet(self.space, -self.coeffs)

    def __mul__(self, other):
        if isinstance(other, Jet):
            self._check_compatible(other, need_same_value_dim=False)
            if self.value_dim != 1 or other.value_dim != 1:
                raise JetError("jet multiplication requires scalar values")
            return Jet(self.space,
                       self.space.mul(self.coeffs[:, 0], other.coeffs[:, 0]))
        return Jet(self.space, self.coeffs * float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def allclose(self, other, tol=1e-12):
        self._check_compatible(other)
        return bool(np.max(np.abs(self.coeffs - other.coeffs)) <= tol)

    # -- serialization ---------------------------------------------------------

    def to_json_dict(self):
        return {
            "dim_in": self.dim_in,
            "degree": self.degree,
            "value_dim": self.value_dim,
            "coeffs": [[[int(a) for a in alpha], [float(v) for v in row]]
                       for alpha, row in zip(self.space.multi_indices, self.coeffs)],
        }

    @classmethod
    def from_json_dict(cls, data):
        space = jet_space(data["dim_in"], data["degree"])
        coeffs = np.zeros((space.n_terms, data["value_dim"]))
        for alpha, row in data["coeffs"]:
            coeffs[space.rank[tuple(alpha)]] = row
        return cls(space, coeffs)

    def to_json(self):
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_json_dict(json.loads(text))

    def __repr__(self):
        return (f"Jet(dim_in={self.dim_in}, degree={self.degree}, "
                f"value_dim={self.value_dim})")


class JetMap:
    """A truncated map R^dim_in -> R^len(components): one scalar jet per output."""

    __slots__ = ("components",)

    def __init__(self, components):
        components = tuple(components)
        if not components:
            raise JetError("a jet map needs at least one component")
        space = components[0].space
        for c in components:
            if c.space is not space:
                raise JetError("jet map components must share dim_in and degree")
            if c.value_dim != 1:
                raise JetError("jet map components must be scalar valued")
        self.components = components

    @property
    def space(self):
        return self.components[0].space

    @property
    def dim_in(self):
        return self.space.dim_in

    @property
    def dim_out(self):
        return len(self.components)

    @property
    def degree(self):
        return self.space.degree

    @classmethod
    def identity(cls, dim, degree):
        space = jet_space(dim, degree)
        return cls([Jet.variable(space, i) for i in range(dim)])

    @classmethod
    def from_coeff_rows(cls, space, rows):
        """Build from an array of shape (dim_out, space.n_terms)."""
        return cls([Jet(space, row) for row in np.asarray(rows, dtype=float)])

    def coeff_rows(self):
        return np.stack([c.coeffs[:, 0] for c in self.components])

    def constant_term(self):
        return np.array([c.coeffs[0, 0] for c in self.components])

    def linear_part(self):
        """The (dim_out, dim_in) matrix of first-order coefficients."""
        rows = self.coeff_rows()
        return rows[:, 1:1 + self.dim_in].copy()

    def __call__(self, x):
        return np.concatenate([c(x) for c in self.components])

    def allclose(self, other, tol=1e-12):
        if self.dim_out != other.dim_out:
            return False
        return all(a.allclose(b, tol) for a, b in zip(self.components, other.components))

    def to_json_dict(self):
        return {"components": [c.to_json_dict() for c in self.components]}

    @classmethod
    def from_json_dict(cls, data):
        return cls([Jet.from_json_dict(c) for c in data["components"]])

    def __repr__(self):
        return (f"JetMap(dim_in={self.dim_in}, dim_out={self.dim_out}, "
                f"degree={self.degree})")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def jet_arith(a, b, op):
    """Ring operation on jets: ``op`` is one of ``add``, ``mul``, ``scale``.

    ``scale`` multiplies jet ``a`` by the number ``b``; ``mul`` is the Cauchy
    product truncated at the shared degree and requires scalar values.
    """
    if op == "add":
        return a + b
    if op == "mul":
        return a * b
    if op == "scale":
        return a * float(b)
    raise JetError(f"unknown jet operation {op!r}")


def jet_truncate(f, n):
    """Project to degree n by dropping all coefficients with |alpha| > n."""
    if n > f.degree:
        raise JetError(f"cannot truncate degree-{f.degree} jet to degree {n}")
    if isinstance(f, JetMap):
        return JetMap([jet_truncate(c, n) for c in f.components])
    small = jet_space(f.dim_in, n)
    keep = f.space.truncate_mask(n)
    return Jet(small, f.coeffs[keep])


def jet_compose(f, g, recenter=False):
    """Taylor coefficients of the composition f(g(x)) truncated at the shared degree.

    ``g`` must have zero constant term unless ``recenter=True``, in which case
    the constant is dropped (the caller asserts that f's coefficients are
    already the expansion around g's constant term).
    """
    if isinstance(f, Jet):
        return jet_compose(JetMap([f]), g, recenter).components[0]
    if f.dim_in != g.dim_out:
        raise JetError(
            f"composition mismatch: f expects {f.dim_in} inputs, g has"
            f" {g.dim_out} outputs")
    if f.degree != g.degree:
        raise JetError("composition requires matching degrees")
    const = g.constant_term()
    if not recenter and np.any(const != 0.0):
        raise JetError(
            "inner map has nonzero constant term; pass recenter=True if f is "
            "expanded around it")
    space_f = f.space
    space_g = g.space
    comps = []
    for c in g.components:
        row = c.coeffs[:, 0].copy()
        row[0] = 0.0
        comps.append(row)
    # matrix of monomials g^alpha (rows follow f's multi-index order)
    if space_f is space_g:
        M = space_g.monomial_matrix(comps)
    else:
        M = np.empty((space_f.n_terms, space_g.n_terms))
        M[0] = space_g.const(1.0)
        for r in range(1, space_f.n_terms):
            M[r] = space_g.mul(M[space_f._parent_rank[r]],
                               comps[space_f._parent_var[r]])
    rows = f.coeff_rows() @ M
    return JetMap.from_coeff_rows(space_g, rows)


def jet_invert(f, cond_bound=1e8):
    """Compositional inverse of a jet map with f(0)=0 and invertible linear part.

    Solved degree by degree: with f = A + h (h of order >= 2), the inverse g
    satisfies g = A^{-1}(id - h(g)); each fixed-point sweep gains one degree,
    so ``degree - 1`` sweeps are exact at the truncation order.
    """
    if f.dim_in != f.dim_out:
        raise JetError("only square jet maps can be inverted")
    const = f.constant_term()
    if np.max(np.abs(const)) > 0.0:
        raise JetError("jet inversion requires zero constant term")
    A = f.linear_part()
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > cond_bound:
        raise JetError(
            f"linear part is singular or ill conditioned (cond={cond:.3g})")
    Ainv = np.linalg.inv(A)
    space = f.space
    d = f.dim_in
    high = f.coeff_rows()
    high[:, :1 + d] = 0.0  # strip constant and linear parts
    high_map = JetMap.from_coeff_rows(space, high)
    ident_rows = np.zeros((d, space.n_terms))
    ident_rows[:, 1:1 + d] = np.eye(d)
    g_rows = Ainv @ ident_rows
    for _ in range(space.degree - 1):
        hg = jet_compose(high_map, JetMap.from_coeff_rows(space, g_rows))
        g_rows = Ainv @ (ident_rows - hg.coeff_rows())
    return JetMap.from_coeff_rows(space, g_rows)
