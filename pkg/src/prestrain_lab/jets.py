"""Truncated multivariate Taylor (jet) arithmetic.

A jet is a polynomial in ``nvars`` formal variables truncated at a total
degree, with coefficients that are numpy arrays of any shared shape
(scalars per grid node, 3x3 matrices per node, single scalars).  Products
are exact on the retained monomial set, which is always downward closed,
so the coefficient of any retained monomial equals the corresponding
partial derivative of the computed expression divided by the multi-index
factorial.

Composition with univariate smooth functions goes through the nilpotent
part; matrix square roots propagate through the defining equation
X @ X = S, solving one Sylvester equation per monomial in the
eigenbasis of the value-level root.  This sidesteps eigenvector
derivatives entirely, so coalescing eigenvalues cost nothing.
"""

from __future__ import annotations

import math
from itertools import product as _iterproduct

import numpy as np

from .errors import NotSPDError

__all__ = [
    "JetSpace",
    "Jet",
    "jet_matmul",
    "jet_scale",
    "jet_transpose",
    "jet_trace",
    "jet_det3",
    "exp_jet",
    "log_jet",
    "recip_jet",
    "powabs_jet",
    "spd_sqrt_jet",
]

# cap on elements materialized per multiplication block (float64)
_BLOCK_ELEMS = 1 << 24


def _monomials(nvars: int, order: int, caps, group_cap) -> list[tuple[int, ...]]:
    caps = tuple(caps) if caps is not None else (order,) * nvars
    group_vars, group_max = group_cap if group_cap is not None else ((), order)
    out = []
    for alpha in _iterproduct(*[range(min(c, order) + 1) for c in caps]):
        if sum(alpha) > order:
            continue
        if group_vars and sum(alpha[v] for v in group_vars) > group_max:
            continue
        out.append(alpha)
    out.sort(key=lambda a: (sum(a), tuple(-x for x in a)))
    return out


class JetSpace:
    """Monomial basis and multiplication tables for one truncation.

    Parameters
    ----------
    nvars, order : int
        Number of formal variables and total-degree cutoff.
    caps : sequence of int, optional
        Per-variable degree caps (defaults to ``order`` each).
    group_cap : (tuple of var indices, int), optional
        Joint cap on the summed degree of a variable group; used to prune
        bases where some directions only ever appear linearly.

    Instances are cached; obtain them through :meth:`get`.
    """

    _cache: dict = {}

    def __init__(self, nvars: int, order: int, caps=None, group_cap=None):
        self.nvars = nvars
        self.order = order
        self.monomials = _monomials(nvars, order, caps, group_cap)
        self.ncoeff = len(self.monomials)
        self.index = {m: i for i, m in enumerate(self.monomials)}
        self.degrees = np.array([sum(m) for m in self.monomials])

        # ordered pair table (ia, ib) -> iout, sorted by iout
        pairs = []
        for ia, ma in enumerate(self.monomials):
            da = sum(ma)
            for ib, mb in enumerate(self.monomials):
                if da + sum(mb) > order:
                    continue
                iout = self.index.get(tuple(x + y for x, y in zip(ma, mb)))
                if iout is not None:
                    pairs.append((iout, ia, ib))
        pairs.sort()
        arr = np.array(pairs, dtype=np.int64).reshape(-1, 3)
        self.pair_out = arr[:, 0]
        self.pair_a = arr[:, 1]
        self.pair_b = arr[:, 2]
        boundaries = np.flatnonzero(np.diff(self.pair_out)) + 1
        self.group_starts = np.concatenate([[0], boundaries])
        self.group_out = self.pair_out[self.group_starts]

        # interior pairs (both factors non-constant), grouped by output:
        # drives the square-root recursion
        mask = (self.degrees[self.pair_a] > 0) & (self.degrees[self.pair_b] > 0)
        self._interior = {}
        for iout in np.unique(self.pair_out[mask]):
            sel = mask & (self.pair_out == iout)
            self._interior[int(iout)] = (self.pair_a[sel], self.pair_b[sel])

    @classmethod
    def get(cls, nvars: int, order: int, caps=None, group_cap=None) -> "JetSpace":
        key = (
            nvars,
            order,
            tuple(caps) if caps is not None else None,
            (tuple(group_cap[0]), group_cap[1]) if group_cap is not None else None,
        )
        space = cls._cache.get(key)
        if space is None:
            space = cls._cache[key] = cls(nvars, order, caps, group_cap)
        return space

    # -- constructors --------------------------------------------------

    def constant(self, value, core_shape=()) -> "Jet":
        coeffs = np.zeros((self.ncoeff,) + tuple(core_shape))
        coeffs[0] = value
        return Jet(self, coeffs)

    def variable(self, var: int, value, core_shape=(), seed=1.0) -> "Jet":
        """value + seed * x_var; ``seed`` may be an array over the core shape."""
        coeffs = np.zeros((self.ncoeff,) + tuple(core_shape))
        coeffs[0] = value
        coeffs[self.index[tuple(1 if i == var else 0 for i in range(self.nvars))]] = seed
        return Jet(self, coeffs)

    def factorial(self, monomial: tuple[int, ...]) -> float:
        return float(math.prod(math.factorial(a) for a in monomial))


class Jet:
    """Coefficient array (ncoeff, *core) over a :class:`JetSpace`."""

    __slots__ = ("space", "coeffs")

    def __init__(self, space: JetSpace, coeffs: np.ndarray):
        self.space = space
        self.coeffs = coeffs

    @property
    def value(self) -> np.ndarray:
        return self.coeffs[0]

    def coefficient(self, monomial: tuple[int, ...]) -> np.ndarray:
        return self.coeffs[self.space.index[tuple(monomial)]]

    def derivative(self, monomial: tuple[int, ...]) -> np.ndarray:
        """Partial derivative d^alpha at the expansion point (= alpha! * coeff)."""
        return self.space.factorial(monomial) * self.coefficient(monomial)

    # -- linear structure ------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.space, self.coeffs + other.coeffs)
        out = self.coeffs.copy()
        out[0] = out[0] + other
        return Jet(self.space, out)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Jet):
            return Jet(self.space, self.coeffs - other.coeffs)
        out = self.coeffs.copy()
        out[0] = out[0] - other
        return Jet(self.space, out)

    def __rsub__(self, other):
        out = -self.coeffs
        out[0] = out[0] + other
        return Jet(self.space, out)

    def __neg__(self):
        return Jet(self.space, -self.coeffs)

    def scaled(self, factor) -> "Jet":
        """Multiply by a constant (scalar or array over the core shape)."""
        return Jet(self.space, self.coeffs * factor)

    def __mul__(self, other):
        if isinstance(other, Jet):
            return Jet(
                self.space,
                _convolve(self.space, self.coeffs, other.coeffs, _pair_mul),
            )
        return self.scaled(other)

    __rmul__ = __mul__

    def nilpotent(self) -> "Jet":
        out = self.coeffs.copy()
        out[0] = 0.0
        return Jet(self.space, out)

    def compose(self, series: list[np.ndarray]) -> "Jet":
        """Evaluate sum_m series[m] * h^m with h the nilpotent part.

        ``series[m]`` must equal f^(m)(value) / m! for the function being
        composed, evaluated over the core shape.
        """
        h = self.nilpotent()
        acc = self.space.constant(0.0, self.coeffs.shape[1:])
        acc.coeffs[0] = np.broadcast_to(series[0], acc.coeffs[0].shape).copy()
        power = None
        for m in range(1, len(series)):
            power = h if power is None else power * h
            acc = acc + power.scaled(series[m])
        return acc


def _pair_mul(a, b):
    return a * b


def _pair_matmul(a, b):
    return a @ b


def _convolve(space: JetSpace, ac: np.ndarray, bc: np.ndarray, pair_fn) -> np.ndarray:
    """Apply the ordered pair table in group-aligned blocks."""
    probe = pair_fn(ac[:1], bc[:1])
    out = np.zeros((space.ncoeff,) + probe.shape[1:], dtype=probe.dtype)
    npairs = len(space.pair_out)
    core = int(np.prod(probe.shape[1:])) or 1
    block_pairs = max(1, _BLOCK_ELEMS // core)

    starts = space.group_starts
    g0 = 0
    ngroups = len(starts)
    while g0 < ngroups:
        g1 = g0 + 1
        limit = starts[g0] + block_pairs
        while g1 < ngroups and starts[g1] <= limit:
            g1 += 1
        lo = starts[g0]
        hi = starts[g1] if g1 < ngroups else npairs
        prods = pair_fn(ac[space.pair_a[lo:hi]], bc[space.pair_b[lo:hi]])
        sums = np.add.reduceat(prods, starts[g0:g1] - lo, axis=0)
        out[space.group_out[g0:g1]] += sums
        g0 = g1
    return out


# ---------------------------------------------------------------------------
# matrix jets: core shape (*batch, 3, 3)
# ---------------------------------------------------------------------------


def jet_matmul(a: Jet, b: Jet) -> Jet:
    return Jet(a.space, _convolve(a.space, a.coeffs, b.coeffs, _pair_matmul))


def jet_scale(scalar: Jet, a: Jet) -> Jet:
    """Product of a scalar jet with a jet of any core shape."""
    extra = a.coeffs.ndim - scalar.coeffs.ndim
    sc = scalar.coeffs.reshape(scalar.coeffs.shape + (1,) * extra)
    return Jet(a.space, _convolve(a.space, sc, a.coeffs, _pair_mul))


def jet_transpose(a: Jet) -> Jet:
    return Jet(a.space, np.swapaxes(a.coeffs, -1, -2))


def jet_trace(a: Jet) -> Jet:
    return Jet(a.space, np.trace(a.coeffs, axis1=-2, axis2=-1))


def jet_entry(a: Jet, i: int, j: int) -> Jet:
    return Jet(a.space, a.coeffs[..., i, j])


def jet_det3(a: Jet) -> Jet:
    e = [[jet_entry(a, i, j) for j in range(3)] for i in range(3)]
    return (
        e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1])
        - e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0])
        + e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0])
    )


# ---------------------------------------------------------------------------
# univariate compositions
# ---------------------------------------------------------------------------


def exp_jet(g: Jet) -> Jet:
    a0 = g.value
    e = np.exp(a0)
    series = [e * (1.0 / math.factorial(m)) for m in range(g.space.order + 1)]
    return g.compose(series)


def log_jet(g: Jet) -> Jet:
    a0 = np.asarray(g.value)
    if np.any(a0 <= 0.0):
        raise ValueError("log composition requires a positive value part")
    series = [np.log(a0)]
    for m in range(1, g.space.order + 1):
        series.append(((-1.0) ** (m - 1) / m) * a0 ** (-float(m)))
    return g.compose(series)


def recip_jet(g: Jet) -> Jet:
    a0 = np.asarray(g.value)
    if np.any(a0 == 0.0):
        raise ValueError("reciprocal composition requires a nonzero value part")
    series = [(-1.0) ** m * a0 ** (-float(m + 1)) for m in range(g.space.order + 1)]
    return g.compose(series)


def powabs_jet(g: Jet, q: float) -> Jet:
    """|g|^q.  Exact for even integer q; otherwise needs a nonzero value part."""
    if q == 2.0:
        return g * g
    if float(q).is_integer() and int(q) % 2 == 0 and q >= 0:
        out = g.space.constant(1.0, g.coeffs.shape[1:])
        for _ in range(int(q)):
            out = out * g
        return out
    a0 = np.asarray(g.value)
    # |x|^q is C^floor(q) at zero with all existing derivatives equal to 0,
    # so zeros in the value part are fine while q exceeds the truncation order
    if q <= g.space.order and np.any(a0 == 0.0):
        raise ValueError(f"|x|^{q} is not smooth enough at x = 0 for jet composition")
    sgn = np.sign(a0)
    absa = np.abs(a0)
    series = [absa**q]
    coeff = 1.0
    for m in range(1, g.space.order + 1):
        coeff *= (q - (m - 1)) / m
        series.append(coeff * absa ** (q - m) * sgn**m)
    return g.compose(series)


# ---------------------------------------------------------------------------
# SPD square root through X @ X = S
# ---------------------------------------------------------------------------


def spd_sqrt_jet(s: Jet, spd_tol: float = 1e-12) -> Jet:
    """Jet of the principal square root of an SPD matrix jet.

    The value part is diagonalized once; every higher coefficient solves
    X0 X_a + X_a X0 = RHS_a in that eigenbasis, where the RHS folds the
    already-known lower-order products of the recursion.
    """
    space = s.space
    # core is (*batch, 3, 3) with matrix axes trailing; eigh batches directly
    w, v = np.linalg.eigh(s.value)
    wmin = float(np.min(w))
    if wmin <= spd_tol * max(1.0, float(np.max(np.abs(w)))):
        raise NotSPDError(
            f"matrix jet value part has eigenvalue {wmin!r}", eigenvalue=wmin
        )
    sq = np.sqrt(w)
    denom = sq[..., :, None] + sq[..., None, :]
    x0 = (v * sq[..., None, :]) @ np.swapaxes(v, -1, -2)

    coeffs = np.zeros_like(s.coeffs)
    coeffs[0] = x0
    vt = np.swapaxes(v, -1, -2)

    # graded recursion: monomials are sorted by degree, so every interior
    # product only references lower-degree coefficients already solved
    for idx in range(1, space.ncoeff):
        rhs = s.coeffs[idx].copy()
        interior = space._interior.get(idx)
        if interior is not None:
            ia, ib = interior
            rhs -= np.einsum("p...ij,p...jk->...ik", coeffs[ia], coeffs[ib])
        m = vt @ rhs @ v
        y = m / denom
        xa = v @ y @ vt
        coeffs[idx] = 0.5 * (xa + np.swapaxes(xa, -1, -2))
    return Jet(space, coeffs)
