"""Coupled elastic energy densities with prestrain.

The density W(phi, F) couples a scalar order parameter to a deformation
gradient through a multiplicative prestrain: an invertible base density
of neo-Hookean type is evaluated at F*B(phi) or B(phi)*F, where
B(phi) = exp(phi * M_B) stays symmetric positive definite for every phi,
and an optional quadratic well 0.5*phi^2 anchors the order parameter.

Two evaluation paths coexist:

* closed-form value + first derivatives, batched over grid nodes, for
  the solver right-hand sides (no eigenvector computation anywhere:
  eigenvalues come from the trigonometric cubic, matrix roots from a
  quadratic interpolation polynomial);
* truncated Taylor (jet) evaluation of the same formulas for mixed
  derivatives up to fourth order, which feeds the linearized symbols,
  the a-priori correction tensors, and certification of the convexity
  assumptions.

Everything here is pure and immutable; arrays of shape (..., 3, 3) are
processed whole.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .errors import NotSPDError, OutOfDomainError
from .jets import (
    Jet,
    JetSpace,
    exp_jet,
    jet_det3,
    jet_matmul,
    jet_scale,
    jet_trace,
    jet_transpose,
    log_jet,
    powabs_jet,
    recip_jet,
)
from .kernels import (
    KIND_CODES,
    PreparedInvariants,
    density_eval,
    inner_eval,
    matmul33,
)
from .linalg3 import det3, rotations_from_quaternions

__all__ = [
    "BaseDensity",
    "PrestrainMap",
    "DensityModel",
    "DerivativeStack",
    "sqrt_spd",
    "eval_density",
    "derivatives",
    "gradient_jvp",
    "coercivity_check",
    "axiom_check",
    "dist_to_SO3",
    "appendix_inequality_check",
]

_EYE = np.eye(3)

# coordinate convention used by every dense derivative tensor:
# index 0 is phi, indices 1..9 are F11, F12, F13, F21, ..., F33 (row-major)
NCOORD = 10


def _as_batch(g):
    g = np.asarray(g, dtype=float)
    if g.shape[-2:] != (3, 3):
        raise ValueError(f"expected trailing 3x3 axes, got shape {g.shape}")
    return g


# ---------------------------------------------------------------------------
# base densities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaseDensity:
    """Frame-invariant stored density of the deformation gradient alone.

    variant 'W01': tr(C) - 2 tr(sqrt C) + 3 + |log det G|^q
    variant 'W02': tr(C) - 2 tr(sqrt C) + 3 + |1/det G - 1|^q
    variant 'CaseStudy': |C - Id|^2  (finite for det G <= 0; kept as the
    counterexample that breaks the distance-to-rotations lower bound)

    with C = G^T G.  W01/W02 blow up as det G -> 0+ and are undefined for
    det G <= 0, which callers receive as OutOfDomain.
    """

    variant: str = "W01"
    q: float = 2.0

    def __post_init__(self):
        if self.variant not in ("W01", "W02", "CaseStudy"):
            raise ValueError(f"unknown base density variant {self.variant!r}")
        if self.variant != "CaseStudy" and not self.q > 1.0:
            raise ValueError(f"exponent must exceed 1, got {self.q}")

    @property
    def needs_positive_det(self) -> bool:
        return self.variant != "CaseStudy"

    def _check_domain(self, d: np.ndarray):
        dmin = float(np.min(d))
        if dmin <= 0.0:
            raise OutOfDomainError(determinant=dmin)

    @property
    def kind_code(self) -> int:
        return KIND_CODES[self.variant]

    def value(self, g) -> np.ndarray:
        w, _, d = density_eval(_as_batch(g), self.q, self.kind_code, need_grad=False)
        if self.needs_positive_det:
            self._check_domain(d)
        return w

    def value_and_gradient(self, g) -> tuple[np.ndarray, np.ndarray]:
        """(W0(G), dW0/dG), batched.  One eigenvalue solve, no eigenvectors."""
        w, grad, d = density_eval(_as_batch(g), self.q, self.kind_code, need_grad=True)
        if self.needs_positive_det:
            self._check_domain(d)
        return w, grad

    def inner_dw0_g(self, g) -> np.ndarray:
        """<dW0/dG, G>, via eigenvalues alone (no inverse, no polar factor).

        The three terms contract to traces: <2G - 2R, G> = 2 tr C - 2 tr sqrt(C),
        <G^{-T}, G> = 3, <adj(G)^T, G> = 3 det G, <4G(C - Id), G> = 4 tr(C^2 - C).
        """
        inner, d = inner_eval(_as_batch(g), self.q, self.kind_code)
        if self.needs_positive_det:
            self._check_domain(d)
        return inner

    def eval_jet(self, gj: Jet) -> Jet:
        """Scalar jet of W0 along a matrix jet G."""
        c = jet_matmul(jet_transpose(gj), gj)
        if self.variant == "CaseStudy":
            e = c - _EYE
            return jet_trace(jet_matmul(e, e))
        from .jets import spd_sqrt_jet

        body = jet_trace(c) - 2.0 * jet_trace(spd_sqrt_jet(c)) + 3.0
        d = jet_det3(gj)
        dmin = float(np.min(d.value))
        if dmin <= 0.0:
            raise OutOfDomainError(determinant=dmin)
        if self.variant == "W01":
            return body + powabs_jet(log_jet(d), self.q)
        return body + powabs_jet(recip_jet(d) - 1.0, self.q)


# ---------------------------------------------------------------------------
# prestrain
# ---------------------------------------------------------------------------


class PrestrainMap:
    """B(phi) = exp(phi * M_B) for a fixed symmetric generator M_B.

    Symmetry of the generator makes B(phi) symmetric positive definite
    for every real phi, with B(0) = Id and B'(0) = M_B; B commutes with
    M_B, so B'(phi) = M_B B(phi) on either side.  The spectral data of
    M_B is precomputed once and reused by both evaluation paths.
    """

    def __init__(self, m_b):
        m = np.asarray(m_b, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"generator must be 3x3, got {m.shape}")
        if not np.allclose(m, m.T, atol=1e-12, rtol=0.0):
            raise ValueError("prestrain generator must be symmetric")
        self.m_b = 0.5 * (m + m.T)
        d, qmat = np.linalg.eigh(self.m_b)
        self._eigs = d
        # rank-one spectral projectors, shape (3, 3, 3) indexed by eigenpair
        self._proj = np.einsum("ik,jk->kij", qmat, qmat)
        self.is_zero = bool(np.all(self.m_b == 0.0))
        self.is_isotropic = bool(
            np.allclose(self.m_b, d.mean() * _EYE, atol=1e-14, rtol=0.0)
        )
        self._iso_rate = float(d.mean()) if self.is_isotropic else None

    @property
    def frobenius(self) -> float:
        return float(np.sqrt(np.sum(self.m_b**2)))

    def value(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        if self.is_zero:
            return np.broadcast_to(_EYE, phi.shape + (3, 3)).copy()
        if self.is_isotropic:
            return np.exp(self._iso_rate * phi)[..., None, None] * _EYE
        return np.einsum(
            "...k,kij->...ij", np.exp(phi[..., None] * self._eigs), self._proj
        )

    def dvalue(self, phi) -> np.ndarray:
        """B'(phi) = M_B B(phi)."""
        phi = np.asarray(phi, dtype=float)
        if self.is_zero:
            return np.zeros(phi.shape + (3, 3))
        scale = self._eigs * np.exp(phi[..., None] * self._eigs)
        return np.einsum("...k,kij->...ij", scale, self._proj)

    def eval_jet(self, phi_jet: Jet, batch_shape: tuple) -> Jet:
        space = phi_jet.space
        if self.is_zero:
            return space.constant(_EYE, batch_shape + (3, 3))
        coeffs = np.zeros((space.ncoeff,) + batch_shape + (3, 3))
        for rate, proj in zip(self._eigs, self._proj):
            ej = exp_jet(phi_jet.scaled(rate))
            coeffs += ej.coeffs[..., None, None] * proj
        return Jet(space, coeffs)


# ---------------------------------------------------------------------------
# composite model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityModel:
    """W(phi, F): base density at the prestrained gradient plus the well.

    composition 'right':  W0(F B(phi))   (prestrain applied in material frame)
    composition 'left':   W0(B(phi) F)
    composition 'none':   W0(F), phi enters only through the well
    """

    base: BaseDensity = field(default_factory=BaseDensity)
    prestrain: PrestrainMap = field(default_factory=lambda: PrestrainMap(np.zeros((3, 3))))
    composition: str = "right"
    quadratic: bool = True

    def __post_init__(self):
        if self.composition not in ("right", "left", "none"):
            raise ValueError(f"unknown composition {self.composition!r}")

    def _gmat(self, phi, f, b=None):
        if self.composition == "none":
            return f
        if b is None:
            b = self.prestrain.value(phi)
        return f @ b if self.composition == "right" else b @ f

    def value_and_first(self, phi, f):
        """W, dW/dF, dW/dphi and det F over a shared batch.

        det F tracks interpenetration; the sign of the prestrained
        determinant agrees with it, so the domain guard inside the base
        density covers both.  Isotropic and zero generators skip every
        matrix product the structure makes diagonal.
        """
        phi = np.asarray(phi, dtype=float)
        f = _as_batch(f)
        base = self.base
        pres = self.prestrain
        if self.composition == "none" or pres.is_zero:
            w0, dw0, detg = density_eval(f, base.q, base.kind_code)
            d_f = dw0
            d_phi = np.zeros(phi.shape)
            detf = detg
        elif pres.is_isotropic:
            # B = s Id with s = exp(m phi): G = sF either side,
            # dW/dF = s dW0, dW/dphi = m <dW0, G>
            m = pres._iso_rate
            s = np.exp(m * phi)[..., None, None]
            g = s * f
            w0, dw0, detg = density_eval(g, base.q, base.kind_code)
            d_f = s * dw0
            d_phi = m * np.einsum("...ij,...ij->...", dw0, g)
            detf = detg * np.exp(-3.0 * m * phi)
        else:
            b = pres.value(phi)
            g = matmul33(f, b) if self.composition == "right" else matmul33(b, f)
            w0, dw0, detg = density_eval(g, base.q, base.kind_code)
            if self.composition == "right":
                d_f = matmul33(dw0, b)
                # dG/dphi = G M_B since B' = B M_B and the factors commute
                d_phi = np.einsum("...ij,...ij->...", dw0, matmul33(g, pres.m_b))
            else:
                d_f = matmul33(b, dw0)
                d_phi = np.einsum("...ij,...ij->...", dw0, matmul33(pres.m_b, g))
            # det B(phi) = exp(phi tr M_B)
            detf = detg * np.exp(-np.trace(pres.m_b) * phi)
        if base.needs_positive_det:
            base._check_domain(detg)
        if self.quadratic:
            w0 = w0 + 0.5 * phi**2
            d_phi = d_phi + phi
        return w0, d_f, d_phi, detf

    def diffusion_potential(self, phi, f):
        """dW/dphi alone; eigenvalue-only when the generator is isotropic."""
        phi = np.asarray(phi, dtype=float)
        f = _as_batch(f)
        pres = self.prestrain
        if self.composition == "none" or pres.is_zero:
            return phi.copy() if self.quadratic else np.zeros(phi.shape)
        if pres.is_isotropic:
            m = pres._iso_rate
            g = np.exp(m * phi)[..., None, None] * f
            d_phi = m * self.base.inner_dw0_g(g)
        else:
            b = pres.value(phi)
            g = matmul33(f, b) if self.composition == "right" else matmul33(b, f)
            _, dw0 = self.base.value_and_gradient(g)
            if self.composition == "right":
                d_phi = np.einsum("...ij,...ij->...", dw0, matmul33(g, pres.m_b))
            else:
                d_phi = np.einsum("...ij,...ij->...", dw0, matmul33(pres.m_b, g))
        return d_phi + phi if self.quadratic else d_phi

    def prepare(self, f) -> "PreparedDensity | None":
        """Factor one gradient field for repeated evaluation at varying phi.

        Only available when the prestrain acts as a scalar multiple of the
        identity (or not at all), which is what makes G = s(phi) F with the
        heavy per-node invariants independent of phi.  Returns None for a
        general anisotropic generator; callers fall back to full evals.
        """
        if self.composition != "none" and not (
            self.prestrain.is_zero or self.prestrain.is_isotropic
        ):
            return None
        return PreparedDensity(self, f)

    def eval_jet(self, phi_jet: Jet, f_jet: Jet) -> Jet:
        """Scalar jet of W from jets of phi and F over a shared batch."""
        pres = self.prestrain
        if self.composition == "none" or pres.is_zero:
            gj = f_jet
        elif pres.is_isotropic:
            # G = exp(m phi) F on either side: one scalar exponential and
            # a scalar product replace three exponentials and a matmul
            sj = exp_jet(phi_jet.scaled(pres._iso_rate))
            gj = jet_scale(sj, f_jet)
        else:
            batch = phi_jet.coeffs.shape[1:]
            bj = pres.eval_jet(phi_jet, batch)
            gj = jet_matmul(f_jet, bj) if self.composition == "right" else jet_matmul(bj, f_jet)
        w = self.base.eval_jet(gj)
        if self.quadratic:
            w = w + (phi_jet * phi_jet).scaled(0.5)
        return w


class PreparedDensity:
    """Density evaluations at a frozen gradient field, cheap in phi.

    Built by DensityModel.prepare; one call to the heavy invariant
    kernel, then stress/potential re-evaluate in a few flops per node.
    The effective scale is s = exp(m phi) with m the isotropic rate
    (s = 1 when phi does not enter the elastic part).
    """

    def __init__(self, model: DensityModel, f):
        self.model = model
        f = _as_batch(f)
        pres = model.prestrain
        if model.composition == "none" or pres.is_zero:
            self._rate = 0.0
        else:
            self._rate = pres._iso_rate
        self._inv = PreparedInvariants(f, model.base.q, model.base.kind_code)
        if model.base.needs_positive_det:
            dmin = float(np.min(self._inv.det))
            if dmin <= 0.0:
                raise OutOfDomainError(determinant=dmin)

    @property
    def det_f(self) -> np.ndarray:
        return self._inv.det_f

    def _scale(self, phi):
        if self._rate == 0.0:
            return np.ones(self._inv.batch)
        return np.exp(self._rate * np.asarray(phi, dtype=float))

    def stress_and_value(self, phi):
        """(dW/dF, W) at the prepared gradient for this phi field."""
        phi = np.asarray(phi, dtype=float)
        w, grad, _ = self._inv.apply(self._scale(phi), need_grad=True, need_inner=False)
        if self.model.quadratic:
            w = w + 0.5 * phi**2
        return grad, w

    def potential(self, phi):
        """dW/dphi at the prepared gradient for this phi field."""
        phi = np.asarray(phi, dtype=float)
        if self._rate == 0.0:
            return phi.copy() if self.model.quadratic else np.zeros(phi.shape)
        _, _, inner = self._inv.apply(
            self._scale(phi), need_grad=False, need_inner=True
        )
        d_phi = self._rate * inner
        return d_phi + phi if self.model.quadratic else d_phi


# ---------------------------------------------------------------------------
# spec'd operations
# ---------------------------------------------------------------------------


def sqrt_spd(s, tol: float = 1e-12) -> np.ndarray:
    """Unique SPD square root via eigendecomposition; batched over leading axes."""
    s = _as_batch(s)
    if not np.allclose(s, np.swapaxes(s, -1, -2), atol=1e-10, rtol=0.0):
        raise NotSPDError("matrix is not symmetric")
    w, v = np.linalg.eigh(s)
    wmin = float(np.min(w))
    if wmin <= tol * max(1.0, float(np.max(np.abs(w)))):
        raise NotSPDError(f"eigenvalue {wmin!r} not positive", eigenvalue=wmin)
    return (v * np.sqrt(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


def eval_density(model: DensityModel, phi: float, f) -> float:
    """Single-point density value; raises OutOfDomain past det G <= 0."""
    w, _, _, _ = model.value_and_first(np.asarray(float(phi)), np.asarray(f, dtype=float))
    return float(w)


class DerivativeStack:
    """Dense mixed partials of W at one point, to a requested order.

    Coordinates: index 0 is phi, 1..9 are the row-major entries of F.
    ``d1`` is the (d_phi, d_F) pair; ``d2``/``d3``/``d4`` are dense fully
    symmetric tensors with that index convention, present when the stack
    was built to a high enough order.
    """

    def __init__(self, point, value, tensors: dict[int, np.ndarray]):
        self.point = point
        self.value = value
        self._tensors = tensors
        self.order = max(tensors) if tensors else 0

    @property
    def d1(self):
        t = self._tensors[1]
        return float(t[0]), t[1:].reshape(3, 3).copy()

    @property
    def d_phi(self) -> float:
        return float(self._tensors[1][0])

    @property
    def d_F(self) -> np.ndarray:
        return self._tensors[1][1:].reshape(3, 3).copy()

    @property
    def d2(self) -> np.ndarray:
        return self._tensors[2]

    @property
    def d3(self) -> np.ndarray:
        return self._tensors[3]

    @property
    def d4(self) -> np.ndarray:
        return self._tensors[4]

    def tensor(self, order: int) -> np.ndarray:
        return self._tensors[order]


def derivatives(model: DensityModel, phi: float, f, order: int = 4) -> DerivativeStack:
    """All mixed partials of W at (phi, F) up to ``order`` (1..4)."""
    if not 1 <= order <= 4:
        raise ValueError(f"order must be between 1 and 4, got {order}")
    f = np.asarray(f, dtype=float)
    space = JetSpace.get(NCOORD, order)
    phi_jet = space.variable(0, float(phi))
    fc = np.zeros((space.ncoeff, 3, 3))
    fc[0] = f
    for i in range(3):
        for j in range(3):
            fc[space.index[_unit(1 + 3 * i + j)]][i, j] = 1.0
    w = model.eval_jet(phi_jet, Jet(space, fc))

    tensors = {}
    for m in range(1, order + 1):
        t = np.zeros((NCOORD,) * m)
        for idx, mono in enumerate(space.monomials):
            if sum(mono) != m:
                continue
            deriv = space.factorial(mono) * w.coeffs[idx]
            axes = []
            for v, p in enumerate(mono):
                axes.extend([v] * p)
            for perm in set(permutations(axes)):
                t[perm] = deriv
        tensors[m] = t
    return DerivativeStack((float(phi), f.copy()), float(w.value), tensors)


def _unit(i: int) -> tuple:
    return tuple(1 if v == i else 0 for v in range(NCOORD))


def gradient_jvp(model: DensityModel, phi, f, dphi, df, chunk: int = 8192):
    """Directional derivative of (dW/dF, dW/dphi) along (dphi, dF).

    Exact Hessian contraction through order-2 jets: one direction
    variable carrying the perturbation, ten probe variables capped at
    joint degree one, so only the 22 monomials {1, s, x_i, s x_i}
    survive.  Batched over the grid with node chunking.
    """
    phi = np.asarray(phi, dtype=float)
    f = _as_batch(f)
    dphi = np.broadcast_to(np.asarray(dphi, dtype=float), phi.shape)
    df = np.broadcast_to(np.asarray(df, dtype=float), f.shape)
    space = JetSpace.get(
        NCOORD + 1, 2, caps=(1,) * (NCOORD + 1), group_cap=(tuple(range(1, NCOORD + 1)), 1)
    )
    out_df = np.empty_like(f)
    out_dphi = np.empty_like(phi)
    flat_phi = phi.reshape(-1)
    flat_f = f.reshape(-1, 3, 3)
    flat_dphi = dphi.reshape(-1)
    flat_df = df.reshape(-1, 3, 3)
    of = out_df.reshape(-1, 3, 3)
    op = out_dphi.reshape(-1)
    n = flat_phi.shape[0]
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        nb = hi - lo
        pc = np.zeros((space.ncoeff, nb))
        pc[0] = flat_phi[lo:hi]
        pc[space.index[_unit11(0)]] = flat_dphi[lo:hi]
        pc[space.index[_unit11(1)]] = 1.0
        fc = np.zeros((space.ncoeff, nb, 3, 3))
        fc[0] = flat_f[lo:hi]
        fc[space.index[_unit11(0)]] = flat_df[lo:hi]
        for i in range(3):
            for j in range(3):
                fc[space.index[_unit11(2 + 3 * i + j)]][:, i, j] = 1.0
        w = model.eval_jet(Jet(space, pc), Jet(space, fc))
        mixed = _unit11(0)
        op[lo:hi] = w.coeffs[space.index[_add(mixed, _unit11(1))]]
        for i in range(3):
            for j in range(3):
                of[lo:hi, i, j] = w.coeffs[
                    space.index[_add(mixed, _unit11(2 + 3 * i + j))]
                ]
    return out_df, out_dphi


def _unit11(i: int) -> tuple:
    return tuple(1 if v == i else 0 for v in range(NCOORD + 1))


def _add(a: tuple, b: tuple) -> tuple:
    return tuple(x + y for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# certification
# ---------------------------------------------------------------------------

# orthonormal basis of R x Sym(3) inside the 10 coordinates
_SYM_BASIS = None


def _sym_basis() -> np.ndarray:
    global _SYM_BASIS
    if _SYM_BASIS is None:
        cols = [np.zeros(NCOORD) for _ in range(7)]
        cols[0][0] = 1.0
        for n, (i, j) in enumerate([(0, 0), (1, 1), (2, 2)]):
            cols[1 + n][1 + 3 * i + j] = 1.0
        s = 1.0 / math.sqrt(2.0)
        for n, (i, j) in enumerate([(0, 1), (0, 2), (1, 2)]):
            cols[4 + n][1 + 3 * i + j] = s
            cols[4 + n][1 + 3 * j + i] = s
        _SYM_BASIS = np.stack(cols, axis=1)
    return _SYM_BASIS


@dataclass(frozen=True)
class CoercivityReport:
    gamma_estimate: float
    passed: bool
    hessian: np.ndarray

    def as_dict(self) -> dict:
        return {"gamma_estimate": self.gamma_estimate, "pass": self.passed}


def coercivity_check(model: DensityModel) -> CoercivityReport:
    """Minimal eigenvalue of D^2 W(0, Id) restricted to R x Sym(3)."""
    hess = derivatives(model, 0.0, _EYE, order=2).d2
    basis = _sym_basis()
    restricted = basis.T @ hess @ basis
    gamma = float(np.linalg.eigvalsh(restricted)[0])
    return CoercivityReport(gamma, gamma > 0.0, hess)


def dist_to_SO3(f) -> float | np.ndarray:
    """Frobenius distance to the rotation group, batched over leading axes.

    With det F > 0 the closest rotation is the polar factor and the
    distance collects (sigma_i - 1)^2 over singular values; with
    det F < 0 the smallest singular value flips sign instead.
    """
    f = _as_batch(f)
    sigma = np.linalg.svd(f, compute_uv=False)  # descending
    d = det3(f)
    base = (sigma - 1.0) ** 2
    flipped = base.copy()
    flipped[..., 2] = (sigma[..., 2] + 1.0) ** 2
    dist2 = np.where(d > 0.0, base.sum(-1), flipped.sum(-1))
    out = np.sqrt(dist2)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class AxiomResult:
    passed: bool
    detail: dict

    def as_dict(self) -> dict:
        return {"pass": self.passed, **self.detail}


@dataclass(frozen=True)
class AxiomReport:
    rotation_invariance: AxiomResult
    compression_blowup: AxiomResult
    zero_at_identity: AxiomResult
    rotation_distance_bound: AxiomResult

    @property
    def all_passed(self) -> bool:
        return (
            self.rotation_invariance.passed
            and self.compression_blowup.passed
            and self.zero_at_identity.passed
            and self.rotation_distance_bound.passed
        )

    def as_dict(self) -> dict:
        return {
            "rotation_invariance": self.rotation_invariance.as_dict(),
            "compression_blowup": self.compression_blowup.as_dict(),
            "zero_at_identity": self.zero_at_identity.as_dict(),
            "rotation_distance_bound": self.rotation_distance_bound.as_dict(),
            "all_passed": self.all_passed,
        }


def axiom_check(
    base: BaseDensity,
    samples: int = 10_000,
    seed: int = 0,
    growth_threshold: float = 100.0,
) -> AxiomReport:
    """Certify the four structural axioms of a base density by sampling.

    (frame invariance, blow-up under compression to zero volume, zero at
    the identity, quadratic lower bound by the distance to rotations)
    Reports, never raises: failures carry a witness.
    """
    rng = np.random.default_rng(seed)

    # -- (i) invariance under left rotations, sampled near SO(3)
    rots0 = rotations_from_quaternions(rng.normal(size=(samples, 4)))
    pert = rng.normal(size=(samples, 3, 3))
    pert *= 0.3 / np.maximum(
        np.sqrt(np.einsum("...ij,...ij->...", pert, pert))[..., None, None], 1e-30
    )
    f_samp = rots0 @ (_EYE + pert)
    rots = rotations_from_quaternions(rng.normal(size=(samples, 4)))
    w_f = base.value(f_samp)
    w_rf = base.value(rots @ f_samp)
    rot_err = np.abs(w_rf - w_f) / (1.0 + np.abs(w_f))
    worst = float(rot_err.max())
    res_i = AxiomResult(worst <= 1e-10, {"worst_relative_change": worst})

    # -- (ii) monotone blow-up along diag(t, 1, 1), t down to 1e-12
    ts = np.geomspace(1.0, 1e-12, 61)
    fs = np.zeros((ts.size, 3, 3)) + _EYE
    fs[:, 0, 0] = ts
    vals = base.value(fs)
    increasing = bool(np.all(np.diff(vals) >= -1e-12 * (1.0 + np.abs(vals[:-1]))))
    final = float(vals[-1])
    res_ii = AxiomResult(
        increasing and final > growth_threshold,
        {
            "monotone_under_compression": increasing,
            "value_at_t_1e-12": final,
            "threshold": growth_threshold,
        },
    )

    # -- (iii) exact zero at the identity
    w_id = float(base.value(_EYE))
    res_iii = AxiomResult(w_id == 0.0, {"value_at_identity": w_id})

    # -- (iv) W0 >= c dist^2(., SO(3)); canonical reflections probed first
    candidates = [np.diag(v).astype(float) for v in ([-1, 1, 1], [1, -1, 1], [1, 1, -1])]
    spread = rng.normal(size=(samples, 3, 3))
    near = rots0 + 0.5 * spread / np.sqrt(
        np.einsum("...ij,...ij->...", spread, spread)
    )[..., None, None]
    far = rng.normal(size=(samples // 4, 3, 3)) * 2.0
    pool = np.concatenate([np.stack(candidates), near, far], axis=0)
    dist2 = np.maximum(dist_to_SO3(pool) ** 2, 1e-30)
    if base.needs_positive_det:
        finite = det3(pool) > 0.0  # det <= 0 means value +inf: bound holds there
        pool, dist2 = pool[finite], dist2[finite]
    ratio = base.value(pool) / dist2
    imin = int(np.argmin(ratio))
    min_ratio = float(ratio[imin])
    res_iv = AxiomResult(
        min_ratio > 1e-6,
        {"min_ratio": min_ratio, "witness": pool[imin].tolist()},
    )

    return AxiomReport(res_i, res_ii, res_iii, res_iv)


@dataclass(frozen=True)
class AppendixReport:
    criterion_value: float
    criterion_holds: bool
    sampled_min_margin: float
    counterexample_found: bool

    @property
    def certified(self) -> bool:
        return self.criterion_holds and self.sampled_min_margin >= -1e-10

    def as_dict(self) -> dict:
        return {
            "criterion_value": self.criterion_value,
            "criterion_holds": self.criterion_holds,
            "sampled_min_margin": self.sampled_min_margin,
            "counterexample_found": self.counterexample_found,
            "certified": self.certified,
        }


def appendix_inequality_check(
    c: float, m_b, samples: int = 100_000, seed: int = 0
) -> AppendixReport:
    """Certify |p|^2 + |sym E + p M|^2 >= c (|p|^2 + |sym E|^2) on the sphere.

    The closed-form sufficient criterion is 1 - c - c/(1-c) |M|^2 > 0;
    sampling reports the worst margin independently so a failed criterion
    with no sampled counterexample stays distinguishable from a genuine
    violation.
    """
    if not 0.0 < c < 1.0:
        raise ValueError(f"constant must lie in (0, 1), got {c}")
    m = np.asarray(m_b, dtype=float)
    mnorm2 = float(np.sum(m**2))
    criterion = 1.0 - c - c / (1.0 - c) * mnorm2

    rng = np.random.default_rng(seed)
    z = rng.normal(size=(samples, NCOORD))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    p = z[:, 0]
    e = z[:, 1:].reshape(-1, 3, 3)
    sym_e = 0.5 * (e + np.swapaxes(e, -1, -2))
    shifted = sym_e + p[:, None, None] * m
    lhs = p**2 + np.einsum("...ij,...ij->...", shifted, shifted)
    rhs = p**2 + np.einsum("...ij,...ij->...", sym_e, sym_e)
    margin = float(np.min(lhs - c * rhs))
    return AppendixReport(criterion, criterion > 0.0, margin, margin < -1e-10)
