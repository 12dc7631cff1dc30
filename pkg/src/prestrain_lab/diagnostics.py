"""Measured quantities along runs: energy balance, growth functionals, twins.

Everything here is a pure read of a state snapshot (dynamic or
quasi-static: anything carrying ``w`` and ``phi`` fields, plus ``v``
when kinetic terms apply), so records can be recomputed bit-identically
from serialized states.  The expensive pieces -- the chain-rule
remainder tensors and the augmented energy built from them -- evaluate
a fourth-order derivative stack of the density at every node; callers
schedule those at a coarser stride than the cheap per-record scalars.

The CSV schema emitted by :func:`write_csv` is part of the package's
external interface and is consumed by the plotting layer; its column
names are fixed even where the in-code API prefers longer names.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement, permutations

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .dynamic import deformation_values
from .energy import DensityModel, gradient_jvp
from .errors import GridMismatchError
from .jets import Jet, JetSpace
from .linalg3 import det3
from .spectral import ScalarField, gradient, inverse_laplacian

__all__ = [
    "CSV_COLUMNS",
    "DiagnosticsRecord",
    "ChainRuleStack",
    "DecayBudget",
    "total_energy",
    "regularized_energy",
    "dissipation_rate",
    "energy_law_residual",
    "chain_rule_remainder",
    "augmented_energy",
    "h3_size",
    "decay_budget_update",
    "twin_divergence",
    "invariants_snapshot",
    "gather_record",
    "write_csv",
]

_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
_PAIR_SLOT = {p: 4 + m for m, p in enumerate(_PAIRS)}

# unordered third-derivative index triples with their permutation counts
_TRIPLES = tuple(
    (t, len(set(permutations(t)))) for t in combinations_with_replacement(range(3), 3)
)


def _velocity(state):
    return getattr(state, "v", None)


def _pkey(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a <= b else (b, a)


def _density_values(model: DensityModel, phi_vals, f_vals) -> np.ndarray:
    prep = model.prepare(f_vals)
    if prep is not None:
        _, w = prep.stress_and_value(phi_vals)
    else:
        w, _, _, _ = model.value_and_first(phi_vals, f_vals)
    return w


def _spectral_sq(field, weight) -> float:
    """volume * sum over modes/components of weight * |coeffs|^2 (Parseval)."""
    g = field.grid
    mag = np.abs(field.coeffs) ** 2
    return float(g.volume * np.sum(g.parseval_weight * weight * mag))


# ---------------------------------------------------------------------------
# per-snapshot scalars
# ---------------------------------------------------------------------------


def total_energy(state, model: DensityModel) -> float:
    """Integral of 0.5 |u_t|^2 + W(phi, Id + grad w) over the box.

    The doubled convention, int |u_t|^2 + 2 W, used as the initial-size
    weight in the growth bound, is exactly twice this value.
    Nonnegative whenever the state is inside the density's domain.
    """
    grid = state.grid
    f = deformation_values(state.w)
    w_vals = _density_values(model, state.phi.values(), f)
    total = grid.integrate(w_vals)
    v = _velocity(state)
    if v is not None:
        vv = v.values()
        total += 0.5 * grid.integrate(np.einsum("i...,i...->...", vv, vv))
    return float(total)


def regularized_energy(state, model: DensityModel, eps: float) -> float:
    """total_energy plus the elastic work (eps/2) ||grad w||_L2^2 stored by the
    eps * Laplacian(u) forcing; this is the energy that closes the balance
    law on eps > 0 runs (on the torus the constant part of grad u drops)."""
    extra = 0.5 * eps * _spectral_sq(state.w, state.grid.k2)
    return total_energy(state, model) + extra


def dissipation_rate(state, model: DensityModel) -> float:
    """Dissipated power of the order-parameter flux.

    phi_t = Laplacian(dW/dphi) is formed spectrally from the dealiased
    potential (matching the integrator), lifted through the inverse
    Laplacian, and integrated as |grad (-Lap)^{-1} phi_t|^2.  The
    algebraically simplified form int |grad(dW/dphi - mean)|^2 is
    recomputed through the physical-space gradient and must agree to
    1e-10: the identity grad (-Lap)^{-1} Lap g = -grad g is exact per
    mode, so disagreement flags a broken transform pipeline rather than
    discretization error.
    """
    grid = state.grid
    f = deformation_values(state.w)
    pot = model.diffusion_potential(state.phi.values(), f)
    pot_field = ScalarField(grid, grid.to_spectral(pot) * grid.dealias_mask)
    phi_t = ScalarField(grid, -grid.k2 * pot_field.coeffs)
    psi_t = inverse_laplacian(phi_t)
    primary = _spectral_sq(psi_t, grid.k2)

    grad_vals = gradient(pot_field).values()
    simplified = grid.integrate(np.einsum("i...,i...->...", grad_vals, grad_vals))
    if abs(primary - simplified) > 1e-10 * max(1.0, abs(primary)):
        raise AssertionError(
            f"dissipation paths disagree: {primary!r} vs {simplified!r}"
        )
    return float(primary)


def h3_size(state) -> float:
    """Squared cubic Sobolev size: ||u_t||_H3^2 + ||grad u - Id||_H3^2 + ||phi||_H3^2.

    Quasi-static states carry no velocity; that term is then zero.
    """
    parts = gradient(state.w).sobolev_norm(3) ** 2 + state.phi.sobolev_norm(3) ** 2
    v = _velocity(state)
    if v is not None:
        parts += v.sobolev_norm(3) ** 2
    return float(parts)


def invariants_snapshot(state) -> tuple[float, np.ndarray, float]:
    """(mean of phi, mean velocity, min over nodes of det(Id + grad w)).

    Exact zero-mode reads plus one determinant sweep.  Never raises: a
    nonpositive determinant is returned for the caller to flag.
    """
    mean_phi = float(state.phi.mean())
    v = _velocity(state)
    mean_v = v.mean() if v is not None else np.zeros(3)
    dmin = float(np.min(det3(deformation_values(state.w))))
    return mean_phi, mean_v, dmin


def twin_divergence(state_a, state_b) -> float:
    """||phi_A - phi_B||_L2^2 + ||grad u_A - grad u_B||_L2^2 for paired runs."""
    if type(state_a.phi) is not type(state_b.phi):
        raise GridMismatchError("twin states store different field kinds")
    dphi = state_a.phi - state_b.phi
    dgrad = gradient(state_a.w - state_b.w)
    return float(dphi.l2_norm() ** 2 + dgrad.l2_norm() ** 2)


# ---------------------------------------------------------------------------
# energy balance along a trajectory
# ---------------------------------------------------------------------------


def energy_law_residual(records, energy_field: str = "E0") -> float:
    """Max over records of |E(t) + int_0^t dissipation ds - E(0)|.

    The dissipation integral uses trapezoid quadrature at the record
    times.  ``energy_field`` selects which stored energy closes the law:
    "E0" for plain runs, "E_eps" for eps-regularized runs.
    """
    records = list(records)
    if not records:
        raise ValueError("need at least one record")
    energies = []
    for r in records:
        e = getattr(r, energy_field)
        if e is None:
            raise ValueError(f"record at t={r.t} has no {energy_field} entry")
        energies.append(float(e))
    ts = np.array([r.t for r in records], dtype=float)
    es = np.array(energies)
    ds = np.array([r.dissipation for r in records], dtype=float)
    accumulated = cumulative_trapezoid(ds, ts, initial=0.0)
    return float(np.max(np.abs(es + accumulated - es[0])))


# ---------------------------------------------------------------------------
# chain-rule remainders of the thrice-differentiated potential
# ---------------------------------------------------------------------------


def _stack_space() -> JetSpace:
    # variable 0 shifts phi (pure partials up to fourth order); variables
    # 1..3 seed the first derivatives of grad u (joint degree up to 3);
    # variables 4..9 seed its six distinct second derivatives, each entering
    # any monomial at most once
    caps = (4, 3, 3, 3, 1, 1, 1, 1, 1, 1)
    return JetSpace.get(10, 4, caps=caps, group_cap=(tuple(range(4, 10)), 1))


def _unit10(i: int) -> tuple:
    return tuple(1 if v == i else 0 for v in range(10))


def _powers(entries) -> tuple:
    out = [0] * 10
    for var, p in entries:
        out[var] += p
    return tuple(out)


def _needed_monomials() -> dict:
    needed = {}
    for p in _PAIRS:
        slot = _PAIR_SLOT[p]
        for d in range(3):
            needed[("spa", p, d)] = _powers([(0, 1), (slot, 1), (1 + d, 1)])
        needed[("s2p", p)] = _powers([(0, 2), (slot, 1)])
    for d in range(3):
        needed[("s2a", d)] = _powers([(0, 2), (1 + d, 1)])
        needed[("s3a", d)] = _powers([(0, 3), (1 + d, 1)])
    for t in combinations_with_replacement(range(3), 3):
        needed[("saaa", t)] = _powers([(0, 1)] + [(1 + d, 1) for d in t])
    for pr in combinations_with_replacement(range(3), 2):
        needed[("s2aa", pr)] = _powers([(0, 2), (1 + pr[0], 1), (1 + pr[1], 1)])
    needed[("s3",)] = _powers([(0, 3)])
    needed[("s4",)] = _powers([(0, 4)])
    return needed


class ChainRuleStack:
    """Node-wise mixed density derivatives against a state's own gradients.

    Differentiating the diffusion potential dW/dphi three times in space
    leaves, beyond the two terms linear in third derivatives of the
    state, a remainder built from first and second derivatives.  This
    object evaluates one truncated Taylor expansion of W per node with
    those derivative fields as seed directions, so the remainder for any
    index triple is afterwards plain array algebra.
    """

    def __init__(self, state, model: DensityModel, chunk: int = 1024):
        if chunk < 1:
            raise ValueError(f"chunk must be >= 1, got {chunk}")
        grid = state.grid
        self.grid = grid
        ik = 1j * grid.kvec
        gw = gradient(state.w)

        def mat_values(coeffs):
            return np.moveaxis(grid.to_physical(coeffs), (0, 1), (3, 4))

        grad1 = [mat_values(gw.coeffs * ik[d]) for d in range(3)]
        grad2 = {p: mat_values(gw.coeffs * (ik[p[0]] * ik[p[1]])) for p in _PAIRS}
        self.phi1 = [grid.to_physical(state.phi.coeffs * ik[d]) for d in range(3)]
        self.phi2 = {
            p: grid.to_physical(state.phi.coeffs * (ik[p[0]] * ik[p[1]]))
            for p in _PAIRS
        }

        space = _stack_space()
        needed = _needed_monomials()
        nnodes = grid.n**3
        flat_phi = state.phi.values().reshape(-1)
        flat_f = deformation_values(state.w).reshape(-1, 3, 3)
        g1 = [g.reshape(-1, 3, 3) for g in grad1]
        g2 = {p: g.reshape(-1, 3, 3) for p, g in grad2.items()}
        out = {key: np.empty(nnodes) for key in needed}

        for lo in range(0, nnodes, chunk):
            hi = min(lo + chunk, nnodes)
            nb = hi - lo
            pc = np.zeros((space.ncoeff, nb))
            pc[0] = flat_phi[lo:hi]
            pc[space.index[_unit10(0)]] = 1.0
            fc = np.zeros((space.ncoeff, nb, 3, 3))
            fc[0] = flat_f[lo:hi]
            for d in range(3):
                fc[space.index[_unit10(1 + d)]] = g1[d][lo:hi]
            for p in _PAIRS:
                fc[space.index[_unit10(_PAIR_SLOT[p])]] = g2[p][lo:hi]
            wj = model.eval_jet(Jet(space, pc), Jet(space, fc))
            for key, mono in needed.items():
                out[key][lo:hi] = wj.derivative(mono)

        self._d = {key: arr.reshape(grid.shape) for key, arr in out.items()}

    def remainder_values(self, i: int, j: int, k: int) -> np.ndarray:
        """Collocation values of the remainder for one index triple."""
        for idx in (i, j, k):
            if idx not in (0, 1, 2):
                raise ValueError(f"spatial index must be 0, 1, or 2, got {idx}")
        d = self._d
        p1, p2 = self.phi1, self.phi2
        pij, pik, pjk = _pkey(i, j), _pkey(i, k), _pkey(j, k)

        out = d["spa", pij, k] + d["spa", pik, j] + d["spa", pjk, i]
        out = out + d["s2p", pij] * p1[k] + d["s2p", pik] * p1[j] + d["s2p", pjk] * p1[i]
        out = out + d["s2a", i] * p2[pjk] + d["s2a", j] * p2[pik] + d["s2a", k] * p2[pij]
        out = out + d["saaa", tuple(sorted((i, j, k)))]
        out = out + (
            d["s2aa", pij] * p1[k] + d["s2aa", pik] * p1[j] + d["s2aa", pjk] * p1[i]
        )
        out = out + (
            d["s3a", i] * p1[j] * p1[k]
            + d["s3a", j] * p1[i] * p1[k]
            + d["s3a", k] * p1[i] * p1[j]
        )
        out = out + d["s4",] * (p1[i] * p1[j] * p1[k])
        out = out + d["s3",] * (p2[pij] * p1[k] + p2[pjk] * p1[i] + p2[pik] * p1[j])
        return out


def chain_rule_remainder(
    state, model: DensityModel, i: int, j: int, k: int, stack: ChainRuleStack | None = None
) -> ScalarField:
    """Remainder of the thrice-differentiated diffusion potential.

    Differentiating dW/dphi(phi, grad u) in the spatial directions
    (i, j, k) and removing the two leading terms -- the ones linear in
    the third derivatives of phi and grad u -- leaves this field: seven
    groups of density derivatives (from d_phi d_F^2 W through d_phi^4 W)
    contracted against products of first and second derivatives of the
    state.  Symmetric under permutations of (i, j, k).  Every factor
    carries at least one spatial derivative, so the field vanishes
    identically at equilibrium.  Needs four continuous derivatives of
    the density along the state, which bounds the det exponent away from
    small non-even values on states crossing det = 1.
    """
    if stack is None:
        stack = ChainRuleStack(state, model)
    return ScalarField.from_values(stack.grid, stack.remainder_values(i, j, k))


def augmented_energy(
    state,
    model: DensityModel,
    with_remainders: bool = True,
    chunk: int = 1024,
) -> float:
    """Energy functional whose growth controls third derivatives of the state.

    Assembles int |u_t|^2 + |grad^3 u_t|^2 + 2 W plus, for every spatial
    index triple, the full (phi, F) Hessian of W contracted twice with
    the third-derivative pair (phi_ijk, grad u_ijk), plus twice the
    chain-rule remainder paired with phi_ijk.  ``with_remainders=False``
    drops the last group; the difference measures its size against the
    cubic Sobolev budget.  Zero at equilibrium.
    """
    grid = state.grid
    total = 0.0
    v = _velocity(state)
    if v is not None:
        total += _spectral_sq(v, 1.0)
        total += _spectral_sq(v, grid.k2**3)

    f_vals = deformation_values(state.w)
    phi_vals = state.phi.values()
    total += 2.0 * grid.integrate(_density_values(model, phi_vals, f_vals))

    stack = ChainRuleStack(state, model, chunk=chunk) if with_remainders else None
    ik = 1j * grid.kvec
    gw = gradient(state.w)
    for (i, j, k), mult in _TRIPLES:
        mhat = ik[i] * ik[j] * ik[k]
        psi = grid.to_physical(state.phi.coeffs * mhat)
        uf = np.moveaxis(grid.to_physical(gw.coeffs * mhat), (0, 1), (3, 4))
        hess_f, hess_phi = gradient_jvp(model, phi_vals, f_vals, psi, uf)
        quad = psi * hess_phi + np.einsum("...ij,...ij->...", uf, hess_f)
        if stack is not None:
            quad = quad + 2.0 * stack.remainder_values(i, j, k) * psi
        total += mult * grid.integrate(quad)
    return float(total)


# ---------------------------------------------------------------------------
# running decay budget
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecayBudget:
    """Running supremum-plus-integral budget along one trajectory.

    ``value`` is the quantity of interest; the other fields carry the
    trapezoid state between snapshots.
    """

    t: float
    sup_part: float
    integral: float
    integrand: float

    @property
    def value(self) -> float:
        return self.sup_part + self.integral


def decay_budget_update(prev: DecayBudget | None, state, t: float | None = None) -> DecayBudget:
    """Fold one snapshot into the running budget.

    The instantaneous part ||phi||_H2^2 + ||grad u - Id||_H2^2 is
    tracked by supremum; the dissipative part
    ||grad phi||_H2^2 + ||grad^2 u||_H2^2 accumulates by trapezoid with
    unit weight.  Nondecreasing along a run.
    """
    if t is None:
        t = float(state.t)
    grid = state.grid
    w2 = (1.0 + grid.k2) ** 2
    inst = _spectral_sq(state.phi, w2) + _spectral_sq(state.w, w2 * grid.k2)
    integrand = _spectral_sq(state.phi, w2 * grid.k2) + _spectral_sq(
        state.w, w2 * grid.k2**2
    )
    if prev is None:
        return DecayBudget(t, inst, 0.0, integrand)
    if t < prev.t:
        raise ValueError(f"snapshots out of order: t={t} after t={prev.t}")
    integral = prev.integral + 0.5 * (prev.integrand + integrand) * (t - prev.t)
    return DecayBudget(t, max(prev.sup_part, inst), integral, integrand)


# ---------------------------------------------------------------------------
# records and CSV emission
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One measured row of a run.

    Field names follow the CSV schema.  E0 stores the half-normalized
    energy (0.5 kinetic + W); E_big/Z_big the augmented energy and the
    squared cubic Sobolev size; E_eps the regularized energy (equal to
    E0 when the run's eps is zero).  E_big is None on records where the
    heavy stack was skipped, picard_iters is None on dynamic runs, and
    xi_running is None when no budget is being accumulated.  On states
    inside the density's domain E0 >= 0, and accepted solver states have
    min_det_grad_u > 0.
    """

    t: float
    E0: float
    dissipation: float
    E_big: float | None
    Z_big: float
    E_eps: float
    xi_running: float | None
    mean_phi: float
    mean_v: tuple[float, float, float]
    min_det_grad_u: float
    picard_iters: int | None


CSV_COLUMNS = (
    "t",
    "E0",
    "dissipation",
    "E_big",
    "Z_big",
    "E_eps",
    "xi_running",
    "mean_phi",
    "mean_v_x",
    "mean_v_y",
    "mean_v_z",
    "min_det_grad_u",
    "picard_iters",
)


def gather_record(
    state,
    model: DensityModel,
    *,
    eps: float = 0.0,
    heavy: bool = False,
    xi: float | None = None,
    picard_iters: int | None = None,
    chunk: int = 1024,
) -> DiagnosticsRecord:
    """Measure one snapshot into a record.

    ``heavy`` adds the augmented energy (the fourth-order derivative
    stack); ``xi`` threads the caller's running decay budget value;
    ``eps`` fixes the regularized-energy weight for the whole run.
    """
    e0 = total_energy(state, model)
    mean_phi, mean_v, dmin = invariants_snapshot(state)
    return DiagnosticsRecord(
        t=float(state.t),
        E0=e0,
        dissipation=dissipation_rate(state, model),
        E_big=augmented_energy(state, model, chunk=chunk) if heavy else None,
        Z_big=h3_size(state),
        E_eps=e0 + 0.5 * eps * _spectral_sq(state.w, state.grid.k2),
        xi_running=xi,
        mean_phi=mean_phi,
        mean_v=(float(mean_v[0]), float(mean_v[1]), float(mean_v[2])),
        min_det_grad_u=dmin,
        picard_iters=picard_iters,
    )


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(records, destination) -> None:
    """Write records as CSV in the stable column order.

    ``destination`` is a path or a text file object.  Floats are written
    with repr (shortest round-trip form) and rows end with a bare
    newline, so identical records always produce identical bytes; None
    becomes an empty cell.
    """
    lines = [",".join(CSV_COLUMNS)]
    for r in records:
        lines.append(
            ",".join(
                (
                    _cell(r.t),
                    _cell(r.E0),
                    _cell(r.dissipation),
                    _cell(r.E_big),
                    _cell(r.Z_big),
                    _cell(r.E_eps),
                    _cell(r.xi_running),
                    _cell(r.mean_phi),
                    _cell(r.mean_v[0]),
                    _cell(r.mean_v[1]),
                    _cell(r.mean_v[2]),
                    _cell(r.min_det_grad_u),
                    _cell(r.picard_iters),
                )
            )
        )
    text = "\n".join(lines) + "\n"
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        with open(destination, "w", encoding="ascii", newline="") as fh:
            fh.write(text)
