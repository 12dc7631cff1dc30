"""Quasistatic solver: elliptic force balance coupled to scalar diffusion.

At every instant the displacement solves div(dW/dF(phi, Id + grad w)) = 0;
phi diffuses through the potential dW/dphi.  Each time step runs a Picard
iteration built from the constant-coefficient linearization at (0, Id):
the nonlinear terms are moved to the right-hand side as residual fields,
the linear elliptic problem is solved exactly per mode, and the parabolic
part advances by its exact per-mode exponential with the nonlinear
remainder held explicit.  Contraction of the iterates is monitored, not
assumed; data outside the small-amplitude regime raises instead of
silently drifting.

An optional Newton polish (matrix-free, per-mode preconditioned GMRES)
drives the elliptic residual further down than the Picard fixed point
tolerance alone guarantees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .dynamic import deformation_values
from .energy import DensityModel, coercivity_check, derivatives, gradient_jvp
from .errors import (
    NewtonDivergedError,
    NoContractionError,
    NonZeroMeanError,
    NotEllipticError,
    OutOfDomainError,
)
from .linalg3 import det3
from .spectral import (
    Grid,
    MatrixField,
    ScalarField,
    VectorField,
    divergence_rowwise,
    gradient,
    sobolev_norm,
)

__all__ = [
    "QuasiState",
    "LinearizedSymbols",
    "assemble_symbols",
    "solve_linear_elliptic",
    "residual_AB",
    "elliptic_residual",
    "advance_quasistatic",
    "newton_refine",
]

_EYE = np.eye(3)


@dataclass(frozen=True)
class QuasiState:
    """Displacement w = u - id and order parameter phi at one instant."""

    w: VectorField
    phi: ScalarField
    t: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.w.grid

    @classmethod
    def equilibrium(cls, grid: Grid) -> "QuasiState":
        return cls(VectorField.zeros(grid), ScalarField.zeros(grid))


@dataclass(frozen=True)
class LinearizedSymbols:
    """Constant-coefficient blocks of the energy Hessian at (0, Id).

    c: elastic tensor d2W/dF2, shape (3, 3, 3, 3)
    g: coupling d2W/dphi dF, shape (3, 3)
    a: diffusion stiffness d2W/dphi2
    acoustic: per-mode matrices A(k)_il = c_ijlm k_j k_m over the grid
    acoustic_inv: inverse of A(k) on retained nonzero modes, 0 elsewhere
    """

    grid: Grid
    c: np.ndarray
    g: np.ndarray
    a: float
    acoustic: np.ndarray
    acoustic_inv: np.ndarray


def assemble_symbols(model: DensityModel, grid: Grid) -> LinearizedSymbols:
    """Hessian blocks at equilibrium plus eigen-checked acoustic matrices."""
    report = coercivity_check(model)
    if not report.passed:
        raise NotEllipticError(
            f"energy not coercive at equilibrium: gamma = {report.gamma_estimate!r}",
            eigenvalue=report.gamma_estimate,
        )
    hess = report.hessian
    c = hess[1:, 1:].reshape(3, 3, 3, 3)
    g = hess[0, 1:].reshape(3, 3)
    a = float(hess[0, 0])

    kv = grid.kvec
    acoustic = np.einsum("ijlm,jxyz,mxyz->xyzil", c, kv, kv)
    acoustic = 0.5 * (acoustic + np.swapaxes(acoustic, -1, -2))

    active = grid.dealias_mask & (grid.k2 > 0.0)
    eigs = np.linalg.eigvalsh(acoustic[active])
    emin = float(eigs[:, 0].min())
    if emin <= 0.0:
        raise NotEllipticError(
            f"acoustic matrix loses definiteness: min eigenvalue {emin!r}",
            eigenvalue=emin,
        )
    inv = np.zeros_like(acoustic)
    inv[active] = np.linalg.inv(acoustic[active])
    return LinearizedSymbols(grid, c, g, a, acoustic, inv)


def solve_linear_elliptic(
    symbols: LinearizedSymbols, a_rhs: MatrixField, phi: ScalarField
) -> VectorField:
    """Per-mode solve of div(c grad w + g phi) = div(a_rhs), mean(w) = 0.

    Exact in spectral space: A(k) w(k) = i k_j (g_ij phi(k) - a_rhs_ij(k)).
    """
    grid = symbols.grid
    ik = 1j * grid.kvec
    rhs = np.einsum(
        "ij,jxyz,xyz->ixyz", symbols.g, ik, phi.coeffs * grid.dealias_mask
    )
    rhs -= np.einsum("jxyz,ijxyz->ixyz", ik, a_rhs.coeffs * grid.dealias_mask)
    w_coeffs = np.einsum("xyzil,lxyz->ixyz", symbols.acoustic_inv, rhs)

    check = np.einsum("xyzil,lxyz->ixyz", symbols.acoustic, w_coeffs)
    active = grid.dealias_mask & (grid.k2 > 0.0)
    defect = np.linalg.norm((check - rhs)[:, active])
    scale = np.linalg.norm(rhs[:, active])
    if scale > 0.0 and defect > 1e-12 * scale:
        raise NotEllipticError(
            f"per-mode solve failed its residual bound: {defect / scale!r}"
        )
    return VectorField(grid, w_coeffs)


def residual_AB(
    state: QuasiState, model: DensityModel, symbols: LinearizedSymbols
) -> tuple[MatrixField, ScalarField]:
    """Nonlinear remainders of stress and potential beyond the linearization.

    A = c : grad w + g phi - dW/dF(phi, grad u)
    B = dW/dphi(phi, grad u) - a phi - <g, grad w>

    Both vanish at equilibrium and shrink quadratically with amplitude.
    """
    grid = state.grid
    f = deformation_values(state.w)
    phi_vals = state.phi.values()
    _, stress, potential, _ = model.value_and_first(phi_vals, f)
    gradw = np.moveaxis(gradient(state.w).values(), (0, 1), (3, 4))

    a_vals = (
        np.einsum("ijlm,...lm->...ij", symbols.c, gradw)
        + phi_vals[..., None, None] * symbols.g
        - stress
    )
    b_vals = (
        potential
        - symbols.a * phi_vals
        - np.einsum("lm,...lm->...", symbols.g, gradw)
    )
    a_field = MatrixField.from_values(grid, np.moveaxis(a_vals, (3, 4), (0, 1)))
    b_field = ScalarField.from_values(grid, b_vals)
    return a_field.dealiased(), b_field.dealiased()


def elliptic_residual(state: QuasiState, model: DensityModel) -> float:
    """L2 norm of div(dW/dF(phi, grad u)), the nonlinear force balance."""
    return sobolev_norm(_force_balance(state, model), 0)


def _force_balance(state: QuasiState, model: DensityModel) -> VectorField:
    grid = state.grid
    f = deformation_values(state.w)
    _, stress, _, _ = model.value_and_first(state.phi.values(), f)
    coeffs = grid.to_spectral(np.moveaxis(stress, (3, 4), (0, 1))) * grid.dealias_mask
    return divergence_rowwise(MatrixField(grid, coeffs))


def advance_quasistatic(
    state: QuasiState,
    dt: float,
    model: DensityModel,
    symbols: LinearizedSymbols,
    picard_tol: float = 1e-12,
    max_iter: int = 50,
    elliptic_tol: float = 1e-8,
    stats: dict | None = None,
) -> QuasiState:
    """One time step of the coupled system by fixed-point iteration.

    Each sweep: evaluate the nonlinear remainders (A, B) at the current
    iterate, solve the linear elliptic problem for w, then advance phi
    from its start-of-step value by the exact per-mode exponential of
    the linear parabolic part with -k^2 (coupling + B) held explicit.
    Iterates must contract in H2 x H1; dt = 0 reduces to the elliptic
    preparation step that determines w from phi.

    stats, when given, receives iterations / contraction / elliptic
    residual of the accepted step.
    """
    if dt < 0.0:
        raise ValueError(f"dt must be nonnegative, got {dt}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    grid = state.grid
    mean_phi = state.phi.mean()
    if abs(mean_phi) > 1e-12:
        raise NonZeroMeanError(mean_phi, 1e-12)

    k2 = grid.k2
    x = symbols.a * k2 * dt
    decay = np.exp(-x)
    with np.errstate(invalid="ignore", divide="ignore"):
        gain = np.where(x > 0.0, -np.expm1(-x) / np.where(x > 0.0, x, 1.0) * dt, dt)

    phi_start = state.phi.coeffs
    ik = 1j * grid.kvec
    t_next = state.t + dt

    w_bar, phi_bar = state.w, state.phi
    prev_dist = np.inf
    contraction = np.nan
    for iteration in range(1, max_iter + 1):
        a_field, b_field = residual_AB(QuasiState(w_bar, phi_bar, state.t), model, symbols)
        w_new = solve_linear_elliptic(symbols, a_field, phi_bar)
        coupling = np.einsum("lm,mxyz,lxyz->xyz", symbols.g, ik, w_new.coeffs)
        source = -k2 * (coupling + b_field.coeffs)
        phi_new = ScalarField(
            grid, (decay * phi_start + gain * source) * grid.dealias_mask
        )
        dist = float(
            np.hypot(
                sobolev_norm(phi_new - phi_bar, 2), sobolev_norm(w_new - w_bar, 1)
            )
        )
        if np.isfinite(prev_dist) and prev_dist > 0.0:
            contraction = dist / prev_dist
        w_bar, phi_bar = w_new, phi_new
        if dist <= picard_tol:
            break
        if dist >= prev_dist:
            raise NoContractionError(
                f"Picard iterates stopped contracting: {prev_dist!r} -> {dist!r}",
                time=t_next,
                iterations=iteration,
            )
        prev_dist = dist
    else:
        raise NoContractionError(
            f"no fixed point within {max_iter} sweeps (last distance {dist!r})",
            time=t_next,
            iterations=max_iter,
        )

    accepted = QuasiState(w_bar, phi_bar, t_next)
    dmin = float(np.min(det3(deformation_values(accepted.w))))
    if dmin <= 0.0:
        raise OutOfDomainError(dmin, time=t_next)
    residual = elliptic_residual(accepted, model)
    if residual > elliptic_tol:
        raise NoContractionError(
            f"converged iterate violates the force balance: {residual!r}",
            time=t_next,
            iterations=iteration,
        )
    if stats is not None:
        stats["iterations"] = iteration
        stats["contraction"] = contraction
        stats["elliptic_residual"] = residual
    return accepted


def newton_refine(
    state: QuasiState,
    model: DensityModel,
    tol: float = 1e-12,
    symbols: LinearizedSymbols | None = None,
    max_iter: int = 8,
    callback=None,
) -> QuasiState:
    """Matrix-free Newton polish of the force balance at frozen phi.

    Directions come from GMRES on the exact Jacobian action (a Hessian
    contraction along the trial gradient), preconditioned by the
    per-mode inverse acoustic matrices of the equilibrium linearization.
    callback(iteration, residual_norm) fires after every update.
    """
    grid = state.grid
    if symbols is None:
        symbols = assemble_symbols(model, grid)
    phi_vals = state.phi.values()
    shape = state.w.coeffs.shape

    w = state.w
    residual = _force_balance(QuasiState(w, state.phi, state.t), model)
    norm = sobolev_norm(residual, 0)
    if norm <= tol:
        return state

    def precondition(flat):
        c = flat.reshape(shape)
        return np.einsum("xyzil,lxyz->ixyz", symbols.acoustic_inv, c).ravel()

    basis = np.eye(9).reshape(9, 3, 3)
    for iteration in range(1, max_iter + 1):
        f = deformation_values(w)
        # freeze the full elastic Hessian field for this Newton iterate:
        # nine Hessian-vector probes, then every Krylov matvec is a
        # pointwise contraction instead of a jet evaluation
        columns = [gradient_jvp(model, phi_vals, f, 0.0, e)[0] for e in basis]
        hessian = np.stack(columns, axis=-1).reshape(f.shape[:3] + (3, 3, 3, 3))

        def jacobian_action(flat):
            dw = VectorField(grid, flat.reshape(shape) * grid.dealias_mask)
            dgrad = np.moveaxis(gradient(dw).values(), (0, 1), (3, 4))
            dstress = np.einsum("...ijlm,...lm->...ij", hessian, dgrad)
            coeffs = (
                grid.to_spectral(np.moveaxis(dstress, (3, 4), (0, 1)))
                * grid.dealias_mask
            )
            return divergence_rowwise(MatrixField(grid, coeffs)).coeffs.ravel()

        op = LinearOperator(
            (w.coeffs.size, w.coeffs.size), matvec=jacobian_action, dtype=complex
        )
        pre = LinearOperator(
            (w.coeffs.size, w.coeffs.size), matvec=precondition, dtype=complex
        )
        # finite Krylov budget: the preconditioned system sits near the
        # identity for admissible states, so two restart cycles are ample;
        # hitting the cap means the state is outside the polishable regime
        direction, info = gmres(
            op,
            -residual.coeffs.ravel(),
            M=pre,
            rtol=1e-8,
            atol=0.25 * tol,
            restart=60,
            maxiter=2,
        )
        if info != 0:
            raise NewtonDivergedError(
                f"inner linear solve stalled (gmres info {info})", residual=norm
            )
        w = VectorField(grid, (w.coeffs + direction.reshape(shape)) * grid.dealias_mask)
        residual = _force_balance(QuasiState(w, state.phi, state.t), model)
        new_norm = sobolev_norm(residual, 0)
        if callback is not None:
            callback(iteration, new_norm)
        if new_norm <= tol:
            return QuasiState(w, state.phi, state.t)
        if new_norm >= norm:
            raise NewtonDivergedError(
                f"residual stopped decreasing: {norm!r} -> {new_norm!r}",
                residual=new_norm,
            )
        norm = new_norm
    raise NewtonDivergedError(
        f"residual still {norm!r} after {max_iter} Newton steps", residual=norm
    )
