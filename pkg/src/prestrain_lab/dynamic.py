"""Time integration of the coupled wave/diffusion system on the torus.

The displacement w = u - id carries a velocity-Verlet wave update driven
by the row-wise divergence of the pointwise stress dW/dF, optionally
augmented by a viscous eps*Laplacian(u) term and a Galerkin mode cutoff.
The order parameter advances by an IMEX split: the equilibrium
linearization a = d2W/dphi2(0, Id) of the stiff diffusion is integrated
implicitly (diagonal per mode), the smooth remainder explicitly.

All nonlinear evaluations are pseudo-spectral: derivatives exact per
mode, pointwise density kernels on the collocation grid, products
projected back onto the dealias band.  Each step performs exactly one
invariant factorization of the updated deformation gradient, shared by
the diffusion potential and the stress.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .energy import DensityModel, derivatives
from .errors import OutOfDomainError, UnstableStepError
from .linalg3 import det3
from .spectral import (
    Grid,
    MatrixField,
    ScalarField,
    VectorField,
    divergence_rowwise,
    gradient,
)

__all__ = [
    "DynamicState",
    "DynamicConfig",
    "RunSummary",
    "deformation_values",
    "momentum_rhs",
    "diffusion_rhs",
    "step_imex",
    "stable_dt",
    "run_dynamic",
]

_EYE = np.eye(3)


@dataclass(frozen=True)
class DynamicState:
    """One snapshot of the hyperbolic-parabolic flow.

    w is the displacement u - id, v its velocity u_t, phi the order
    parameter; all three live on one grid.  Instances are immutable:
    steps return new states.
    """

    w: VectorField
    v: VectorField
    phi: ScalarField
    t: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.w.grid

    @classmethod
    def equilibrium(cls, grid: Grid) -> "DynamicState":
        return cls(
            VectorField.zeros(grid), VectorField.zeros(grid), ScalarField.zeros(grid)
        )

    def dealiased(self) -> "DynamicState":
        return DynamicState(
            self.w.dealiased(), self.v.dealiased(), self.phi.dealiased(), self.t
        )


@dataclass(frozen=True)
class DynamicConfig:
    """Scheme parameters for one integration.

    a_split = None resolves to d2W/dphi2(0, Id) at integrator setup.
    n_galerkin truncates every stage to max-norm mode index <= N.
    The growth guard aborts once the spectral l2 size of the state
    exceeds growth_factor times its initial size (or turns non-finite).
    """

    dt: float
    t_end: float = 1.0
    eps: float = 0.0
    n_galerkin: int | None = None
    a_split: float | None = None
    cfl_safety: float = 0.8
    cfl_check_every: int = 100
    growth_factor: float = 1e3

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0.0:
            raise ValueError(f"t_end must be nonnegative, got {self.t_end}")
        if self.eps < 0.0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")
        if not 0.0 < self.cfl_safety <= 1.0:
            raise ValueError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if self.n_galerkin is not None and self.n_galerkin < 1:
            raise ValueError(f"n_galerkin must be >= 1, got {self.n_galerkin}")
        if self.cfl_check_every < 1:
            raise ValueError("cfl_check_every must be >= 1")
        if not self.growth_factor > 1.0:
            raise ValueError("growth_factor must exceed 1")


@dataclass(frozen=True)
class RunSummary:
    status: str
    final_state: DynamicState
    steps: int


def deformation_values(w: VectorField) -> np.ndarray:
    """F = Id + grad(w) on the collocation grid, shape (n, n, n, 3, 3)."""
    vals = gradient(w).values()
    return np.moveaxis(vals, (0, 1), (3, 4)) + _EYE


def _stress_field(model: DensityModel, phi_vals, f_vals, grid: Grid) -> MatrixField:
    prep = model.prepare(f_vals)
    if prep is not None:
        stress, _ = prep.stress_and_value(phi_vals)
    else:
        _, stress, _, _ = model.value_and_first(phi_vals, f_vals)
    coeffs = grid.to_spectral(np.moveaxis(stress, (3, 4), (0, 1)))
    return MatrixField(grid, coeffs * grid.dealias_mask)


def momentum_rhs(state: DynamicState, model: DensityModel, eps: float = 0.0) -> VectorField:
    """div(dW/dF(phi, Id + grad w)) + eps * Laplacian(u), spectrally.

    Laplacian(u) = Laplacian(w) since the identity map is harmonic.
    """
    grid = state.grid
    f = deformation_values(state.w)
    sigma = _stress_field(model, state.phi.values(), f, grid)
    out = divergence_rowwise(sigma)
    if eps != 0.0:
        out = VectorField(grid, out.coeffs - eps * grid.k2 * state.w.coeffs)
    return out


def diffusion_rhs(state: DynamicState, model: DensityModel) -> ScalarField:
    """Laplacian(dW/dphi(phi, Id + grad w)); exactly mean-free."""
    grid = state.grid
    f = deformation_values(state.w)
    prep = model.prepare(f)
    if prep is not None:
        pot = prep.potential(state.phi.values())
    else:
        pot = model.diffusion_potential(state.phi.values(), f)
    coeffs = grid.to_spectral(pot) * grid.dealias_mask
    return ScalarField(grid, -grid.k2 * coeffs)


class _Integrator:
    """Per-run workspace: resolved split coefficient, masks, denominators."""

    def __init__(self, model: DensityModel, config: DynamicConfig, grid: Grid):
        self.model = model
        self.config = config
        self.grid = grid
        a = config.a_split
        if a is None:
            a = float(derivatives(model, 0.0, _EYE, order=2).d2[0, 0])
        self.a_split = a
        dt = config.dt
        self._implicit = dt * a * grid.k2
        self._denom = 1.0 + self._implicit
        if config.n_galerkin is not None:
            self.mask = grid.mode_mask(config.n_galerkin) & grid.dealias_mask
        else:
            self.mask = None

    def _trunc(self, coeffs):
        return coeffs if self.mask is None else coeffs * self.mask

    def momentum_coeffs(self, w_coeffs, stress: MatrixField):
        out = divergence_rowwise(stress).coeffs
        if self.config.eps != 0.0:
            out = out - self.config.eps * self.grid.k2 * w_coeffs
        return self._trunc(out)

    def full_rhs(self, w: VectorField, phi: ScalarField):
        f = deformation_values(w)
        sigma = _stress_field(self.model, phi.values(), f, self.grid)
        return self.momentum_coeffs(w.coeffs, sigma)

    def step(self, state: DynamicState, rhs0):
        """One IMEX step; returns (state, momentum rhs at the new state).

        The returned rhs is exactly the first half-kick of the next step,
        so a driving loop performs one stress evaluation per step.
        """
        grid, model, dt = self.grid, self.model, self.config.dt
        t_next = state.t + dt
        if rhs0 is None:
            try:
                rhs0 = self.full_rhs(state.w, state.phi)
            except OutOfDomainError as exc:
                raise OutOfDomainError(exc.determinant, time=state.t) from None

        v_half = self._trunc(state.v.coeffs + (0.5 * dt) * rhs0)
        w_new = VectorField(grid, self._trunc(state.w.coeffs + dt * v_half))

        f = deformation_values(w_new)
        try:
            prep = model.prepare(f)
        except OutOfDomainError as exc:
            raise OutOfDomainError(exc.determinant, time=t_next) from None

        # diffusion potential at the old phi, implicit constant-coefficient solve
        phi_old_vals = state.phi.values()
        if prep is not None:
            pot = prep.potential(phi_old_vals)
        else:
            pot = model.diffusion_potential(phi_old_vals, f)
        diff_hat = -grid.k2 * (grid.to_spectral(pot) * grid.dealias_mask)
        phi_new_coeffs = (
            state.phi.coeffs + dt * diff_hat + self._implicit * state.phi.coeffs
        ) / self._denom
        phi_new = ScalarField(grid, self._trunc(phi_new_coeffs))

        # stress at the updated pair, shared invariants
        phi_new_vals = phi_new.values()
        try:
            if prep is not None:
                stress, _ = prep.stress_and_value(phi_new_vals)
                det_f = prep.det_f
            else:
                _, stress, _, _ = model.value_and_first(phi_new_vals, f)
                det_f = det3(f)
        except OutOfDomainError as exc:
            raise OutOfDomainError(exc.determinant, time=t_next) from None
        dmin = float(np.min(det_f))
        if dmin <= 0.0:
            raise OutOfDomainError(dmin, time=t_next)

        sigma = MatrixField(
            grid,
            grid.to_spectral(np.moveaxis(stress, (3, 4), (0, 1))) * grid.dealias_mask,
        )
        rhs_new = self.momentum_coeffs(w_new.coeffs, sigma)
        v_new = VectorField(grid, v_half + (0.5 * dt) * rhs_new)
        return DynamicState(w_new, v_new, phi_new, t_next), rhs_new


def step_imex(state: DynamicState, config: DynamicConfig, model: DensityModel) -> DynamicState:
    """One step of the splitting scheme (fresh workspace; loops should
    use run_dynamic, which reuses the stress evaluation across steps)."""
    new, _ = _Integrator(model, config, state.grid).step(state, None)
    return new


def stable_dt(state: DynamicState, model: DensityModel) -> float:
    """h / c_max with c_max the fastest acoustic speed of the frozen Hessian.

    The Hessian is sampled at the spatially stiffest nodes (largest
    |F - Id|, largest |phi|, smallest det F); c_max^2 is the largest
    eigenvalue of A(k)/|k|^2 over the retained modes, where
    A(k)_il = sum_jm d2W/dF_ij dF_lm k_j k_m.
    """
    grid = state.grid
    f = deformation_values(state.w).reshape(-1, 3, 3)
    phi = state.phi.values().reshape(-1)
    dev = np.einsum("nij,nij->n", f - _EYE, f - _EYE)
    probes = {int(np.argmax(dev)), int(np.argmax(np.abs(phi))), int(np.argmin(det3(f)))}

    keep = grid.dealias_mask & (grid.k2 > 0.0)
    kv = grid.kvec[:, keep].T
    khat = kv / np.linalg.norm(kv, axis=1, keepdims=True)

    cmax2 = 0.0
    for idx in probes:
        c = derivatives(model, float(phi[idx]), f[idx], order=2).d2[1:, 1:]
        acoustic = np.einsum(
            "ijlm,nj,nm->nil", c.reshape(3, 3, 3, 3), khat, khat
        )
        acoustic = 0.5 * (acoustic + np.swapaxes(acoustic, -1, -2))
        cmax2 = max(cmax2, float(np.linalg.eigvalsh(acoustic)[:, -1].max()))
    return grid.dx / np.sqrt(cmax2)


def _size_indicator(state: DynamicState) -> float:
    return float(
        np.sqrt(
            np.sum(np.abs(state.w.coeffs) ** 2)
            + np.sum(np.abs(state.v.coeffs) ** 2)
            + np.sum(np.abs(state.phi.coeffs) ** 2)
        )
    )


def run_dynamic(
    config: DynamicConfig,
    model: DensityModel,
    initial: DynamicState,
    sinks=(),
    stride: int = 1,
) -> RunSummary:
    """Integrate to t_end, feeding every stride-th state to each sink.

    Sinks always see the initial and final states.  Step failures
    propagate with the failing time attached; the CFL guard re-checks
    dt against stable_dt every cfl_check_every steps.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    state = initial.dealiased()
    integ = _Integrator(model, config, state.grid)
    if integ.mask is not None:
        state = DynamicState(
            VectorField(state.grid, state.w.coeffs * integ.mask),
            VectorField(state.grid, state.v.coeffs * integ.mask),
            ScalarField(state.grid, state.phi.coeffs * integ.mask),
            state.t,
        )
    nsteps = max(0, int(round(config.t_end / config.dt)))
    t0 = state.t
    size0 = _size_indicator(state)
    limit = config.growth_factor * size0

    for sink in sinks:
        sink(state)
    rhs = None
    for istep in range(nsteps):
        if istep % config.cfl_check_every == 0:
            bound = float(config.cfl_safety * stable_dt(state, model))
            if config.dt > bound:
                raise UnstableStepError(
                    f"dt={config.dt!r} exceeds CFL bound {bound!r}", time=state.t
                )
        state, rhs = integ.step(state, rhs)
        # exact step count in t, immune to accumulation drift
        state = replace(state, t=t0 + (istep + 1) * config.dt)
        size = _size_indicator(state)
        if not np.isfinite(size) or (size0 > 0.0 and size > limit):
            raise UnstableStepError(
                f"state size {size!r} breached the growth guard {limit!r}",
                time=state.t,
            )
        if (istep + 1) % stride == 0 or istep + 1 == nsteps:
            for sink in sinks:
                sink(state)
    return RunSummary("completed", state, nsteps)
