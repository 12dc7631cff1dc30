"""Time integrator tests.

Oracles: the equilibrium state is an exact floating-point fixed point;
linearized right-hand sides match the constant-coefficient symbols of
the energy Hessian at (0, Id); the CFL speed at equilibrium is known in
closed form (c_max = 2 for quadratic determinant penalty, sqrt(2) once
the penalty exponent exceeds 2); self-convergence under dt-halving is
first order for the splitting.
"""

import numpy as np
import pytest

from prestrain_lab.dynamic import (
    DynamicConfig,
    DynamicState,
    deformation_values,
    diffusion_rhs,
    momentum_rhs,
    run_dynamic,
    stable_dt,
    step_imex,
)
from prestrain_lab.energy import BaseDensity, DensityModel, PrestrainMap, derivatives
from prestrain_lab.errors import OutOfDomainError, UnstableStepError
from prestrain_lab.spectral import Grid, ScalarField, VectorField

ISO = 0.1 * np.eye(3)


def make_model(variant="W01", q=2.0, composition="right", m_b=ISO, quadratic=True):
    return DensityModel(
        base=BaseDensity(variant, q),
        prestrain=PrestrainMap(np.asarray(m_b, dtype=float)),
        composition=composition,
        quadratic=quadratic,
    )


@pytest.fixture(scope="module")
def grid16():
    return Grid(16)


def mode_phase(grid, k):
    x, y, z = grid.coordinates()
    return k[0] * x + k[1] * y + k[2] * z


def sine_vector(grid, k, direction, amplitude):
    vals = amplitude * np.sin(mode_phase(grid, k))[None] * np.asarray(
        direction, dtype=float
    ).reshape(3, 1, 1, 1)
    return VectorField.from_values(grid, vals)


def noise_state(grid, seed=0, amplitude=1e-2, band=2):
    rng = np.random.default_rng(seed)
    fields = []
    for _ in range(2):
        raw = rng.standard_normal((3,) + grid.shape)
        f = VectorField.from_values(grid, raw - raw.mean(axis=(1, 2, 3), keepdims=True))
        f = f.truncated(band)
        fields.append(VectorField(grid, f.coeffs * (amplitude / f.sobolev_norm(0))))
    w, v = fields
    raw = rng.standard_normal(grid.shape)
    p = ScalarField.from_values(grid, raw - raw.mean()).truncated(band)
    phi = ScalarField(grid, p.coeffs * (amplitude / p.sobolev_norm(0)))
    return DynamicState(w, v, phi)


def state_size(state):
    return np.sqrt(
        sum(
            np.sum(np.abs(f.coeffs) ** 2)
            for f in (state.w, state.v, state.phi)
        )
    )


def state_distance(a, b):
    return np.sqrt(
        np.sum(np.abs(a.w.coeffs - b.w.coeffs) ** 2)
        + np.sum(np.abs(a.v.coeffs - b.v.coeffs) ** 2)
        + np.sum(np.abs(a.phi.coeffs - b.phi.coeffs) ** 2)
    )


# -- equilibrium -----------------------------------------------------------


def test_equilibrium_rhs_exactly_zero(grid16):
    eq = DynamicState.equilibrium(grid16)
    model = make_model()
    assert not momentum_rhs(eq, model).coeffs.any()
    assert not diffusion_rhs(eq, model).coeffs.any()


def test_equilibrium_is_exact_fixed_point(grid16):
    eq = DynamicState.equilibrium(grid16)
    out = run_dynamic(DynamicConfig(dt=1e-2, t_end=0.2), make_model(), eq)
    assert out.status == "completed"
    assert out.steps == 20
    assert not out.final_state.w.coeffs.any()
    assert not out.final_state.v.coeffs.any()
    assert not out.final_state.phi.coeffs.any()


# -- linearized right-hand sides -------------------------------------------


def test_momentum_rhs_matches_acoustic_symbol(grid16):
    # quadratic exponent: d2W/dF2 at (0, Id) contracts to A(k)u = |k|^2 u + 3 (u.k) k
    k = np.array([2, 1, 0])
    direction = np.array([1.0, 0.0, 0.0])
    alpha = 1e-5
    w = sine_vector(grid16, k, direction, alpha)
    state = DynamicState(w, VectorField.zeros(grid16), ScalarField.zeros(grid16))
    rhs = momentum_rhs(state, make_model())

    k2 = float(k @ k)
    a_u = k2 * direction + 3.0 * float(direction @ k) * k
    expected = -alpha * np.sin(mode_phase(grid16, k))[None] * a_u.reshape(3, 1, 1, 1)
    scale = np.max(np.abs(expected))
    np.testing.assert_allclose(rhs.values(), expected, atol=1e-3 * scale)


def test_momentum_rhs_viscous_term_exact(grid16):
    state = noise_state(grid16, seed=3)
    model = make_model()
    base = momentum_rhs(state, model, eps=0.0)
    damped = momentum_rhs(state, model, eps=0.1)
    expected = base.coeffs - 0.1 * grid16.k2 * state.w.coeffs
    assert np.array_equal(damped.coeffs, expected)


def test_diffusion_rhs_exactly_mean_free(grid16):
    state = noise_state(grid16, seed=7, amplitude=5e-2)
    rhs = diffusion_rhs(state, make_model())
    assert rhs.mean() == 0.0


def test_diffusion_rhs_phi_symbol(grid16):
    # potential linearization in phi alone: a = d2W/dphi2(0, Id) = 1.24 for M_B = 0.1 Id
    k = np.array([1, 2, 0])
    beta = 1e-5
    phi = ScalarField.from_values(grid16, beta * np.sin(mode_phase(grid16, k)))
    state = DynamicState(
        VectorField.zeros(grid16), VectorField.zeros(grid16), phi
    )
    rhs = diffusion_rhs(state, make_model())
    a = 1.24
    expected = -a * float(k @ k) * beta * np.sin(mode_phase(grid16, k))
    np.testing.assert_allclose(
        rhs.values(), expected, atol=1e-3 * np.max(np.abs(expected))
    )


def test_diffusion_rhs_coupling_symbol(grid16):
    # mixed block d2W/dphi dF = 2 M_B + 2 tr(M_B) Id = 0.8 Id, so the
    # potential picks up 0.8 div(w) at leading order
    k = np.array([2, 1, 0])
    direction = np.array([1.0, 0.0, 0.0])
    alpha = 1e-5
    w = sine_vector(grid16, k, direction, alpha)
    state = DynamicState(w, VectorField.zeros(grid16), ScalarField.zeros(grid16))
    rhs = diffusion_rhs(state, make_model())
    expected = -0.8 * float(k @ k) * alpha * float(k @ direction) * np.cos(
        mode_phase(grid16, k)
    )
    np.testing.assert_allclose(
        rhs.values(), expected, atol=1e-3 * np.max(np.abs(expected))
    )


def test_deformation_values_identity_plus_gradient(grid16):
    k = np.array([1, 0, 0])
    w = sine_vector(grid16, k, [0.0, 1.0, 0.0], 0.25)
    f = deformation_values(w)
    # d(w_2)/dx_1 = 0.25 cos(x_1), everything else identity
    x = grid16.coordinates()[0]
    expected = np.broadcast_to(np.eye(3), f.shape).copy()
    expected[..., 1, 0] += 0.25 * np.cos(x)
    np.testing.assert_allclose(f, expected, atol=1e-13)


# -- CFL speed --------------------------------------------------------------


def test_stable_dt_equilibrium_quadratic_exponent(grid16):
    eq = DynamicState.equilibrium(grid16)
    for model in (make_model(), make_model(composition="none")):
        assert stable_dt(eq, model) == pytest.approx(grid16.dx / 2.0, rel=1e-12)


def test_stable_dt_equilibrium_fractional_exponent(grid16):
    # exponent above 2 removes the determinant term from the Hessian:
    # longitudinal speed drops from 2 to sqrt(2)
    eq = DynamicState.equilibrium(grid16)
    for variant in ("W01", "W02"):
        model = make_model(variant=variant, q=2.5)
        assert stable_dt(eq, model) == pytest.approx(
            grid16.dx / np.sqrt(2.0), rel=1e-12
        )


def test_stable_dt_scales_with_resolution(grid16):
    model = make_model()
    coarse = stable_dt(DynamicState.equilibrium(grid16), model)
    fine = stable_dt(DynamicState.equilibrium(Grid(32)), model)
    assert coarse == pytest.approx(2.0 * fine, rel=1e-12)


def test_stable_dt_stable_under_small_strain(grid16):
    model = make_model()
    eq_dt = stable_dt(DynamicState.equilibrium(grid16), model)
    state = noise_state(grid16, seed=11, amplitude=1e-3)
    dt = stable_dt(state, model)
    assert 0.0 < dt
    assert abs(dt - eq_dt) < 0.05 * eq_dt


# -- stepping ---------------------------------------------------------------


def test_step_imex_matches_run_dynamic(grid16):
    state = noise_state(grid16, seed=1)
    config = DynamicConfig(dt=2e-3, t_end=2e-3)
    manual = step_imex(state.dealiased(), config, make_model())
    auto = run_dynamic(config, make_model(), state).final_state
    assert np.array_equal(manual.w.coeffs, auto.w.coeffs)
    assert np.array_equal(manual.v.coeffs, auto.v.coeffs)
    assert np.array_equal(manual.phi.coeffs, auto.phi.coeffs)
    assert manual.t == auto.t


def test_cached_stress_reuse_is_exact(grid16):
    # two driven steps must equal two standalone steps bit for bit
    state = noise_state(grid16, seed=2).dealiased()
    config = DynamicConfig(dt=2e-3, t_end=4e-3)
    model = make_model()
    twice = step_imex(step_imex(state, config, model), config, model)
    auto = run_dynamic(config, model, state).final_state
    assert np.array_equal(twice.w.coeffs, auto.w.coeffs)
    assert np.array_equal(twice.v.coeffs, auto.v.coeffs)
    assert np.array_equal(twice.phi.coeffs, auto.phi.coeffs)


def test_a_split_default_matches_explicit_value(grid16):
    state = noise_state(grid16, seed=5)
    model = make_model()
    a = float(derivatives(model, 0.0, np.eye(3), order=2).d2[0, 0])
    assert a == pytest.approx(1.24, rel=1e-12)
    ref = run_dynamic(DynamicConfig(dt=2e-3, t_end=1e-2), model, state).final_state
    out = run_dynamic(
        DynamicConfig(dt=2e-3, t_end=1e-2, a_split=a), model, state
    ).final_state
    assert np.array_equal(ref.phi.coeffs, out.phi.coeffs)
    assert np.array_equal(ref.v.coeffs, out.v.coeffs)


def test_mean_modes_exactly_conserved(grid16):
    # zero wavenumber: diffusion and divergence kill it identically, so
    # mean(phi) and mean(velocity) never move, not even by roundoff
    state = noise_state(grid16, seed=9)
    phi_coeffs = state.phi.coeffs.copy()
    phi_coeffs[0, 0, 0] = 0.05
    v_coeffs = state.v.coeffs.copy()
    v_coeffs[:, 0, 0, 0] = [0.01, -0.02, 0.003]
    initial = DynamicState(
        state.w, VectorField(grid16, v_coeffs), ScalarField(grid16, phi_coeffs)
    )
    out = run_dynamic(
        DynamicConfig(dt=5e-3, t_end=1.0), make_model(), initial
    ).final_state
    assert out.phi.mean() == initial.phi.mean()
    assert np.array_equal(
        out.v.coeffs[:, 0, 0, 0], initial.v.coeffs[:, 0, 0, 0]
    )
    assert out.phi.mean() == 0.05


def test_self_convergence_first_order(grid16):
    # halving dt halves the final-state error of the splitting
    state = noise_state(grid16, seed=4, amplitude=1e-2)
    model = make_model()
    finals = [
        run_dynamic(DynamicConfig(dt=dt, t_end=0.05), model, state).final_state
        for dt in (2e-3, 1e-3, 5e-4)
    ]
    e1 = state_distance(finals[0], finals[1])
    e2 = state_distance(finals[1], finals[2])
    assert e2 < e1
    ratio = e1 / e2
    assert 1.8 <= ratio <= 4.5


def test_galerkin_full_band_is_identity(grid16):
    state = noise_state(grid16, seed=6)
    model = make_model()
    full = run_dynamic(DynamicConfig(dt=2e-3, t_end=2e-2), model, state)
    cut = run_dynamic(
        DynamicConfig(dt=2e-3, t_end=2e-2, n_galerkin=grid16.kmax_retained),
        model,
        state,
    )
    assert np.array_equal(full.final_state.w.coeffs, cut.final_state.w.coeffs)
    assert np.array_equal(full.final_state.phi.coeffs, cut.final_state.phi.coeffs)


def test_galerkin_confines_support(grid16):
    state = noise_state(grid16, seed=8, band=4)
    out = run_dynamic(
        DynamicConfig(dt=2e-3, t_end=2e-2, n_galerkin=2), make_model(), state
    ).final_state
    outside = ~grid16.mode_mask(2)
    assert not out.w.coeffs[:, outside].any()
    assert not out.v.coeffs[:, outside].any()
    assert not out.phi.coeffs[outside].any()


# -- failure modes ----------------------------------------------------------


def test_cfl_violation_raises_immediately(grid16):
    state = noise_state(grid16, seed=10)
    with pytest.raises(UnstableStepError) as info:
        run_dynamic(DynamicConfig(dt=1.0, t_end=2.0), make_model(), state)
    assert info.value.time == 0.0
    assert "CFL" in str(info.value)


def test_growth_guard_catches_linear_instability(grid16):
    # dt below the nominal h/c bound but above the corner-mode Verlet
    # limit 2/omega_max: the guard must abort, not overflow
    k = np.array([5, 5, 5])
    w = sine_vector(grid16, k, np.array([1.0, 1.0, 1.0]) / np.sqrt(3), 1e-6)
    state = DynamicState(w, VectorField.zeros(grid16), ScalarField.zeros(grid16))
    config = DynamicConfig(dt=0.15, t_end=3.0)
    assert config.dt < 0.8 * stable_dt(state, make_model())
    with pytest.raises(UnstableStepError) as info:
        run_dynamic(config, make_model(), state)
    assert "growth" in str(info.value)
    assert info.value.time is not None and info.value.time > 0.0


def test_out_of_domain_at_initial_stress(grid16):
    # det F = 1 + 1.5 cos(x) dips to -0.5: the first stress evaluation fails
    w = sine_vector(grid16, np.array([1, 0, 0]), [1.0, 0.0, 0.0], 1.5)
    state = DynamicState(w, VectorField.zeros(grid16), ScalarField.zeros(grid16))
    with pytest.raises(OutOfDomainError) as info:
        step_imex(state, DynamicConfig(dt=1e-3), make_model())
    assert info.value.time == 0.0
    assert info.value.determinant < 0.0


def test_out_of_domain_enforced_for_unrestricted_density(grid16):
    # the squared-distance density is defined for any F, but the flow
    # must still stay inside det > 0; the solver checks it directly
    w = sine_vector(grid16, np.array([1, 0, 0]), [1.0, 0.0, 0.0], 1.5)
    state = DynamicState(w, VectorField.zeros(grid16), ScalarField.zeros(grid16))
    model = make_model(variant="CaseStudy", composition="none")
    with pytest.raises(OutOfDomainError) as info:
        step_imex(state, DynamicConfig(dt=1e-3), model)
    assert info.value.time == pytest.approx(1e-3)
    assert info.value.determinant <= 0.0


# -- driver ----------------------------------------------------------------


def test_sink_cadence_and_summary(grid16):
    state = noise_state(grid16, seed=12)
    seen = []
    out = run_dynamic(
        DynamicConfig(dt=0.01, t_end=0.1),
        make_model(),
        state,
        sinks=(lambda s: seen.append(s.t),),
        stride=3,
    )
    assert out.steps == 10
    assert out.status == "completed"
    assert seen == [0.0, 3 * 0.01, 6 * 0.01, 9 * 0.01, 10 * 0.01]

    seen.clear()
    run_dynamic(
        DynamicConfig(dt=0.01, t_end=0.1),
        make_model(),
        state,
        sinks=(lambda s: seen.append(s.t),),
        stride=5,
    )
    assert seen == [0.0, 5 * 0.01, 10 * 0.01]


def test_config_validation():
    with pytest.raises(ValueError):
        DynamicConfig(dt=0.0)
    with pytest.raises(ValueError):
        DynamicConfig(dt=1e-3, t_end=-1.0)
    with pytest.raises(ValueError):
        DynamicConfig(dt=1e-3, eps=-0.1)
    with pytest.raises(ValueError):
        DynamicConfig(dt=1e-3, cfl_safety=0.0)
    with pytest.raises(ValueError):
        DynamicConfig(dt=1e-3, cfl_safety=1.5)
    with pytest.raises(ValueError):
        DynamicConfig(dt=1e-3, n_galerkin=0)
    with pytest.raises(ValueError):
        DynamicConfig(dt=1e-3, growth_factor=1.0)


def test_run_rejects_bad_stride(grid16):
    state = DynamicState.equilibrium(grid16)
    with pytest.raises(ValueError):
        run_dynamic(DynamicConfig(dt=1e-3, t_end=1e-3), make_model(), state, stride=0)
