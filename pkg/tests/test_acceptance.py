"""Acceptance suite: one test per shipping criterion, pinned tolerances.

Each test is a single pass/fail line under pytest -v.  The heavy
inertial run (32^3 grid, T = 1) executes once in a module fixture and
feeds both the energy-law and the a-priori-bound criteria; the
quasi-static amplitude sweep likewise feeds the scaling and the
elliptic-regularity criteria.  Everything is seeded, so reruns are
bit-identical.
"""

import time

import numpy as np
import pytest

from prestrain_lab.config import RunConfig, apply_assignments
from prestrain_lab.diagnostics import (
    augmented_energy,
    decay_budget_update,
    energy_law_residual,
    gather_record,
    twin_divergence,
)
from prestrain_lab.dynamic import DynamicConfig, DynamicState, run_dynamic
from prestrain_lab.energy import (
    BaseDensity,
    DensityModel,
    PrestrainMap,
    appendix_inequality_check,
    axiom_check,
    coercivity_check,
    dist_to_SO3,
)
from prestrain_lab.initial_data import (
    build_initial_data,
    grid_from_config,
    model_from_config,
    perturb_phi,
)
from prestrain_lab.quasistatic import (
    advance_quasistatic,
    assemble_symbols,
    solve_linear_elliptic,
)
from prestrain_lab.spectral import (
    Grid,
    MatrixField,
    ScalarField,
    VectorField,
    gradient,
    sobolev_norm,
)


def make_config(**overrides):
    pairs = {k: str(v) for k, v in overrides.items()}
    config, violations = apply_assignments(RunConfig(), pairs)
    assert violations == []
    return config


def dynamic_run(config, *, dt, t_end, stride, eps=0.0, initial=None):
    """Light-record run; returns (records, final_state, initial_state)."""
    model = model_from_config(config)
    init = initial if initial is not None else build_initial_data(config)
    records, last = [], [None]

    def sink(state):
        records.append(gather_record(state, model, eps=eps))
        last[0] = state

    run_dynamic(
        DynamicConfig(dt=dt, t_end=t_end, eps=eps), model, init, sinks=(sink,), stride=stride
    )
    return records, last[0], init


@pytest.fixture(scope="module")
def flagship_run():
    """Default-config inertial run: 32^3, amplitude 1e-2, T = 1, dt = 1e-3."""
    config = make_config()
    start = time.perf_counter()
    records, final, init = dynamic_run(config, dt=1e-3, t_end=1.0, stride=10)
    elapsed = time.perf_counter() - start
    return {
        "config": config,
        "records": records,
        "final": final,
        "init": init,
        "elapsed": elapsed,
    }


@pytest.fixture(scope="module")
def amplitude_sweep():
    """Quasi-static runs at three seed amplitudes, with decay budgets."""
    out = []
    for alpha in (10.0**-1.5, 1e-2, 5e-3):
        config = make_config(**{"grid.n": 16, "data.amplitude": repr(alpha)})
        model = model_from_config(config)
        grid = grid_from_config(config)
        symbols = assemble_symbols(model, grid)
        state = advance_quasistatic(
            build_initial_data(config, quasi=True), 0.0, model, symbols
        )
        prepared = state
        budget = decay_budget_update(None, state)
        for _ in range(50):
            state = advance_quasistatic(state, 5e-3, model, symbols)
            budget = decay_budget_update(budget, state)
        out.append({"alpha": alpha, "prepared": prepared, "xi": budget.value})
    return out


def test_01_energy_law_closes_and_converges_first_order(flagship_run):
    records = flagship_run["records"]
    residual = energy_law_residual(records)
    assert residual <= 1e-6, f"energy law residual {residual!r} exceeds 1e-6"
    assert flagship_run["elapsed"] <= 120.0

    config = flagship_run["config"]
    residuals = [residual]
    for dt in (5e-4, 2.5e-4):
        recs, _, _ = dynamic_run(config, dt=dt, t_end=1.0, stride=10)
        residuals.append(energy_law_residual(recs))
    ratios = [a / b for a, b in zip(residuals, residuals[1:])]
    assert all(r >= 1.8 for r in ratios), f"halving ratios {ratios} fall below 1.8"


def test_02_mean_order_parameter_and_velocity_conserved():
    # inertial solver: seed nonzero means, then 1000 steps
    config = make_config(
        **{"grid.n": 16, "data.amplitude": "1e-2", "data.mean_zero_phi": "false"}
    )
    model = model_from_config(config)
    init = build_initial_data(config)
    coeffs = init.v.coeffs.copy()
    coeffs[:, 0, 0, 0] = np.array([0.11, -0.07, 0.05])
    init = DynamicState(init.w, VectorField(init.grid, coeffs), init.phi, 0.0)
    phi0 = init.phi.coeffs[0, 0, 0].real
    v0 = init.v.coeffs[:, 0, 0, 0].real.copy()
    last = [None]
    run_dynamic(
        DynamicConfig(dt=1e-3, t_end=1.0),
        model,
        init,
        sinks=(lambda s: last.__setitem__(0, s),),
        stride=1000,
    )
    drift_phi = abs(last[0].phi.coeffs[0, 0, 0].real - phi0) / abs(phi0)
    drift_v = np.max(np.abs(last[0].v.coeffs[:, 0, 0, 0].real - v0)) / np.max(np.abs(v0))
    assert drift_phi <= 1e-12
    assert drift_v <= 1e-12

    # quasi-static solver: the conserved mean is zero by construction
    config = make_config(**{"grid.n": 8, "data.amplitude": "5e-3"})
    model = model_from_config(config)
    grid = grid_from_config(config)
    symbols = assemble_symbols(model, grid)
    state = advance_quasistatic(build_initial_data(config, quasi=True), 0.0, model, symbols)
    for _ in range(1000):
        state = advance_quasistatic(state, 1e-3, model, symbols)
    assert abs(state.phi.coeffs[0, 0, 0].real) <= 1e-12


def test_03_quasistatic_l2_decay_is_monotone():
    config = make_config(**{"grid.n": 16, "data.amplitude": "5e-3"})
    model = model_from_config(config)
    grid = grid_from_config(config)
    symbols = assemble_symbols(model, grid)
    state = advance_quasistatic(build_initial_data(config, quasi=True), 0.0, model, symbols)
    sizes = [state.phi.l2_norm() ** 2]
    for _ in range(50):
        state = advance_quasistatic(state, 0.01, model, symbols)
        sizes.append(state.phi.l2_norm() ** 2)
    worst_increase = max(b - a for a, b in zip(sizes, sizes[1:]))
    assert worst_increase <= 1e-10, f"mass of phi^2 grew by {worst_increase!r} in a step"
    assert max(sizes) <= sizes[0] * (1.0 + 1e-12)


def test_04_smallness_functional_scales_quadratically(amplitude_sweep):
    x = np.log([entry["alpha"] for entry in amplitude_sweep])
    y = np.log([entry["xi"] for entry in amplitude_sweep])
    slope = float(np.polyfit(x, y, 1)[0])
    assert abs(slope - 2.0) <= 0.2, f"amplitude-scaling slope {slope!r} not 2 +- 0.2"


def test_05_equilibrium_coercivity_and_reflection_witness():
    base = BaseDensity("W01", 2.0)
    plain = DensityModel(base, PrestrainMap(np.zeros((3, 3))), "right", True)
    gamma0 = coercivity_check(plain).gamma_estimate
    assert abs(gamma0 - 1.0) <= 1e-6

    right = DensityModel(base, PrestrainMap(0.1 * np.eye(3)), "right", True)
    left = DensityModel(base, PrestrainMap(0.1 * np.eye(3)), "left", True)
    g_right = coercivity_check(right).gamma_estimate
    g_left = coercivity_check(left).gamma_estimate
    assert abs(g_right - g_left) <= 1e-8
    assert g_right > 0.0

    report = axiom_check(BaseDensity("CaseStudy"), samples=10_000, seed=0)
    result = report.rotation_distance_bound
    assert not result.passed
    witness = np.asarray(result.detail["witness"])
    np.testing.assert_allclose(witness, np.diag([-1.0, 1.0, 1.0]), atol=1e-12)
    assert abs(dist_to_SO3(witness) ** 2 - 4.0) <= 1e-6


def test_06_viscous_ladder_converges_to_unregularized_run():
    finals, residuals = {}, {}
    for eps in (0.0, 1e-1, 1e-2, 1e-3):
        config = make_config(
            **{"grid.n": 16, "data.amplitude": "1e-2", "scheme.eps": repr(eps)}
        )
        records, final, _ = dynamic_run(config, dt=1e-3, t_end=0.25, stride=10, eps=eps)
        finals[eps] = final
        residuals[eps] = energy_law_residual(records, "E_eps" if eps else "E0")

    def distance(a, b):
        dv = VectorField(a.grid, a.v.coeffs - b.v.coeffs)
        return float(np.sqrt(twin_divergence(a, b) + dv.l2_norm() ** 2))

    gaps = [distance(finals[eps], finals[0.0]) for eps in (1e-1, 1e-2, 1e-3)]
    assert gaps[0] > gaps[1] > gaps[2], f"distances {gaps} not monotone in eps"
    for eps, residual in residuals.items():
        assert residual <= 1e-6, f"eps={eps}: residual {residual!r} exceeds 1e-6"


def test_07_twin_divergence_responds_quadratically_to_delta():
    config = make_config(**{"grid.n": 16, "data.amplitude": "1e-2"})
    base = build_initial_data(config)
    finals = {}
    for delta in (0.0, 1e-5, 1e-6):
        init = perturb_phi(base, config, delta)
        _, final, _ = dynamic_run(
            config, dt=2e-3, t_end=1.0, stride=10**9, initial=init
        )
        finals[delta] = final
    ratio = twin_divergence(finals[1e-5], finals[0.0]) / twin_divergence(
        finals[1e-6], finals[0.0]
    )
    assert 80.0 <= ratio <= 120.0, f"twin-divergence ratio {ratio!r} outside 100 +- 20%"


def test_08_elliptic_recovery_and_stable_regularity_ratio(amplitude_sweep):
    # manufactured right-hand side: the per-mode solve must return the
    # field the source was built from
    grid = Grid(n=16)
    model = model_from_config(RunConfig())
    symbols = assemble_symbols(model, grid)
    rng = np.random.default_rng(3)
    w = VectorField.from_values(grid, rng.standard_normal((3,) + grid.shape)).truncated(3)
    coeffs = w.coeffs.copy()
    coeffs[:, 0, 0, 0] = 0.0
    w = VectorField(grid, coeffs)
    phi = ScalarField.from_values(grid, rng.standard_normal(grid.shape)).truncated(3)
    pc = phi.coeffs.copy()
    pc[0, 0, 0] = 0.0
    phi = ScalarField(grid, pc)
    gradw = np.moveaxis(gradient(w).values(), (0, 1), (3, 4))
    source = np.einsum("ijlm,...lm->...ij", symbols.c, gradw)
    source += phi.values()[..., None, None] * symbols.g
    recovered = solve_linear_elliptic(
        symbols, MatrixField.from_values(grid, np.moveaxis(source, (3, 4), (0, 1))), phi
    )
    rel = VectorField(grid, recovered.coeffs - w.coeffs).l2_norm() / w.l2_norm()
    assert rel <= 1e-10, f"manufactured recovery error {rel!r} exceeds 1e-10"

    # curvature of the deformation stays proportional to the gradient of
    # the order parameter across the amplitude sweep
    ratios = []
    for entry in amplitude_sweep:
        state = entry["prepared"]
        gw = gradient(state.w)
        curvature = np.sqrt(max(sobolev_norm(gw, 2) ** 2 - sobolev_norm(gw, 1) ** 2, 0.0))
        ratios.append(curvature / sobolev_norm(gradient(state.phi), 1))
    spread = max(ratios) / min(ratios)
    assert spread <= 2.0, f"regularity ratios {ratios} vary by {spread!r} > 2"


def test_09_apriori_quotient_finite_and_stable_under_halving(flagship_run):
    def quotient(records, init, model):
        e_big0 = augmented_energy(init, model)
        denom = (
            e_big0
            + 1.0**2 * records[0].E0
            + init.w.l2_norm() ** 2
        )
        return max(r.Z_big for r in records) / denom

    model = model_from_config(flagship_run["config"])
    q_full = quotient(flagship_run["records"], flagship_run["init"], model)

    half_config = make_config(**{"data.amplitude": "5e-3"})
    records, _, init = dynamic_run(half_config, dt=1e-3, t_end=1.0, stride=10)
    q_half = quotient(records, init, model)

    assert np.isfinite(q_full) and q_full > 0.0
    ratio = max(q_full, q_half) / min(q_full, q_half)
    assert ratio <= 2.0, f"quotients {q_full!r} vs {q_half!r} vary by {ratio!r} > 2"


def test_10_quadratic_form_inequality_certified_quickly():
    start = time.perf_counter()
    report = appendix_inequality_check(0.25, 0.1 * np.eye(3), samples=100_000, seed=0)
    elapsed = time.perf_counter() - start
    assert report.criterion_holds
    assert report.sampled_min_margin >= -1e-10
    assert not report.counterexample_found
    assert elapsed <= 10.0
