"""Quasistatic solver tests.

Oracles: hand-assembled per-mode solves of the constant-coefficient
elliptic operator, manufactured-solution round trips, Taylor scaling of
the nonlinear remainders, and the closed-form Hessian blocks at
equilibrium (acoustic matrix |k|^2 Id + 3 k k^T, coupling 0.8 Id,
diffusion stiffness 1.24 for the 0.1 Id generator).
"""

import numpy as np
import pytest

from prestrain_lab.energy import BaseDensity, DensityModel, PrestrainMap
from prestrain_lab.errors import (
    NewtonDivergedError,
    NoContractionError,
    NonZeroMeanError,
    NotEllipticError,
)
from prestrain_lab.linalg3 import rotations_from_quaternions
from prestrain_lab.quasistatic import (
    LinearizedSymbols,
    QuasiState,
    advance_quasistatic,
    assemble_symbols,
    elliptic_residual,
    newton_refine,
    residual_AB,
    solve_linear_elliptic,
)
from prestrain_lab.spectral import Grid, MatrixField, ScalarField, VectorField

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


@pytest.fixture(scope="module")
def symbols16(grid16):
    return assemble_symbols(make_model(), grid16)


def phi_noise(grid, amplitude, seed=0, band=2):
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal(grid.shape)
    p = ScalarField.from_values(grid, raw - raw.mean()).truncated(band)
    coeffs = p.coeffs.copy()
    coeffs[0, 0, 0] = 0.0
    p = ScalarField(grid, coeffs)
    return ScalarField(grid, p.coeffs * (amplitude / p.sobolev_norm(2)))


def w_noise(grid, amplitude, seed=0, band=2):
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((3,) + grid.shape)
    f = VectorField.from_values(grid, raw - raw.mean(axis=(1, 2, 3), keepdims=True))
    f = f.truncated(band)
    return VectorField(grid, f.coeffs * (amplitude / f.sobolev_norm(1)))


# -- symbol assembly ---------------------------------------------------------


def test_acoustic_matrix_closed_form(grid16):
    # quadratic exponent, no coupling: A(k) v = |k|^2 v + 3 (v.k) k
    symbols = assemble_symbols(make_model(m_b=np.zeros((3, 3))), grid16)
    assert symbols.a == pytest.approx(1.0, rel=1e-12)
    assert np.max(np.abs(symbols.g)) < 1e-12
    k = np.array([2.0, 1.0, 0.0])
    expected = (k @ k) * np.eye(3) + 3.0 * np.outer(k, k)
    got = symbols.acoustic[2, 1, 0]
    np.testing.assert_allclose(got, expected, atol=1e-12)
    eigs = np.linalg.eigvalsh(got)
    np.testing.assert_allclose(eigs, [5.0, 5.0, 20.0], atol=1e-12)


def test_symbols_coupling_blocks(symbols16):
    np.testing.assert_allclose(symbols16.g, 0.8 * np.eye(3), atol=1e-12)
    assert symbols16.a == pytest.approx(1.24, rel=1e-12)


def test_symbols_inverse_consistency(grid16, symbols16):
    active = grid16.dealias_mask & (grid16.k2 > 0.0)
    prod = np.einsum(
        "mij,mjl->mil", symbols16.acoustic[active], symbols16.acoustic_inv[active]
    )
    np.testing.assert_allclose(prod, np.broadcast_to(np.eye(3), prod.shape), atol=1e-12)
    assert not symbols16.acoustic_inv[0, 0, 0].any()


def test_assemble_rejects_noncoercive(grid16):
    flat = make_model(composition="none", m_b=np.zeros((3, 3)), quadratic=False)
    with pytest.raises(NotEllipticError) as info:
        assemble_symbols(flat, grid16)
    assert info.value.eigenvalue is not None
    assert info.value.eigenvalue <= 1e-12


# -- linear elliptic solve ---------------------------------------------------


def test_solve_zero_rhs_gives_zero(grid16, symbols16):
    w = solve_linear_elliptic(
        symbols16, MatrixField.zeros(grid16), ScalarField.zeros(grid16)
    )
    assert not w.coeffs.any()


def test_solve_manufactured_roundtrip(grid16, symbols16):
    target = w_noise(grid16, 0.37, seed=21, band=3)
    from prestrain_lab.spectral import gradient

    gradw = np.moveaxis(gradient(target).values(), (0, 1), (3, 4))
    induced = np.einsum("ijlm,...lm->...ij", symbols16.c, gradw)
    a_rhs = MatrixField.from_values(grid16, np.moveaxis(induced, (3, 4), (0, 1)))
    recovered = solve_linear_elliptic(symbols16, a_rhs, ScalarField.zeros(grid16))
    err = (recovered - target).sobolev_norm(1) / target.sobolev_norm(1)
    assert err < 1e-10


def test_solve_single_mode_hand_check(grid16, symbols16):
    # phi = beta sin(k.x) with coupling 0.8 Id drives the longitudinal
    # branch: w = 0.8 beta k cos(k.x) / (4 |k|^2)
    k = np.array([2, 1, 0])
    beta = 0.3
    x, y, z = grid16.coordinates()
    phase = k[0] * x + k[1] * y + k[2] * z
    phi = ScalarField.from_values(grid16, beta * np.sin(phase))
    w = solve_linear_elliptic(symbols16, MatrixField.zeros(grid16), phi)
    k2 = float(k @ k)
    expected = (
        0.8
        * beta
        * np.cos(phase)[None]
        * (k / (4.0 * k2)).reshape(3, 1, 1, 1)
    )
    np.testing.assert_allclose(w.values(), expected, atol=1e-13)


# -- nonlinear remainders ----------------------------------------------------


def test_residual_zero_at_equilibrium(grid16, symbols16):
    a_field, b_field = residual_AB(
        QuasiState.equilibrium(grid16), make_model(), symbols16
    )
    assert np.max(np.abs(a_field.values())) < 1e-14
    assert np.max(np.abs(b_field.values())) < 1e-14


def test_residual_quadratic_in_amplitude(grid16, symbols16):
    model = make_model()
    amps = np.array([1e-1, 1e-2, 1e-3])
    norms_a, norms_b = [], []
    for amp in amps:
        state = QuasiState(
            w_noise(grid16, amp, seed=31), phi_noise(grid16, amp, seed=32)
        )
        a_field, b_field = residual_AB(state, model, symbols16)
        norms_a.append(a_field.sobolev_norm(0))
        norms_b.append(b_field.sobolev_norm(0))
    slope_a = np.polyfit(np.log(amps), np.log(norms_a), 1)[0]
    slope_b = np.polyfit(np.log(amps), np.log(norms_b), 1)[0]
    assert slope_a == pytest.approx(2.0, abs=0.1)
    assert slope_b == pytest.approx(2.0, abs=0.1)


def test_stress_and_potential_vanish_on_rotations():
    # constant rotation gradients satisfy the balance: stress and
    # potential are exactly at the energy floor there
    rng = np.random.default_rng(7)
    quat = rng.standard_normal((5, 4))
    rots = rotations_from_quaternions(quat)
    for model in (make_model(), make_model(variant="W02", composition="left")):
        _, stress, potential, _ = model.value_and_first(np.zeros(5), rots)
        assert np.max(np.abs(stress)) < 1e-12
        assert np.max(np.abs(potential)) < 1e-12


# -- time stepping -----------------------------------------------------------


def test_advance_equilibrium_stays_exact(grid16, symbols16):
    stats = {}
    out = advance_quasistatic(
        QuasiState.equilibrium(grid16), 0.1, make_model(), symbols16, stats=stats
    )
    assert not out.w.coeffs.any()
    assert not out.phi.coeffs.any()
    assert out.t == 0.1
    assert stats["iterations"] == 1


def test_advance_rejects_nonzero_mean(grid16, symbols16):
    coeffs = phi_noise(grid16, 1e-2).coeffs.copy()
    coeffs[0, 0, 0] = 0.05
    bad = QuasiState(VectorField.zeros(grid16), ScalarField(grid16, coeffs))
    with pytest.raises(NonZeroMeanError):
        advance_quasistatic(bad, 1e-2, make_model(), symbols16)


def test_advance_rejects_negative_dt(grid16, symbols16):
    with pytest.raises(ValueError):
        advance_quasistatic(
            QuasiState.equilibrium(grid16), -1e-3, make_model(), symbols16
        )


def test_preparation_step_fixes_phi(grid16, symbols16):
    # dt = 0: phi bitwise unchanged, w jumps to the elliptic solution
    model = make_model()
    phi0 = phi_noise(grid16, 1e-2, seed=41)
    stats = {}
    prep = advance_quasistatic(
        QuasiState(VectorField.zeros(grid16), phi0), 0.0, model, symbols16, stats=stats
    )
    assert np.array_equal(prep.phi.coeffs, phi0.coeffs)
    assert prep.w.coeffs.any()
    assert stats["iterations"] <= 5
    assert stats["elliptic_residual"] <= 1e-10


def test_picard_contracts_and_meets_invariant(grid16, symbols16):
    model = make_model()
    state = advance_quasistatic(
        QuasiState(VectorField.zeros(grid16), phi_noise(grid16, 1e-2, seed=5)),
        0.0,
        model,
        symbols16,
    )
    for _ in range(3):
        stats = {}
        state = advance_quasistatic(state, 1e-2, model, symbols16, stats=stats)
        assert stats["iterations"] <= 8
        assert stats["contraction"] < 1.0
        assert stats["elliptic_residual"] <= 1e-8
        assert elliptic_residual(state, model) <= 1e-8


def test_contraction_improves_with_amplitude(grid16, symbols16):
    model = make_model()
    factors = []
    for amp in (1e-1, 1e-2):
        stats = {}
        advance_quasistatic(
            QuasiState(VectorField.zeros(grid16), phi_noise(grid16, amp, seed=1)),
            0.0,
            model,
            symbols16,
            stats=stats,
        )
        factors.append(stats["contraction"])
    assert factors[0] < 1.0
    assert factors[1] < factors[0]


def test_phi_l2_monotone_and_mean_conserved(grid16, symbols16):
    model = make_model()
    state = advance_quasistatic(
        QuasiState(VectorField.zeros(grid16), phi_noise(grid16, 1e-2, seed=5)),
        0.0,
        model,
        symbols16,
    )
    norms = [state.phi.sobolev_norm(0)]
    for _ in range(12):
        state = advance_quasistatic(state, 1e-2, model, symbols16)
        norms.append(state.phi.sobolev_norm(0))
        assert state.phi.mean() == 0.0
    for before, after in zip(norms, norms[1:]):
        assert after <= before + 1e-14
    assert norms[-1] < norms[0]


def test_regularity_ratio_stable_under_halving(grid16, symbols16):
    # second-gradient response per unit phi-gradient stays put as data shrinks
    model = make_model()
    ratios = []
    for amp in (1e-2, 5e-3):
        prep = advance_quasistatic(
            QuasiState(VectorField.zeros(grid16), phi_noise(grid16, amp, seed=8)),
            0.0,
            model,
            symbols16,
        )
        hess_w = VectorField(grid16, grid16.k2 * prep.w.coeffs)
        grad_phi = ScalarField(
            grid16, np.sqrt(grid16.k2) * prep.phi.coeffs
        )
        ratios.append(hess_w.sobolev_norm(1) / grad_phi.sobolev_norm(1))
    assert 0.5 < ratios[0] / ratios[1] < 2.0


def test_no_contraction_for_large_data(grid16, symbols16):
    big = phi_noise(grid16, 80.0, seed=1)
    with pytest.raises(NoContractionError) as info:
        advance_quasistatic(
            QuasiState(VectorField.zeros(grid16), big),
            0.0,
            make_model(),
            symbols16,
            max_iter=25,
        )
    assert info.value.iterations == 25


def test_no_contraction_when_iteration_budget_exhausted(grid16, symbols16):
    state = QuasiState(VectorField.zeros(grid16), phi_noise(grid16, 1e-2, seed=5))
    with pytest.raises(NoContractionError) as info:
        advance_quasistatic(state, 1e-2, make_model(), symbols16, max_iter=2)
    assert info.value.iterations == 2
    assert info.value.time == pytest.approx(1e-2)


# -- Newton polish -----------------------------------------------------------


def test_newton_noop_at_equilibrium(grid16, symbols16):
    eq = QuasiState.equilibrium(grid16)
    out = newton_refine(eq, make_model(), tol=1e-12, symbols=symbols16)
    assert out is eq


def test_newton_reduces_loose_picard_residual(grid16, symbols16):
    model = make_model()
    loose = advance_quasistatic(
        QuasiState(VectorField.zeros(grid16), phi_noise(grid16, 0.1, seed=2)),
        0.0,
        model,
        symbols16,
        picard_tol=1e-3,
        elliptic_tol=np.inf,
    )
    r0 = elliptic_residual(loose, model)
    assert r0 > 0.0
    calls = []
    refined = newton_refine(
        loose,
        model,
        tol=r0 / 150.0,
        symbols=symbols16,
        max_iter=3,
        callback=lambda i, r: calls.append((i, r)),
    )
    assert elliptic_residual(refined, model) <= r0 / 100.0
    assert len(calls) <= 3


def test_newton_quadratic_residual_decay(grid16, symbols16):
    # starting from w = 0 at pointwise-moderate phi the residual history
    # r_{n+1} ~ C r_n^2 shows slope 2 on a log-log fit
    model = make_model()
    start = QuasiState(VectorField.zeros(grid16), phi_noise(grid16, 8.0, seed=3))
    path = []
    newton_refine(
        start,
        model,
        tol=1e-12,
        symbols=symbols16,
        max_iter=6,
        callback=lambda i, r: path.append(r),
    )
    rs = [elliptic_residual(start, model)] + path
    usable = [r for r in rs if r > 1e-11]
    logs = np.log(usable)
    slope = np.polyfit(logs[:-1], logs[1:], 1)[0]
    assert slope == pytest.approx(2.0, abs=0.4)


def test_newton_diverges_on_hopeless_tolerance(grid16, symbols16):
    model = make_model()
    state = advance_quasistatic(
        QuasiState(VectorField.zeros(grid16), phi_noise(grid16, 1e-2, seed=9)),
        0.0,
        model,
        symbols16,
    )
    with pytest.raises(NewtonDivergedError) as info:
        newton_refine(state, model, tol=0.0, symbols=symbols16, max_iter=2)
    assert info.value.residual is not None
