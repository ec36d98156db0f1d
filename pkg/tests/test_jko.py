import numpy as np
import pytest

from conftest import WEIGHT_PRESETS, build_weight, sine_density, smooth_field
from utils.analysis import convergence_order
from utils.errors import InvalidResolutionError, PositivityError
from utils.grid_domain import Interval, make_grid
from utils.jko import (JkoParams, MassCoordinates, bv_growth_constant, bv_growth_factor, check_flow_interchange,
                       energy_chain_defects, h1_dissipation_identity, jko_run, jko_step)
from utils.measures import (Exponents, U_prime, functional_F, l1_distance, make_density, steady_state, to_u,
                            uniform_rho, weight_from_rho, weighted_BV_norm)
from utils.pde_solver import PdeParams, pde_solve


def test_params_validation():
    with pytest.raises(ValueError):
        JkoParams(tau=0.0)
    with pytest.raises(InvalidResolutionError):
        JkoParams(tau=1e-3, n_quantiles=1)


@pytest.mark.parametrize("preset", WEIGHT_PRESETS)
def test_mass_coordinates_invert_weight(preset):
    grid, exps, w = build_weight(preset, n=64)
    coords = MassCoordinates(w)
    assert coords.total == pytest.approx(1.0 / w.gamma)
    np.testing.assert_allclose(coords.psi(coords.phi_edges), grid.edges, atol=1e-12)
    levels = np.linspace(0.0, coords.total, 1001)
    assert np.all(coords.psi(levels, 1) > 0)


def test_mass_coordinates_lift_on_torus(cosine_setup):
    grid, exps, w = cosine_setup
    coords = MassCoordinates(w)
    z = np.linspace(0.0, coords.total, 7)
    np.testing.assert_allclose(coords.psi(z + coords.total), coords.psi(z) + 1.0, atol=1e-12)


def test_binning_conserves_mass_and_inverts_steady_quantiles(cosine_setup):
    grid, exps, w = cosine_setup
    coords = MassCoordinates(w)
    f = sine_density(grid)
    binned = coords.bin_to_grid(coords.z_quantiles(f, grid.n), f.mass)
    assert grid.h * binned.sum() == pytest.approx(f.mass, rel=1e-13)
    np.testing.assert_allclose(binned, f.f, rtol=2e-2)
    steady = steady_state(w, 2.0, grid)
    binned = coords.bin_to_grid(coords.z_quantiles(steady, 97), steady.mass)
    np.testing.assert_allclose(binned, steady.f, rtol=1e-11)


@pytest.mark.parametrize("preset", WEIGHT_PRESETS)
def test_steady_state_is_a_fixed_point(preset):
    grid, exps, w = build_weight(preset)
    f0 = steady_state(w, 1.0, grid)
    traj = jko_run(f0, w, exps, JkoParams(tau=1e-3), 500, stride=50)
    assert traj.completed
    assert traj.frame['L2_to_steady'].max() <= 1e-8


def test_step_reports_are_consistent(cosine_setup):
    grid, exps, w = cosine_setup
    f = sine_density(grid)
    report = jko_step(f, w, exps, JkoParams(tau=1e-3))
    assert report.f_next.mass == pytest.approx(f.mass, rel=1e-13)
    assert report.energy_before == pytest.approx(functional_F(w, f, exps))
    assert report.energy_after < report.energy_before
    assert report.gradient_residual <= 10 * 1e-10 / 1e-3
    assert report.optimality_residual <= 10 * 1e-10 / 1e-3
    assert report.z_next[-1] - report.z_next[0] == pytest.approx(MassCoordinates(w).total)
    assert report.lagrangian_after <= report.lagrangian_before
    assert report.w2 > 0


def test_optimality_residual_measures_the_potential_balance():
    grid, exps, w = build_weight('uniform', n=256)
    report = jko_step(sine_density(grid), w, exps, JkoParams(tau=1e-3))
    pressure = U_prime(to_u(report.f_next, w), exps)
    assert report.optimality_residual <= 0.1 * 0.5 * (pressure.max() - pressure.min())


def test_optimality_residual_vanishes_at_steady_state(cosine_setup):
    grid, exps, w = cosine_setup
    report = jko_step(steady_state(w, 1.0, grid), w, exps, JkoParams(tau=1e-3))
    assert report.optimality_residual <= 1e-8


def test_energy_dissipation_and_telescoping(cosine_setup):
    grid, exps, w = cosine_setup
    tau = 1e-3
    f = sine_density(grid, amplitude=0.5)
    F0 = functional_F(w, f, exps)
    reports = []
    for _ in range(40):
        report = jko_step(f, w, exps, JkoParams(tau=tau))
        reports.append(report)
        f = report.f_next
    assert np.all(energy_chain_defects(reports, tau) <= 1e-9)
    assert sum(rep.w2 ** 2 for rep in reports) <= 2 * tau * F0 + 1e-8


def test_energy_checks_on_interval():
    grid, exps, w = build_weight('exp-tilt', n=128)
    f = make_density(1.0 + 0.5 * np.cos(np.pi * grid.centers), grid)
    traj = jko_run(f, w, exps, JkoParams(tau=2e-3), 25)
    frame = traj.frame
    chain = frame['F_rho'].to_numpy()[1:] + frame['W2_step'].to_numpy()[1:] ** 2 / 4e-3 - frame['F_rho'].to_numpy()[:-1]
    assert np.all(chain <= 1e-9)
    assert frame['mass'].sub(frame['mass'].iloc[0]).abs().max() <= 1e-12


def test_carried_quantiles_approach_pde_as_tau_halves():
    grid, exps, w = build_weight('uniform', n=128)
    f0 = sine_density(grid)
    horizon = 0.04
    reference = pde_solve(f0, w, exps, PdeParams(dt=1e-5), horizon, stride=10 ** 9).final
    taus = [4e-3, 2e-3, 1e-3]
    gaps = []
    for tau in taus:
        traj = jko_run(f0, w, exps, JkoParams(tau=tau), int(round(horizon / tau)), stride=10 ** 9)
        assert traj.completed
        gaps.append(l1_distance(traj.final, reference, grid))
    order = convergence_order(taus, gaps)
    assert order['decreasing'], gaps
    assert min(order['pairwise_orders']) >= 0.5


def test_run_relaxes_to_steady_state():
    grid, exps, w = build_weight('uniform', n=128)
    traj = jko_run(sine_density(grid), w, exps, JkoParams(tau=1e-3), 2000, stride=100)
    assert traj.completed
    assert traj.frame['L2_to_steady'].iloc[-1] <= 1e-3
    assert np.all(np.diff(traj.frame['F_rho'].to_numpy()) <= 1e-12)


def _max_principle_violation(n, seed, steps):
    grid, exps, w = build_weight('cosine', n=n)
    f0 = make_density(w.m * (1.25 + 0.7 * smooth_field(grid, seed)), grid)
    u0 = to_u(f0, w)
    traj = jko_run(f0, w, exps, JkoParams(tau=1e-3), steps)
    assert traj.completed
    return max(0.0, float(u0.min() - traj.frame['min_u'].min()), float(traj.frame['max_u'].max() - u0.max()))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_discrete_maximum_principle(seed):
    assert _max_principle_violation(128, seed, 40) <= 1e-6


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_discrete_maximum_principle_under_refinement(seed):
    coarse = _max_principle_violation(512, seed, 100)
    fine = _max_principle_violation(1024, seed, 100)
    assert coarse <= 1e-6
    assert fine <= max(0.5 * coarse, 1e-12)


def test_bv_nonincreasing_for_uniform_weight(uniform_setup):
    grid, exps, w = uniform_setup
    traj = jko_run(sine_density(grid), w, exps, JkoParams(tau=1e-3), 100)
    assert np.all(np.diff(traj.frame['BV_m'].to_numpy()) <= 1e-8)


def test_bv_growth_factor_bound(cosine_setup):
    grid, exps, w = cosine_setup
    tau = 1e-3
    f = sine_density(grid)
    u0 = to_u(f, w)
    factor = bv_growth_factor(float(u0.min()), float(u0.max()), w.Lambda, exps, tau)
    assert factor > 1.0
    bv = [weighted_BV_norm(u0, w, grid)]
    for _ in range(50):
        f = jko_step(f, w, exps, JkoParams(tau=tau)).f_next
        bv.append(weighted_BV_norm(to_u(f, w), w, grid))
    bv = np.array(bv)
    ratios = bv[1:] / bv[:-1]
    assert np.all(ratios[bv[:-1] > 1e-8] <= factor + 1e-6)


def test_bv_growth_constant_selection():
    exps = Exponents(1.0)
    assert bv_growth_constant(0.5, 2.0, 1.0, exps) == pytest.approx(2.0 * 0.5 ** -2)
    assert bv_growth_constant(0.5, 2.0, -1.0, exps) == pytest.approx(2.0 * 2.0 ** -2)
    assert bv_growth_constant(0.5, 2.0, 0.0, exps) == 0.0
    assert bv_growth_factor(0.5, 2.0, 0.0, exps, 1.0) == 1.0
    with pytest.raises(ValueError):
        bv_growth_factor(0.5, 2.0, 1.0, exps, 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_flow_interchange_slack(seed):
    r = 1.0
    grid, exps, w = build_weight('uniform', n=256, r=r)
    f = make_density(w.m * (1.0 + 0.3 * smooth_field(grid, seed)), grid)
    report = jko_step(f, w, exps, JkoParams(tau=1e-3))
    assert check_flow_interchange(report, r + 3.0, w, exps, 1e-3) >= -1e-8


def _chained_slacks(preset, q, steps, tau=1e-3):
    grid, exps, w = build_weight(preset, n=256)
    f = sine_density(grid)
    C0 = float(np.max(to_u(f, w)))
    slacks = []
    for _ in range(steps):
        report = jko_step(f, w, exps, JkoParams(tau=tau))
        slacks.append(check_flow_interchange(report, q, w, exps, tau, C0=C0))
        f = report.f_next
    return np.array(slacks)


def test_flow_interchange_along_a_chain():
    assert np.all(_chained_slacks('uniform', 4.0, 50) >= -1e-8)


def test_flow_interchange_with_positive_lambda():
    grid, exps, w = build_weight('cosine', n=256)
    assert w.Lambda > 0
    assert np.all(_chained_slacks('cosine', 4.0, 50) >= -1e-8)


def test_h1_dissipation_identity():
    grid, exps, w = build_weight('uniform', n=256)
    tau = 1e-3
    report = jko_step(sine_density(grid), w, exps, JkoParams(tau=tau))
    lhs, rhs, bound = h1_dissipation_identity(report, w, exps, tau)
    assert rhs <= bound + 1e-12
    assert lhs == pytest.approx(rhs, rel=0.03)


def test_run_rejects_empty_cells(uniform_setup):
    grid, exps, w = uniform_setup
    values = np.ones(grid.n)
    values[0] = 0.0
    with pytest.raises(PositivityError):
        jko_run(make_density(values, grid), w, exps, JkoParams(tau=1e-3), 1)
    with pytest.raises(PositivityError):
        jko_step(make_density(values, grid), w, exps, JkoParams(tau=1e-3))


def test_run_records_failure_instead_of_raising(uniform_setup):
    grid, exps, w = uniform_setup
    traj = jko_run(sine_density(grid), w, exps, JkoParams(tau=1e-3, newton_max_iter=0), 5)
    assert not traj.completed
    assert 'StepFailureError' in traj.failure
    assert len(traj) == 1


def test_stride_keeps_final_sample(uniform_setup):
    grid, exps, w = uniform_setup
    traj = jko_run(sine_density(grid), w, exps, JkoParams(tau=1e-3), 7, stride=3)
    assert list(traj.frame['step']) == [0, 3, 6, 7]
    assert traj.times[-1] == pytest.approx(7e-3)


def test_coarser_quantile_resolution():
    grid = make_grid(Interval(0.0, 1.0), 128)
    exps = Exponents(0.5)
    rho_fn, Lambda = uniform_rho(grid, exps)
    w = weight_from_rho(rho_fn, grid, exps, Lambda)
    f = make_density(1.0 + 0.4 * np.cos(np.pi * grid.centers), grid)
    report = jko_step(f, w, exps, JkoParams(tau=1e-3, n_quantiles=64))
    assert report.f_next.mass == pytest.approx(f.mass, rel=1e-12)
    assert report.energy_after <= report.energy_before
