"""
Builds grids, weights and initial data from an ExperimentConfig and runs the
configured scenario, collecting the invariant-check verdicts.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from utils.analysis import (bv_convergence_report, contraction_report, convergence_order, fit_tail,
                            harnack_report, stability_epsilon_bound, stability_study,
                            summarize_trajectory)
from utils.config import SCHEMA_VERSION, ExperimentConfig, get_config
from utils.errors import ConfigError
from utils.grid_domain import Grid, Interval, Torus, make_grid
from utils.jko import JkoParams, jko_run
from utils.measures import (Density, Exponents, Weight, cosine_rho, exp_tilt_rho, l1_distance, make_density,
                            steady_state, to_u, uniform_rho, weight_from_rho, weight_from_samples)
from utils.pde_solver import PdeParams, pde_solve
from utils.trajectory import Trajectory
from utils.trajectory_scanner import TrajectoryScanner

logger = logging.getLogger(__name__)

STATIONARY_TOL = 1e-8
MAX_PRINCIPLE_TOL = 1e-6
LQ_SLACK = 1e-10


@dataclass
class Setup:
    grid: Grid
    exps: Exponents
    weight: Weight
    f0: Density


@dataclass
class ExperimentResult:
    scenario: str
    setup: Setup
    trajectories: Dict[str, Trajectory] = field(default_factory=dict)
    checks: Dict[str, bool] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)
    series: Dict[str, Any] = field(default_factory=dict)
    fit: Optional[Dict[str, Any]] = None
    failure: Optional[str] = None

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def diagnostics(self) -> Dict[str, Any]:
        return {'schema_version': SCHEMA_VERSION, 'scenario': self.scenario, 'summary': self.summary,
                'checks': self.checks, 'fit': self.fit, 'series': self.series, 'failure': self.failure}


def build_domain(spec: Dict[str, Any]):
    if spec['kind'] == 'torus':
        return Torus(float(spec.get('length', 1.0)))
    return Interval(float(spec.get('a', 0.0)), float(spec.get('b', 1.0)))


def _read_profile(path: str, column: str, grid: Grid) -> np.ndarray:
    """Tabulated (x, column) CSV interpolated to the cell centers"""
    try:
        table = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as exc:
        raise ConfigError(f"Cannot read profile {path}: {exc}") from exc
    if 'x' not in table or column not in table:
        raise ConfigError(f"Profile {path} needs columns 'x' and '{column}'")
    table = table.sort_values('x')
    period = grid.domain.measure if grid.periodic else None
    return np.interp(grid.centers, table['x'].to_numpy(float), table[column].to_numpy(float), period=period)


def build_weight(cfg: ExperimentConfig, grid: Grid, exps: Exponents) -> Weight:
    spec = cfg.rho
    preset = spec['preset']
    if preset == 'custom':
        samples = _read_profile(spec['path'], 'rho', grid)
        Lambda = 0.0 if cfg.Lambda is None else cfg.Lambda
        if cfg.Lambda is None:
            logger.warning("custom rho without Lambda; assuming Lambda = 0")
        return weight_from_samples(samples, grid, exps, Lambda)
    if preset == 'cosine':
        rho_fn, Lambda = cosine_rho(grid, exps, float(spec.get('amplitude', 0.25)))
    elif preset == 'exp-tilt':
        rho_fn, Lambda = exp_tilt_rho(grid, exps, float(spec.get('slope', 1.0)))
    else:
        rho_fn, Lambda = uniform_rho(grid, exps)
    return weight_from_rho(rho_fn, grid, exps, Lambda if cfg.Lambda is None else cfg.Lambda)


def smooth_random_field(grid: Grid, rng: np.random.Generator, modes: int = 4) -> np.ndarray:
    """Random trigonometric field with max |value| = 1"""
    y = 2.0 * np.pi * (grid.centers - grid.domain.left) / grid.domain.measure
    field_values = np.zeros(grid.n)
    for k in range(1, modes + 1):
        a, b = rng.standard_normal(2)
        field_values += (a * np.cos(k * y) + b * np.sin(k * y)) / k
    return field_values / np.max(np.abs(field_values))


def build_initial_density(spec: Dict[str, Any], grid: Grid, w: Weight, seed: int = 0) -> Density:
    preset = spec['preset']
    mass = float(spec.get('mass', 1.0))
    x = grid.centers - grid.domain.left
    length = grid.domain.measure
    if preset == 'steady':
        return steady_state(w, mass, grid)
    if preset == 'sine':
        values = 1.0 + float(spec.get('amplitude', 0.3)) * np.sin(2.0 * np.pi * x / length)
    elif preset == 'spike':
        center = float(spec.get('center', 0.05 * length))
        width = float(spec.get('width', 0.1 * length))
        inside = np.abs(x - center) <= 0.5 * width + 1e-12
        values = float(spec.get('floor', 0.05)) + float(spec.get('height', 4.0)) * inside
    elif preset == 'random':
        rng = np.random.default_rng(seed)
        values = w.m * (1.0 + float(spec.get('spread', 0.5)) * smooth_random_field(grid, rng, int(spec.get('modes', 4))))
    else:
        values = _read_profile(spec['path'], 'f', grid)
    values = np.asarray(values, dtype=float)
    return make_density(values * mass / (grid.h * values.sum()), grid)


def build_setup(cfg: ExperimentConfig, seed: Optional[int] = None) -> Setup:
    grid = make_grid(build_domain(cfg.domain), cfg.n)
    exps = Exponents(float(cfg.r))
    weight = build_weight(cfg, grid, exps)
    f0 = build_initial_density(cfg.f0, grid, weight, cfg.seed if seed is None else seed)
    return Setup(grid=grid, exps=exps, weight=weight, f0=f0)


def jko_params(solver: Dict[str, Any], tau: Optional[float] = None) -> JkoParams:
    return JkoParams(tau=float(tau if tau is not None else solver['tau']),
                     n_quantiles=solver.get('n_quantiles'),
                     newton_tol=float(solver.get('newton_tol', 1e-10)),
                     newton_max_iter=int(solver.get('newton_max_iter', 200)),
                     monotonicity_floor=float(solver.get('monotonicity_floor', 1e-12)))


def pde_params(solver: Dict[str, Any], dt: Optional[float] = None) -> PdeParams:
    return PdeParams(dt=float(dt if dt is not None else solver['dt']),
                     scheme=solver.get('scheme', 'implicit'),
                     newton_tol=float(solver.get('newton_tol', 1e-11)),
                     max_newton=int(solver.get('max_newton', 50)),
                     cfl_safety=float(solver.get('cfl_safety', 0.4)))


def run_solver(cfg: ExperimentConfig, setup: Setup, f0: Optional[Density] = None, stride: Optional[int] = None,
               horizon: Optional[float] = None) -> Trajectory:
    """Run the configured solver from f0 (default: the configured datum)"""
    f0 = setup.f0 if f0 is None else f0
    stride = cfg.stride if stride is None else stride
    horizon = cfg.horizon if horizon is None else horizon
    if cfg.solver['kind'] == 'jko':
        params = jko_params(cfg.solver)
        n_steps = int(round(horizon / params.tau))
        return jko_run(f0, setup.weight, setup.exps, params, n_steps, q_list=cfg.q_list, stride=stride)
    return pde_solve(f0, setup.weight, setup.exps, pde_params(cfg.solver), horizon,
                     q_list=cfg.q_list, stride=stride)


def _parallel_map(func: Callable, items: List) -> List:
    workers = max(1, min(int(get_config('workers', 1)), len(items)))
    if workers == 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def trajectory_checks(cfg: ExperimentConfig, setup: Setup, traj: Trajectory) -> Dict[str, bool]:
    """Verdicts for the checks requested in cfg.checks that read one trajectory"""
    frame = traj.frame
    scanner = TrajectoryScanner(frame)
    table_checks = scanner.checks()
    u0 = to_u(setup.f0, setup.weight)
    verdicts: Dict[str, bool] = {}
    for name in cfg.checks:
        if name == 'mass':
            verdicts[name] = table_checks['mass_conserved']
        elif name == 'energy':
            ok = table_checks['energy_nonincreasing']
            if cfg.solver['kind'] == 'jko' and cfg.stride == 1 and len(frame) > 1:
                tau = float(cfg.solver['tau'])
                chain = frame['F_rho'].to_numpy()[1:] + frame['W2_step'].to_numpy()[1:] ** 2 / (2 * tau) \
                    - frame['F_rho'].to_numpy()[:-1]
                ok = ok and bool(np.all(chain <= 1e-9))
                ok = ok and bool(frame['W2_sq_cumulative'].iloc[-1] <= 2 * tau * frame['F_rho'].iloc[0] + 1e-8)
            verdicts[name] = ok
        elif name == 'stationary':
            verdicts[name] = bool(frame['L2_to_steady'].max() <= STATIONARY_TOL)
        elif name == 'max_principle':
            verdicts[name] = bool(frame['min_u'].min() >= u0.min() - MAX_PRINCIPLE_TOL
                                  and frame['max_u'].max() <= u0.max() + MAX_PRINCIPLE_TOL)
        elif name == 'bv':
            report = bv_convergence_report(traj, setup.weight, setup.exps)
            verdicts[name] = report.monotone and report.growth_bound_ok
        elif name == 'lq_monotone':
            verdicts[name] = all(scanner.is_nonincreasing(c, LQ_SLACK) for c in frame.columns if c.startswith('G_q='))
        elif name == 'harnack':
            verdicts[name] = harnack_report(traj, setup.weight).monotone
        elif name == 'convergence':
            try:
                fit = fit_tail(frame['t'].to_numpy(), frame['L2_to_steady'].to_numpy())
                verdicts[name] = fit.c > 0 and fit.r_squared >= 0.99
            except ValueError:
                verdicts[name] = False
    return verdicts


def _decay_fit(frame: pd.DataFrame) -> Optional[Dict[str, Any]]:
    try:
        return fit_tail(frame['t'].to_numpy(), frame['L2_to_steady'].to_numpy()).to_dict()
    except ValueError:
        return None


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run one configured scenario"""
    setup = build_setup(cfg)
    result = ExperimentResult(scenario=cfg.scenario, setup=setup)
    logger.info("scenario %s: n=%d r=%g horizon=%g", cfg.scenario, cfg.n, cfg.r, cfg.horizon)

    if cfg.scenario == 'cross_validation':
        _cross_validation(cfg, setup, result)
    elif cfg.scenario == 'stability':
        _stability(cfg, setup, result)
    else:
        traj = run_solver(cfg, setup)
        result.trajectories['main'] = traj
        result.failure = traj.failure
        result.checks.update(trajectory_checks(cfg, setup, traj))
        result.fit = _decay_fit(traj.frame)
        summary = summarize_trajectory(traj.frame)
        result.summary.update(summary['overview'])
        result.summary['insights'] = summary['insights']
        result.summary['L2_error'] = float(traj.frame['L2_to_steady'].iloc[-1])
        if cfg.scenario == 'harnack':
            report = harnack_report(traj, setup.weight)
            result.series['harnack'] = report.frame.to_dict(orient='list')
            result.checks['harnack'] = report.monotone
    return result


def _cross_validation(cfg: ExperimentConfig, setup: Setup, result: ExperimentResult) -> None:
    """L1 gap at the horizon between JKO runs at each tau and a fine implicit PDE reference"""
    reference_solver = dict(cfg.solver, kind='pde', dt=cfg.reference_dt)
    taus = sorted(cfg.tau_list, reverse=True)

    def job(item):
        if item == 'reference':
            return pde_solve(setup.f0, setup.weight, setup.exps, pde_params(reference_solver), cfg.horizon,
                             stride=max(1, int(round(cfg.horizon / cfg.reference_dt))))
        params = jko_params(cfg.solver, tau=item)
        return jko_run(setup.f0, setup.weight, setup.exps, params, int(round(cfg.horizon / item)),
                       stride=max(1, int(round(cfg.horizon / item))))

    runs = _parallel_map(job, ['reference'] + taus)
    reference, jko_runs = runs[0], runs[1:]
    failures = [t.failure for t in runs if t.failure]
    if failures:
        result.failure = failures[0]
        return
    gaps = [l1_distance(t.final, reference.final, setup.grid) for t in jko_runs]
    order = convergence_order(taus, gaps)
    result.series['cross_validation'] = [{'tau': tau, 'l1_gap': gap} for tau, gap in zip(taus, gaps)]
    result.summary.update(order)
    result.summary['L2_error'] = float(reference.frame['L2_to_steady'].iloc[-1])
    result.trajectories['reference'] = reference
    if 'cross_validation' in cfg.checks:
        result.checks['cross_validation'] = order['decreasing'] and min(order['pairwise_orders']) >= 0.5


def _stability(cfg: ExperimentConfig, setup: Setup, result: ExperimentResult) -> None:
    """Continuous dependence on the initial datum"""
    rng = np.random.default_rng(cfg.seed)
    perturbation = setup.weight.m * smooth_random_field(setup.grid, rng)
    epsilons = cfg.epsilons or [0.2, 0.1, 0.05, 0.025]
    max_eps = stability_epsilon_bound(setup.f0, perturbation)
    if max(epsilons) > max_eps:
        raise ConfigError(f"stability epsilons must stay below {max_eps:.3g} to keep f0 positive")
    frame = stability_study(setup.f0, perturbation, epsilons,
                            lambda f0: run_solver(cfg, setup, f0=f0, stride=10 ** 9))
    result.series['stability'] = frame.to_dict(orient='records')
    gaps = frame['final_gap'].to_numpy()
    result.summary['final_gaps'] = gaps.tolist()
    if 'stability' in cfg.checks:
        result.checks['stability'] = bool(np.all(np.diff(gaps) < 0)
                                          and np.all(gaps <= frame['initial_gap'].to_numpy() + 1e-10))


def check_compatible(cfg_a: ExperimentConfig, cfg_b: ExperimentConfig) -> None:
    for key in ('domain', 'n', 'r', 'rho', 'Lambda', 'horizon', 'solver'):
        if getattr(cfg_a, key) != getattr(cfg_b, key):
            raise ConfigError(f"configs differ in '{key}'; compare needs matching setups")


def run_comparison(cfg_a: ExperimentConfig, cfg_b: ExperimentConfig) -> ExperimentResult:
    """Run two configs side by side and report the L1 contraction series"""
    check_compatible(cfg_a, cfg_b)
    setups = [build_setup(cfg_a), build_setup(cfg_b)]
    trajs = _parallel_map(lambda pair: run_solver(pair[0], pair[1]), list(zip([cfg_a, cfg_b], setups)))
    result = ExperimentResult(scenario='compare', setup=setups[0],
                              trajectories={'a': trajs[0], 'b': trajs[1]})
    failures = [t.failure for t in trajs if t.failure]
    if failures:
        result.failure = failures[0]
        return result
    report = contraction_report(trajs[0], trajs[1], setups[0].weight)
    result.series['contraction'] = report.frame.to_dict(orient='list')
    result.checks.update({'positive_part_nonincreasing': report.positive_monotone,
                          'negative_part_nonincreasing': report.negative_monotone,
                          'l1_nonincreasing': report.total_monotone})
    result.summary['final_l1'] = float(report.frame['l1'].iloc[-1])
    return result
