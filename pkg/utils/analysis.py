"""
Post-processing of trajectories: Moser exponent schedule,
Harnack monitoring, exponential-rate fits, L1 contraction, BV decay and
dissipation-identity checks.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from utils.errors import PositivityError, SubcriticalExponentError, TimeGridMismatchError
from utils.jko import bv_growth_constant
from utils.measures import (Density, Exponents, Weight, flow_interchange_coefficient, functional_Gq,
                            l1_distance, make_density, to_u, u_power_gradient_energy, weighted_BV_norm)
from utils.trajectory import Trajectory
from utils.trajectory_scanner import TrajectoryScanner

logger = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-8
MAX_MOSER_TERMS = 100000


@dataclass(frozen=True)
class MoserSchedule:
    q0: float
    theta: float
    sigma: float
    q_seq: np.ndarray = field(repr=False)
    qbar_seq: np.ndarray = field(repr=False)
    eta_seq: np.ndarray = field(repr=False)
    A_partial: np.ndarray = field(repr=False)
    B_partial: np.ndarray = field(repr=False)
    A_inf: float
    A_tail: float
    B_inf: float
    B_inf_upper: float
    alpha: float
    beta: float
    K: int

    @property
    def fixed_point(self) -> float:
        return self.theta * self.sigma / (self.theta - 1.0)

    def closed_form(self, i) -> np.ndarray:
        """q_i = theta^i q0 - theta sigma (theta^i - 1) / (theta - 1)"""
        p = self.theta ** np.asarray(i, dtype=float)
        return p * self.q0 - self.theta * self.sigma * (p - 1.0) / (self.theta - 1.0)

    def table(self) -> pd.DataFrame:
        A = np.concatenate([[np.nan], self.A_partial])
        return pd.DataFrame({'i': np.arange(self.K + 1), 'q': self.q_seq, 'qbar': self.qbar_seq,
                             'eta': self.eta_seq, 'A_partial': A, 'B_partial': self.B_partial})

    def to_dict(self) -> Dict[str, float]:
        return {'q0': self.q0, 'theta': self.theta, 'sigma': self.sigma, 'K': self.K,
                'A_inf': self.A_inf, 'A_tail': self.A_tail, 'B_inf': self.B_inf,
                'B_inf_upper': self.B_inf_upper, 'alpha': self.alpha, 'beta': self.beta}


def moser_theta(d: int, p_star: float = 4.0) -> float:
    if d >= 3:
        return d / (d - 2.0)
    if not p_star > 2:
        raise ValueError(f"p_star must exceed 2, got {p_star}")
    return p_star / 2.0


def moser_schedule(q0: float, exps: Exponents, d: int = 1, p_star: float = 4.0,
                   tail_tol: float = 1e-12) -> MoserSchedule:
    """Exponent ladder q_{i+1} = theta (q_i - sigma) with certified A_inf, B_inf"""
    sigma = exps.sigma
    theta = moser_theta(d, p_star)
    qbar_star = sigma / (theta - 1.0)
    threshold = max(sigma * max(1.0, d / 2.0), qbar_star + sigma)
    if not q0 > threshold:
        raise SubcriticalExponentError(
            f"q0={q0} must exceed {threshold:g} (fixed point {qbar_star + sigma:g}, theta={theta:g})")

    gap = (q0 - sigma) - qbar_star
    q_seq = [float(q0)]
    A_sum, log_B = 0.0, math.log(q0 / (q0 - sigma))
    A_partial, B_partial = [], [math.exp(log_B)]
    K, tail = 0, math.inf
    while True:
        K += 1
        if K > MAX_MOSER_TERMS:
            raise RuntimeError("Moser schedule did not reach the tail tolerance")
        q = theta * (q_seq[-1] - sigma)
        q_seq.append(q)
        qbar = q - sigma
        A_sum += 1.0 / qbar
        log_B += math.log(q / qbar)
        A_partial.append(A_sum)
        B_partial.append(math.exp(log_B))
        # qbar_i = qbar* + theta^i gap >= theta^i gap
        tail = theta ** (-(K + 1)) / (gap * (1.0 - 1.0 / theta))
        if tail <= tail_tol and math.expm1(sigma * tail) <= tail_tol:
            break

    q_arr = np.array(q_seq)
    B_inf = B_partial[-1]
    logger.debug("Moser schedule: theta=%g K=%d A=%.15g B=%.15g", theta, K, A_sum, B_inf)
    return MoserSchedule(
        q0=float(q0), theta=theta, sigma=sigma, q_seq=q_arr, qbar_seq=q_arr - sigma,
        eta_seq=(q_arr - sigma) / 2.0, A_partial=np.array(A_partial), B_partial=np.array(B_partial),
        A_inf=A_sum, A_tail=tail, B_inf=B_inf, B_inf_upper=B_inf * math.exp(sigma * tail),
        alpha=A_sum * B_inf, beta=B_inf, K=K,
    )


@dataclass(frozen=True)
class ExponentialFit:
    C: float
    c: float
    r_squared: float
    degenerate: bool = False

    def to_dict(self) -> Dict[str, float]:
        return {'C': self.C, 'c': self.c, 'r_squared': self.r_squared, 'degenerate': self.degenerate}


def fit_exponential_decay(times, values) -> ExponentialFit:
    """Least-squares fit of log(values) = log C - c t"""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size < 5 or t.shape != v.shape:
        raise ValueError("exponential fit needs at least 5 matching samples")
    if np.any(~(v > 0)):
        raise PositivityError("exponential fit needs strictly positive values")
    y = np.log(v)
    slope, intercept = np.polyfit(t, y, 1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 1e-24 * max(1.0, float(np.sum(y ** 2))):
        return ExponentialFit(C=float(np.exp(y.mean())), c=0.0, r_squared=0.0, degenerate=True)
    ss_res = float(np.sum((y - (intercept + slope * t)) ** 2))
    return ExponentialFit(C=float(np.exp(intercept)), c=float(-slope), r_squared=1.0 - ss_res / ss_tot)


def fit_tail(times, values, t_burn: Optional[float] = None, t_max: Optional[float] = None,
             floor: float = 1e-13) -> ExponentialFit:
    """Fit on [t_burn, t_max], dropping samples at the roundoff floor"""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t_burn is None:
        t_burn = t[0] + 0.05 * (t[-1] - t[0])
    mask = (t >= t_burn) & (v > floor * max(float(np.max(np.abs(v))), 1e-300))
    if t_max is not None:
        mask &= t <= t_max
    return fit_exponential_decay(t[mask], v[mask])


def _nonincreasing(values: np.ndarray, slack: float) -> bool:
    return bool(np.all(np.diff(values) <= slack))


@dataclass
class HarnackReport:
    frame: pd.DataFrame
    monotone: bool


def harnack_report(traj: Trajectory, w: Weight, slack: float = MONOTONE_SLACK) -> HarnackReport:
    """C_t = max(max f(t), 1 / min f(t)) per sample; C_t should not increase"""
    min_f = np.array([float(f.f.min()) for f in traj.densities])
    max_f = np.array([float(f.f.max()) for f in traj.densities])
    C_t = np.array([harnack_constant(f) for f in traj.densities])
    frame = pd.DataFrame({'t': traj.times, 'min_f': min_f, 'max_f': max_f, 'C_t': C_t})
    return HarnackReport(frame=frame, monotone=_nonincreasing(C_t, slack))


def harnack_constant(f: Density) -> float:
    return max(float(f.f.max()), 1.0 / float(f.f.min()))


@dataclass
class ContractionReport:
    frame: pd.DataFrame
    positive_monotone: bool
    negative_monotone: bool
    total_monotone: bool

    @property
    def passed(self) -> bool:
        return self.positive_monotone and self.negative_monotone and self.total_monotone


def contraction_report(traj_f: Trajectory, traj_g: Trajectory, w: Weight,
                       slack: float = MONOTONE_SLACK) -> ContractionReport:
    """Per-time int (f-g)+, int (f-g)-, int |f-g|"""
    if len(traj_f) != len(traj_g) or not np.allclose(traj_f.times, traj_g.times, rtol=0.0, atol=1e-12):
        raise TimeGridMismatchError("contraction report needs trajectories on the same time grid")
    if abs(traj_f.densities[0].mass - traj_g.densities[0].mass) > 1e-10:
        logger.warning("contraction pair has different masses")
    h = w.grid.h
    diffs = [f.f - g.f for f, g in zip(traj_f.densities, traj_g.densities)]
    pos = np.array([h * float(np.sum(np.maximum(d, 0.0))) for d in diffs])
    neg = np.array([h * float(np.sum(np.maximum(-d, 0.0))) for d in diffs])
    total = np.array([h * float(np.sum(np.abs(d))) for d in diffs])
    frame = pd.DataFrame({'t': traj_f.times, 'positive_part': pos, 'negative_part': neg, 'l1': total})
    return ContractionReport(frame=frame, positive_monotone=_nonincreasing(pos, slack),
                             negative_monotone=_nonincreasing(neg, slack), total_monotone=_nonincreasing(total, slack))


@dataclass
class BVReport:
    frame: pd.DataFrame
    fit: Optional[ExponentialFit]
    monotone: bool
    growth_bound_ok: bool
    C2: float = 0.0


def bv_convergence_report(traj: Trajectory, w: Weight, exps: Exponents, t_burn: Optional[float] = None,
                          slack: float = MONOTONE_SLACK) -> BVReport:
    """Weighted BV norm of u per sample, its decay fit, and the Lambda growth bound"""
    bv = np.array([weighted_BV_norm(to_u(f, w), w, w.grid) for f in traj.densities])
    times = np.asarray(traj.times, dtype=float)
    frame = pd.DataFrame({'t': times, 'BV_m': bv})
    monotone = _nonincreasing(bv, slack)

    C2, growth_ok = 0.0, True
    if w.Lambda > 0:
        u_all = [to_u(f, w) for f in traj.densities]
        c0 = min(float(u.min()) for u in u_all)
        C0 = max(float(u.max()) for u in u_all)
        C2 = bv_growth_constant(c0, C0, w.Lambda, exps)
        bound = bv[0] * np.exp(C2 * w.Lambda * (times - times[0]))
        frame['growth_bound'] = bound
        growth_ok = bool(np.all(bv <= bound + slack))

    fit = None
    try:
        fit = fit_tail(times, bv, t_burn=t_burn)
    except (ValueError, PositivityError) as exc:
        logger.info("BV decay fit skipped: %s", exc)
    return BVReport(frame=frame, fit=fit, monotone=monotone if w.Lambda <= 0 else True,
                    growth_bound_ok=growth_ok, C2=C2)


def dissipation_identity_report(traj: Trajectory, w: Weight, exps: Exponents, q: float) -> pd.DataFrame:
    """
    Compare -dG_q/dt between samples with c(r, q) int m |grad u^((q - sigma)/2)|^2
    averaged over the two endpoints.
    """
    c = flow_interchange_coefficient(exps.r, q)
    G = np.array([functional_Gq(q, w, f) for f in traj.densities])
    D = np.array([c * u_power_gradient_energy(to_u(f, w), w, w.grid, 0.5 * (q - exps.sigma))
                  for f in traj.densities])
    t = np.asarray(traj.times, dtype=float)
    dt = np.diff(t)
    decay = -np.diff(G) / dt
    predicted = 0.5 * (D[1:] + D[:-1])
    scale = np.maximum(np.abs(predicted), 1e-300)
    return pd.DataFrame({'t_mid': 0.5 * (t[1:] + t[:-1]), 'decay_rate': decay, 'dissipation': predicted,
                         'relative_defect': (decay - predicted) / scale})


def centered_perturbation(perturbation) -> np.ndarray:
    """Zero-mean copy, so f + eps * p keeps the mass of f on a uniform grid"""
    pert = np.asarray(perturbation, dtype=float)
    return pert - np.mean(pert)


def stability_epsilon_bound(f_ref: Density, perturbation, margin: float = 0.9) -> float:
    """Largest eps (times margin) keeping f_ref + eps * centered perturbation positive"""
    ratio = float(np.max(np.abs(centered_perturbation(perturbation)) / f_ref.f))
    return margin / ratio if ratio > 0 else float('inf')


def stability_study(f_ref: Density, perturbation: np.ndarray, epsilons: Sequence[float],
                    run: Callable[[Density], Trajectory]) -> pd.DataFrame:
    """
    L1 gaps at the final time between the run from f_ref and runs from
    mass-preserving perturbations f_ref + eps * perturbation.
    """
    grid = f_ref.grid
    pert = centered_perturbation(perturbation)
    ref_final = run(f_ref).final
    rows = []
    for eps in epsilons:
        f0 = make_density(f_ref.f + eps * pert, grid)
        final = run(f0).final
        rows.append({'epsilon': float(eps), 'initial_gap': l1_distance(f0, f_ref, grid),
                     'final_gap': l1_distance(final, ref_final, grid)})
    frame = pd.DataFrame(rows).sort_values('epsilon', ascending=False, ignore_index=True)
    return frame


def convergence_order(steps: Sequence[float], gaps: Sequence[float]) -> Dict[str, object]:
    """Observed order from gaps at successively refined steps (largest step first)"""
    s = np.asarray(steps, dtype=float)
    g = np.asarray(gaps, dtype=float)
    orders = np.log(g[:-1] / g[1:]) / np.log(s[:-1] / s[1:])
    slope = float(np.polyfit(np.log(s), np.log(g), 1)[0]) if np.all(g > 0) else float('nan')
    return {'pairwise_orders': orders.tolist(), 'fitted_order': slope,
            'decreasing': bool(np.all(np.diff(g) < 0))}


def summarize_trajectory(frame: pd.DataFrame) -> Dict[str, object]:
    scanner = TrajectoryScanner(frame)
    return {'overview': scanner.scan_overview(), 'insights': scanner.generate_insights()}
