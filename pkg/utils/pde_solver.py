"""
Finite-volume integrator for f_t = -(r+1) div(m grad u^-r), u = f/m.

Face fluxes use the exact difference of u^-r; the update is written in the
conservative f variable so mass is preserved to roundoff whatever the Newton
tolerance.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple

import numpy as np

from utils.errors import PositivityError, StepFailureError, UltrafastError
from utils.grid_domain import face_differences, face_means
from utils.measures import Density, Exponents, Weight, make_density, to_u
from utils.trajectory import Trajectory, TrajectoryRecorder
from utils.tridiag import solve_tridiagonal

logger = logging.getLogger(__name__)

MAX_DT_HALVINGS = 20


class Scheme(str, Enum):
    IMPLICIT_NEWTON = 'implicit'
    EXPLICIT_ADAPTIVE = 'explicit'


@dataclass(frozen=True)
class PdeParams:
    dt: float
    scheme: Scheme = Scheme.IMPLICIT_NEWTON
    newton_tol: float = 1e-11
    max_newton: int = 50
    cfl_safety: float = 0.4

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, 'scheme', Scheme(self.scheme))


def face_flux(u: np.ndarray, w: Weight, exps: Exponents) -> np.ndarray:
    """q_{i+1/2} = (r+1) m_{i+1/2} (u_{i+1}^-r - u_i^-r) / h"""
    grid = w.grid
    return exps.sigma * face_means(w.m, grid) * face_differences(u ** (-exps.r), grid) / grid.h


def flux_divergence(q: np.ndarray, periodic: bool) -> np.ndarray:
    """q_{i+1/2} - q_{i-1/2}, zero flux through interval ends"""
    if periodic:
        return q - np.roll(q, 1)
    padded = np.concatenate([[0.0], q, [0.0]])
    return padded[1:] - padded[:-1]


def cfl_dt(u: np.ndarray, w: Weight, exps: Exponents, cfl_safety: float) -> float:
    h = w.grid.h
    return cfl_safety * h * h * w.m_min / (exps.r * exps.sigma * w.m_max * float(np.max(u ** (-exps.sigma))))


def _conservative_update(f: Density, u_new: np.ndarray, w: Weight, exps: Exponents, dt: float) -> np.ndarray:
    q = face_flux(u_new, w, exps)
    return f.f - (dt / w.grid.h) * flux_divergence(q, w.grid.periodic)


def _implicit_system(u: np.ndarray, u_old: np.ndarray, w: Weight, exps: Exponents,
                     dt: float) -> Tuple[np.ndarray, Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    grid = w.grid
    h = grid.h
    q = face_flux(u, w, exps)
    residual = w.m * h * (u - u_old) + dt * flux_divergence(q, grid.periodic)

    k = exps.sigma * exps.r * face_means(w.m, grid) / h
    if grid.periodic:
        k_plus, k_minus = k, np.roll(k, 1)
    else:
        k_plus = np.append(k, 0.0)
        k_minus = np.insert(k, 0, 0.0)
    s = u ** (-exps.sigma)
    diag = w.m * h + dt * (k_plus + k_minus) * s
    sup = -dt * k_plus * np.roll(s, -1)
    sub = -dt * k_minus * np.roll(s, 1)
    return residual, (sub, diag, sup)


def _implicit_step(f: Density, w: Weight, exps: Exponents, params: PdeParams, dt: float) -> Density:
    h = w.grid.h
    u_old = to_u(f, w)
    u = u_old.copy()
    residual, jac = _implicit_system(u, u_old, w, exps, dt)
    err = float(np.max(np.abs(residual))) / h

    for iteration in range(params.max_newton):
        if err <= params.newton_tol:
            break
        delta = solve_tridiagonal(*jac, -residual, periodic=w.grid.periodic)
        alpha = 1.0
        for _ in range(MAX_DT_HALVINGS * 2):
            trial = u + alpha * delta
            if np.all(trial > 0):
                res_trial, jac_trial = _implicit_system(trial, u_old, w, exps, dt)
                err_trial = float(np.max(np.abs(res_trial))) / h
                if err_trial < err or alpha < 1e-6:
                    break
            alpha *= 0.5
        else:
            raise StepFailureError("implicit Newton could not keep u positive", residual=err, iterations=iteration)
        u, residual, jac, err = trial, res_trial, jac_trial, err_trial
        logger.debug("implicit newton %d: alpha=%.3g residual=%.3e", iteration, alpha, err)

    if err > params.newton_tol:
        raise StepFailureError(f"implicit Newton did not converge (residual {err:.3e})",
                               residual=err, iterations=params.max_newton)
    f_new = _conservative_update(f, u, w, exps, dt)
    if np.any(f_new <= 0):
        raise PositivityError("implicit step produced a nonpositive cell")
    return make_density(f_new, w.grid)


def _explicit_step(f: Density, w: Weight, exps: Exponents, params: PdeParams, dt: float) -> Density:
    """Forward Euler sub-cycled to the CFL bound, halving on positivity loss"""
    t_left = dt
    current = f
    while t_left > 0:
        u = to_u(current, w)
        sub_dt = min(t_left, cfl_dt(u, w, exps, params.cfl_safety))
        for _ in range(MAX_DT_HALVINGS + 1):
            f_new = _conservative_update(current, u, w, exps, sub_dt)
            if np.all(f_new > 0):
                break
            logger.warning("explicit step lost positivity; halving dt to %.3e", sub_dt / 2)
            sub_dt *= 0.5
        else:
            raise PositivityError(f"explicit step stayed nonpositive after {MAX_DT_HALVINGS} halvings")
        current = make_density(f_new, w.grid)
        t_left -= sub_dt
        if t_left < 1e-15 * dt:
            break
    return current


def pde_step(f: Density, w: Weight, exps: Exponents, params: PdeParams, dt: float = None) -> Density:
    """Advance the density by one time step of length dt (default params.dt)"""
    if not f.is_positive:
        raise PositivityError("PDE step needs a strictly positive density")
    dt = params.dt if dt is None else dt
    if params.scheme is Scheme.IMPLICIT_NEWTON:
        return _implicit_step(f, w, exps, params, dt)
    return _explicit_step(f, w, exps, params, dt)


def pde_solve(f0: Density, w: Weight, exps: Exponents, params: PdeParams, t_end: float,
              q_list: Sequence[float] = (), stride: int = 1) -> Trajectory:
    """Time loop over pde_step, recording every stride steps and the final state"""
    n_steps = max(int(math.ceil(t_end / params.dt - 1e-9)), 0)
    recorder = TrajectoryRecorder(w, exps, q_list=q_list, stride=stride)
    recorder.record(0, 0.0, f0)
    f, t = f0, 0.0
    for step in range(1, n_steps + 1):
        dt = min(params.dt, t_end - t) if step == n_steps else params.dt
        try:
            f = pde_step(f, w, exps, params, dt)
        except UltrafastError as exc:
            logger.warning("PDE step %d failed at t=%.6g: %s", step, t, exc)
            recorder.fail(exc)
            break
        t = t_end if step == n_steps else step * params.dt
        recorder.record(step, t, f, force=(step == n_steps))
    traj = recorder.finish()
    logger.info("PDE run: %s scheme, dt=%g, t_end=%g, %d samples", params.scheme.value, params.dt, t_end, len(traj))
    return traj
