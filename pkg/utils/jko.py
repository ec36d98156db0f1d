"""
Minimizing-movement (JKO) scheme for the weighted ultrafast diffusion.

A proximal step is solved in quantile coordinates. Instead of positions X(s)
the unknowns are the cumulative-weight coordinates Z(s) = Phi(X(s)) with
Phi(x) = int_a^x m. In these coordinates the energy F_rho becomes

    sum_j (dZ_j / ds)^(r+1) ds,

independent of rho, and the steady state M gamma m is an exact discrete
fixed point. Positions X = Psi(Z) come from a C2 spline inverse of Phi and
enter only the quadratic transport term.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from utils.errors import (DegenerateCDFError, DegenerateStepError, InvalidResolutionError,
                          PositivityError, StepFailureError, UltrafastError, UnsupportedExponentError)
from utils.measures import (Density, Exponents, U_prime, Weight, dissipation_coefficient,
                            flow_interchange_coefficient, functional_F, functional_Gq, make_density, to_u,
                            u_power_gradient_energy)
from utils.trajectory import Trajectory, TrajectoryRecorder
from utils.tridiag import solve_tridiagonal

logger = logging.getLogger(__name__)

ARMIJO = 1e-4
MAX_HALVINGS = 60


@dataclass(frozen=True)
class JkoParams:
    tau: float
    n_quantiles: Optional[int] = None
    newton_tol: float = 1e-10
    newton_max_iter: int = 200
    monotonicity_floor: float = 1e-12

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.n_quantiles is not None and self.n_quantiles < 2:
            raise InvalidResolutionError(f"need at least 2 quantile cells, got {self.n_quantiles}")


@dataclass(frozen=True)
class JkoStepReport:
    f_next: Density
    f_prev: Density
    w2: float
    energy_before: float
    energy_after: float
    optimality_residual: float
    gradient_residual: float = 0.0
    iterations: int = 0
    shift: float = 0.0
    z_next: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    lagrangian_before: float = field(default=float('nan'), repr=False)
    lagrangian_after: float = field(default=float('nan'), repr=False)


class MassCoordinates:
    """Cumulative weight Phi on the grid edges and its smooth inverse Psi"""

    def __init__(self, w: Weight):
        grid = w.grid
        self.grid = grid
        self.periodic = grid.periodic
        self.phi_edges = np.concatenate([[0.0], np.cumsum(grid.h * w.m)])
        self.total = float(self.phi_edges[-1])
        self.left = grid.domain.left
        self.length = grid.domain.measure
        self.slope = self.length / self.total

        if self.periodic:
            part = grid.edges - self.left - self.slope * self.phi_edges
            part[0] = part[-1] = 0.0
            self._spline = CubicSpline(self.phi_edges, part, bc_type='periodic')
            self._linear = True
        else:
            self._spline = CubicSpline(self.phi_edges, grid.edges)
            self._linear = False

        levels = np.linspace(0.0, self.total, 8 * grid.n + 1)
        if np.min(self.psi(levels, 1)) <= 0:
            logger.warning("cubic inverse of the weight is not monotone; using a monotone interpolant")
            self._spline = PchipInterpolator(self.phi_edges, grid.edges)
            self._linear = False

    def _evaluate(self, z, nu):
        val = self._spline(z, nu)
        if self._linear:
            if nu == 0:
                val = val + self.left + self.slope * z
            elif nu == 1:
                val = val + self.slope
        return val

    def psi(self, z, nu: int = 0) -> np.ndarray:
        """Position (or its derivatives) at cumulative weight z"""
        z = np.asarray(z, dtype=float)
        if not self.periodic:
            return self._evaluate(z, nu)
        k = np.floor(z / self.total)
        val = self._evaluate(z - k * self.total, nu)
        if nu == 0:
            val = val + k * self.length
        return val

    def z_quantiles(self, f: Density, N: int) -> np.ndarray:
        """Z(s_j) of a cellwise-constant density at N+1 equispaced mass levels"""
        if np.any(f.f <= 0):
            raise DegenerateCDFError("quantiles need a strictly positive density on every cell")
        cum = np.concatenate([[0.0], np.cumsum(self.grid.h * f.f)])
        s = cum[-1] * np.arange(N + 1) / N
        Z = np.interp(s, cum, self.phi_edges)
        Z[0], Z[-1] = 0.0, self.total
        return Z

    def wrap(self, Z: np.ndarray) -> np.ndarray:
        """Shift a periodic quantile state by whole periods so that Z_0 lies in [0, total)"""
        if not self.periodic:
            return Z
        return Z - np.floor(Z[0] / self.total) * self.total

    def bin_to_grid(self, Z: np.ndarray, mass: float) -> np.ndarray:
        """Conservative binning: cell mass = S(Phi_{i+1}) - S(Phi_i) with S the inverse of Z"""
        N = Z.size - 1
        s = mass * np.arange(N + 1) / N
        if self.periodic:
            Z = np.concatenate([Z[:-1] - self.total, Z, Z[1:] + self.total])
            s = np.concatenate([s[:-1] - mass, s, s[1:] + mass])
        S = np.interp(self.phi_edges, Z, s)
        return np.diff(S) / self.grid.h


class _ProximalProblem:
    """J(Z) = sum w_j^sigma ds + ds/(2 tau) sum (Psi(Z_j) - Y_j)^2"""

    def __init__(self, coords: MassCoordinates, Y: np.ndarray, exps: Exponents, tau: float, ds: float):
        self.coords = coords
        self.Y = Y
        self.r = exps.r
        self.sigma = exps.sigma
        self.tau = tau
        self.ds = ds
        self.N = Y.size - 1
        self.periodic = coords.periodic

    def full(self, free: np.ndarray) -> np.ndarray:
        if self.periodic:
            return np.append(free, free[0] + self.coords.total)
        return np.concatenate([[0.0], free, [self.coords.total]])

    def free(self, Z: np.ndarray) -> np.ndarray:
        return Z[:-1].copy() if self.periodic else Z[1:-1].copy()

    def _nodes(self, values: np.ndarray) -> np.ndarray:
        return values[:-1] if self.periodic else values[1:-1]

    def slopes(self, Z: np.ndarray) -> np.ndarray:
        return np.diff(Z) / self.ds

    def displacement(self, Z: np.ndarray) -> np.ndarray:
        return self.coords.psi(Z) - self.Y

    def energy(self, Z: np.ndarray) -> float:
        return float(np.sum(self.slopes(Z) ** self.sigma) * self.ds)

    def transport(self, Z: np.ndarray) -> float:
        """Squared transport distance sum (X_j - Y_j)^2 ds over distinct nodes"""
        return float(np.sum(self._nodes(self.displacement(Z)) ** 2) * self.ds)

    def objective(self, Z: np.ndarray) -> float:
        return self.energy(Z) + self.transport(Z) / (2.0 * self.tau)

    def gradient(self, Z: np.ndarray) -> np.ndarray:
        pressure = self.sigma * self.slopes(Z) ** self.r
        if self.periodic:
            energy_grad = np.roll(pressure, 1) - pressure
        else:
            energy_grad = pressure[:-1] - pressure[1:]
        psi1 = self._nodes(self.coords.psi(Z, 1))
        return energy_grad + (self.ds / self.tau) * self._nodes(self.displacement(Z)) * psi1

    def hessian(self, Z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        a = self.sigma * self.r * self.slopes(Z) ** (self.r - 1.0) / self.ds
        psi1 = self._nodes(self.coords.psi(Z, 1))
        psi2 = self._nodes(self.coords.psi(Z, 2))
        disp = self._nodes(self.displacement(Z))
        # Gauss-Newton floor keeps the matrix positive definite
        curvature = np.maximum(psi1 ** 2 + disp * psi2, 0.5 * psi1 ** 2)
        transport_diag = (self.ds / self.tau) * curvature
        if self.periodic:
            a_left = np.roll(a, 1)
            return -a_left, a_left + a + transport_diag, -a.copy()
        return -a[:-1], a[:-1] + a[1:] + transport_diag, -a[1:]

    def monotone(self, Z: np.ndarray, floor: float) -> bool:
        if np.any(np.diff(Z) <= 0):
            return False
        return bool(np.min(np.diff(self.coords.psi(Z))) / self.ds > floor)

    def potential_residual(self, Z: np.ndarray, exps: Exponents) -> float:
        """
        Half the oscillation of U'(u) + phi / tau over the quantile cells.

        phi is the discrete transport potential, phi' = X - Y. Across the node
        between two cells it grows by (X - Y) Psi' ds / u_bar, where u_bar is
        the secant mean of u for which U'(u) changes by -delta(sigma u^-r) / u_bar.
        The sum is then constant exactly when the node equations hold.
        """
        u = self.ds / np.diff(Z)
        e = U_prime(u, exps)
        dU = np.diff(e)
        dp = np.diff(self.sigma * u ** -self.r)
        midpoint = 0.5 * (u[1:] + u[:-1])
        u_bar = np.divide(-dp, dU, out=midpoint, where=np.abs(dU) > 1e-13 * np.abs(e[1:]))
        interior = slice(1, -1)
        dphi = self.ds * self.displacement(Z)[interior] * self.coords.psi(Z, 1)[interior] / u_bar
        e = e + np.concatenate([[0.0], np.cumsum(dphi)]) / self.tau
        return float(0.5 * (np.max(e) - np.min(e)))


def _solve_proximal(problem: _ProximalProblem, Z0: np.ndarray, params: JkoParams) -> Tuple[np.ndarray, float, int]:
    """Damped Newton from Z0; returns (Z, residual, iterations)"""
    ds = problem.ds
    free = problem.free(Z0)
    Z = problem.full(free)
    J = problem.objective(Z)
    g = problem.gradient(Z)
    residual = float(np.max(np.abs(g))) / ds
    stagnation_tol = 10.0 * params.newton_tol / params.tau

    for iteration in range(params.newton_max_iter + 1):
        if residual <= params.newton_tol:
            return Z, residual, iteration
        if iteration == params.newton_max_iter:
            break

        sub, diag, sup = problem.hessian(Z)
        delta = solve_tridiagonal(sub, diag, sup, -g, periodic=problem.periodic)
        slope = float(g @ delta)
        if not slope < 0:
            delta, slope = -g, -float(g @ g)

        alpha, accepted, floor_hits = 1.0, False, 0
        roundoff = 1e-14 * (abs(J) + 1.0)
        for _ in range(MAX_HALVINGS):
            trial = problem.full(free + alpha * delta)
            if not problem.monotone(trial, params.monotonicity_floor):
                floor_hits += 1
                alpha *= 0.5
                continue
            J_trial = problem.objective(trial)
            g_trial = problem.gradient(trial)
            if J_trial <= J + ARMIJO * alpha * slope or (
                    J_trial <= J + roundoff and np.max(np.abs(g_trial)) < np.max(np.abs(g))):
                accepted = True
                break
            alpha *= 0.5

        if not accepted:
            if floor_hits > MAX_HALVINGS // 2:
                raise DegenerateStepError(
                    f"quantile cells collapsed onto the monotonicity floor {params.monotonicity_floor:g}")
            if residual <= stagnation_tol:
                logger.debug("line search stagnated at residual %.3e; accepting", residual)
                return Z, residual, iteration
            raise StepFailureError(f"line search failed at residual {residual:.3e}",
                                   residual=residual, iterations=iteration)

        free = free + alpha * delta
        Z, J, g = trial, J_trial, g_trial
        residual = float(np.max(np.abs(g))) / ds
        logger.debug("newton %d: alpha=%.3g J=%.15g residual=%.3e", iteration, alpha, J, residual)

    if residual <= stagnation_tol:
        return Z, residual, params.newton_max_iter
    raise StepFailureError(f"Newton did not converge in {params.newton_max_iter} iterations "
                           f"(residual {residual:.3e})", residual=residual, iterations=params.newton_max_iter)


def jko_step(f_prev: Density, w: Weight, exps: Exponents, params: JkoParams,
             coords: Optional[MassCoordinates] = None) -> JkoStepReport:
    """One proximal step: argmin F_rho[f] + W2^2(f, f_prev) / (2 tau)"""
    if not f_prev.is_positive:
        raise PositivityError("JKO step needs a strictly positive density")
    coords = coords or MassCoordinates(w)
    N = params.n_quantiles or w.grid.n
    return _advance(coords.z_quantiles(f_prev, N), f_prev, w, exps, params, coords)


def _advance(Z_prev: np.ndarray, f_prev: Density, w: Weight, exps: Exponents, params: JkoParams,
             coords: MassCoordinates) -> JkoStepReport:
    """Proximal step from the quantile state Z_prev; f_prev only feeds the grid-level diagnostics"""
    mass = f_prev.mass
    ds = mass / (Z_prev.size - 1)
    problem = _ProximalProblem(coords, coords.psi(Z_prev), exps, params.tau, ds)

    Z, residual, iterations = _solve_proximal(problem, Z_prev, params)

    f_next = make_density(coords.bin_to_grid(Z, mass), w.grid)
    shift = float(problem.displacement(Z)[0]) if coords.periodic else 0.0
    return JkoStepReport(
        f_next=f_next,
        f_prev=f_prev,
        w2=float(np.sqrt(problem.transport(Z))),
        energy_before=functional_F(w, f_prev, exps),
        energy_after=functional_F(w, f_next, exps),
        optimality_residual=problem.potential_residual(Z, exps),
        gradient_residual=residual,
        iterations=iterations,
        shift=shift,
        z_next=Z,
        lagrangian_before=problem.energy(Z_prev),
        lagrangian_after=problem.energy(Z),
    )


def bv_growth_constant(c0: float, C0: float, Lambda: float, exps: Exponents) -> float:
    """
    Constant C1 of the per-step BV growth factor 1 / (1 - C1 Lambda tau).

    Proof-derived: c0 U''(c0) when Lambda > 0, C0 U''(C0) when Lambda < 0,
    with U(s) = s^-r; no growth constant is needed when Lambda = 0.
    """
    if Lambda > 0:
        return exps.r * exps.sigma * c0 ** (-exps.sigma)
    if Lambda < 0:
        return exps.r * exps.sigma * C0 ** (-exps.sigma)
    return 0.0


def bv_growth_factor(c0: float, C0: float, Lambda: float, exps: Exponents, tau: float) -> float:
    if Lambda <= 0:
        return 1.0
    C1 = bv_growth_constant(c0, C0, Lambda, exps)
    if C1 * Lambda * tau >= 1:
        raise ValueError(f"BV estimate needs C1 Lambda tau < 1, got {C1 * Lambda * tau:.4g}")
    return 1.0 / (1.0 - C1 * Lambda * tau)


def jko_run(f0: Density, w: Weight, exps: Exponents, params: JkoParams, n_steps: int,
            q_list: Sequence[float] = (), stride: int = 1, check_bv: bool = False) -> Trajectory:
    """
    Iterate proximal steps, recording diagnostics; stops cleanly on the first failure.

    f0 is quantized once. The quantile state is carried from step to step and
    binned onto the grid only for output, so F_rho in the trajectory is the
    quantile energy, which satisfies the discrete energy chain exactly.
    """
    if not np.isfinite(functional_F(w, f0, exps)):
        raise PositivityError("initial density must have finite energy")
    if check_bv:
        u0 = to_u(f0, w)
        bv_growth_factor(float(u0.min()), float(u0.max()), w.Lambda, exps, params.tau)

    coords = MassCoordinates(w)
    N = params.n_quantiles or w.grid.n
    Z = coords.z_quantiles(f0, N)
    ds = f0.mass / N
    recorder = TrajectoryRecorder(w, exps, q_list=q_list, stride=stride)
    recorder.record(0, 0.0, f0, w2_step=0.0, energy=float(np.sum((np.diff(Z) / ds) ** exps.sigma) * ds))
    f = f0
    for step in range(1, n_steps + 1):
        try:
            report = _advance(Z, f, w, exps, params, coords)
        except UltrafastError as exc:
            logger.warning("JKO step %d failed: %s", step, exc)
            recorder.fail(exc)
            break
        f, Z = report.f_next, coords.wrap(report.z_next)
        recorder.record(step, step * params.tau, f, w2_step=report.w2, force=(step == n_steps),
                        energy=report.lagrangian_after)
    traj = recorder.finish()
    logger.info("JKO run: %d steps, tau=%g, final F=%.10g", n_steps, params.tau, traj.frame['F_rho'].iloc[-1])
    return traj


def check_flow_interchange(report: JkoStepReport, q: float, w: Weight, exps: Exponents, tau: float,
                           C0: Optional[float] = None) -> float:
    """
    Slack of the flow-interchange estimate for G_q across one step:

        G_q[g] - G_q[f*] (+ Lambda correction) - tau c(r, q) int m |grad u*^((q - sigma)/2)|^2
    """
    if q <= 1:
        raise UnsupportedExponentError(f"flow interchange needs q > 1, got {q}")
    u_next = to_u(report.f_next, w)
    dissipation = tau * flow_interchange_coefficient(exps.r, q) * \
        u_power_gradient_energy(u_next, w, w.grid, 0.5 * (q - exps.sigma))
    rhs = functional_Gq(q, w, report.f_prev) - functional_Gq(q, w, report.f_next)
    if w.Lambda > 0:
        C0 = float(np.max(to_u(report.f_prev, w))) if C0 is None else C0
        rhs += (q - 1.0) * w.Lambda * (C0 * w.m_max / w.m_min) ** (q - 1.0) * report.w2 ** 2
    return float(rhs - dissipation)


def h1_dissipation_identity(report: JkoStepReport, w: Weight, exps: Exponents, tau: float) -> Tuple[float, float, float]:
    """(tau int f |grad U'(f/m)|^2, W2^2 / tau, 2 (F[g] - F[f*]))"""
    u_next = to_u(report.f_next, w)
    lhs = tau * dissipation_coefficient(exps.r) * u_power_gradient_energy(u_next, w, w.grid, -exps.r - 0.5)
    rhs = report.w2 ** 2 / tau
    bound = 2.0 * (report.energy_before - report.energy_after)
    return float(lhs), float(rhs), float(bound)


def energy_chain_defects(reports: Iterable[JkoStepReport], tau: float) -> np.ndarray:
    """F[f_{k+1}] + W2^2 / (2 tau) - F[f_k] per step; nonpositive up to roundoff"""
    return np.array([rep.energy_after + rep.w2 ** 2 / (2.0 * tau) - rep.energy_before for rep in reports])
