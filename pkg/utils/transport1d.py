"""
Exact quadratic optimal transport on the line and on the circle.

Densities are cellwise constant, so their cumulative distributions are
piecewise linear between cell edges and their quantile functions are
piecewise linear in the mass variable. W2 is integrated exactly over the
merged breakpoints of the two quantile functions.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from utils.errors import AtomLimitError, DegenerateCDFError, InvalidResolutionError, MassMismatchError
from utils.grid_domain import Domain, Grid, check_shape
from utils.measures import Density

logger = logging.getLogger(__name__)

MASS_TOL = 1e-10
SHIFT_XATOL = 1e-10
SHIFT_SAMPLES = 64
MAX_ATOMS = 8


@dataclass(frozen=True)
class QuantileMap:
    """Monotone positions X(s_j) at equispaced mass levels s_j in [0, M]"""
    s_nodes: np.ndarray
    X: np.ndarray
    mass: float
    periodic: bool


@dataclass(frozen=True)
class TransportResult:
    w2: float
    map_T: np.ndarray
    potential_phi: np.ndarray
    shift: Optional[float] = None


def cumulative_mass(f, grid: Grid) -> np.ndarray:
    """CDF at the n+1 cell edges, starting from 0"""
    values = check_shape(f.f if isinstance(f, Density) else f, grid, 'density')
    cum = np.empty(grid.n + 1)
    cum[0] = 0.0
    np.cumsum(grid.h * values, out=cum[1:])
    return cum


def _normalized_cdf(f, grid: Grid) -> np.ndarray:
    values = f.f if isinstance(f, Density) else np.asarray(f, dtype=float)
    if np.any(values <= 0):
        raise DegenerateCDFError("quantiles need a strictly positive density on every cell")
    cum = cumulative_mass(values, grid)
    t = cum / cum[-1]
    t[-1] = 1.0
    return t


def quantiles(f: Density, grid: Grid, N: Optional[int] = None) -> QuantileMap:
    """Invert the piecewise-linear CDF at N+1 equispaced mass levels"""
    N = grid.n if N is None else int(N)
    if N < 2:
        raise InvalidResolutionError(f"quantile resolution must be at least 2, got {N}")
    t_cdf = _normalized_cdf(f, grid)
    t = np.linspace(0.0, 1.0, N + 1)
    X = np.interp(t, t_cdf, grid.edges)
    X[0], X[-1] = grid.domain.left, grid.domain.right
    return QuantileMap(s_nodes=t * f.mass, X=X, mass=f.mass, periodic=grid.periodic)


def _check_masses(f: Density, g: Density) -> float:
    scale = max(1.0, f.mass, g.mass)
    if abs(f.mass - g.mass) > MASS_TOL * scale:
        raise MassMismatchError(f"transport needs equal masses, got {f.mass:.12g} and {g.mass:.12g}")
    return 0.5 * (f.mass + g.mass)


def _squared_integral(t: np.ndarray, diff: np.ndarray) -> float:
    """Exact integral of the square of a piecewise-linear function"""
    a, b = diff[:-1], diff[1:]
    return float(np.sum(np.diff(t) * (a * a + a * b + b * b)) / 3.0)


def _lifted_quantile(t: np.ndarray, t_cdf: np.ndarray, grid: Grid) -> np.ndarray:
    """Quantile on the covering line: X(t + k) = X(t) + k L"""
    k = np.floor(t)
    return np.interp(t - k, t_cdf, grid.edges) + k * grid.domain.measure


def _potential(map_T: np.ndarray, grid: Grid) -> np.ndarray:
    """Cumulative trapezoid of x - T(x) over the centers, zero at the first center"""
    slope = grid.centers - map_T
    phi = np.zeros(grid.n)
    phi[1:] = np.cumsum(0.5 * (slope[1:] + slope[:-1]) * grid.h)
    return phi


def w2_interval(f: Density, g: Density, grid: Grid) -> TransportResult:
    """W2 by monotone rearrangement on the line"""
    mass = _check_masses(f, g)
    tf, tg = _normalized_cdf(f, grid), _normalized_cdf(g, grid)
    t = np.union1d(tf, tg)
    diff = np.interp(t, tf, grid.edges) - np.interp(t, tg, grid.edges)
    w2_sq = max(mass * _squared_integral(t, diff), 0.0)
    F_at_centers = np.interp(grid.centers, grid.edges, tf)
    map_T = np.interp(F_at_centers, tg, grid.edges)
    return TransportResult(w2=float(np.sqrt(w2_sq)), map_T=map_T, potential_phi=_potential(map_T, grid))


def _shift_cost(tf: np.ndarray, tg: np.ndarray, grid: Grid, theta: float) -> float:
    """Normalized-mass cost of matching X_f(t) with the lifted X_g(t + theta)"""
    ks = np.arange(np.floor(-theta) - 1, np.ceil(1.0 - theta) + 2)
    shifted = (tg[None, :] + ks[:, None] - theta).ravel()
    shifted = shifted[(shifted > 0.0) & (shifted < 1.0)]
    t = np.union1d(tf, shifted)
    diff = np.interp(t, tf, grid.edges) - _lifted_quantile(t + theta, tg, grid)
    return _squared_integral(t, diff)


def torus_shift_cost(f: Density, g: Density, grid: Grid, theta: float) -> float:
    """Transport cost for the cut shift theta (mass units) on the circle"""
    mass = _check_masses(f, g)
    tf, tg = _normalized_cdf(f, grid), _normalized_cdf(g, grid)
    return mass * _shift_cost(tf, tg, grid, theta / mass)


def w2_torus(f: Density, g: Density, grid: Grid) -> TransportResult:
    """W2 on the circle by minimizing the convex shift objective"""
    if not grid.periodic:
        raise ValueError("w2_torus needs a periodic grid")
    mass = _check_masses(f, g)
    tf, tg = _normalized_cdf(f, grid), _normalized_cdf(g, grid)

    # optimal shift lies in [-1, 1] in normalized mass
    thetas = np.linspace(-1.0, 1.0, SHIFT_SAMPLES + 1)
    costs = np.array([_shift_cost(tf, tg, grid, th) for th in thetas])
    best = int(np.argmin(costs))
    lo, hi = thetas[max(best - 1, 0)], thetas[min(best + 1, SHIFT_SAMPLES)]
    res = minimize_scalar(lambda th: _shift_cost(tf, tg, grid, th), bounds=(lo, hi),
                          method='bounded', options={'xatol': SHIFT_XATOL})
    theta, cost = (res.x, res.fun) if res.fun <= costs[best] else (thetas[best], costs[best])
    logger.debug("torus shift %.12g cost %.6g (%d evaluations)", theta, cost, res.nfev)

    F_at_centers = np.interp(grid.centers, grid.edges, tf)
    map_T = _lifted_quantile(F_at_centers + theta, tg, grid)
    return TransportResult(w2=float(np.sqrt(max(mass * cost, 0.0))), map_T=map_T,
                           potential_phi=_potential(map_T, grid), shift=float(theta * mass))


def w2(f: Density, g: Density, grid: Grid) -> TransportResult:
    return w2_torus(f, g, grid) if grid.periodic else w2_interval(f, g, grid)


def _distance(x, y, domain: Domain):
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    if domain.periodic:
        d = np.mod(d, domain.measure)
        d = np.minimum(d, domain.measure - d)
    return d


def _atom_arrays(atoms_f, atoms_g, weights):
    xs, ys = np.asarray(atoms_f, dtype=float), np.asarray(atoms_g, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size == 0:
        raise ValueError("atom sets must be nonempty 1-D arrays of equal length")
    w = 1.0 / xs.size if weights is None else float(weights)
    return xs, ys, w


def w2_bruteforce(atoms_f: Sequence[float], atoms_g: Sequence[float], domain: Domain,
                  weight: Optional[float] = None) -> float:
    """Exact W2 between equal-weight atom sets by enumerating all matchings"""
    if len(atoms_f) > MAX_ATOMS or len(atoms_g) > MAX_ATOMS:
        raise AtomLimitError(f"brute force supports at most {MAX_ATOMS} atoms")
    xs, ys, w = _atom_arrays(atoms_f, atoms_g, weight)
    best = np.inf
    for perm in itertools.permutations(range(ys.size)):
        cost = w * float(np.sum(_distance(xs, ys[list(perm)], domain) ** 2))
        best = min(best, cost)
    return float(np.sqrt(best))


def w2_atoms(atoms_f: Sequence[float], atoms_g: Sequence[float], domain: Domain,
             weight: Optional[float] = None) -> float:
    """W2 between equal-weight atoms through sorted (quantile) matching"""
    xs, ys, w = _atom_arrays(atoms_f, atoms_g, weight)
    xs, ys = np.sort(xs), np.sort(ys)
    if not domain.periodic:
        return float(np.sqrt(w * np.sum((xs - ys) ** 2)))
    costs = [np.sum(_distance(xs, np.roll(ys, k), domain) ** 2) for k in range(ys.size)]
    return float(np.sqrt(w * min(costs)))


def blocks_from_atoms(positions: Sequence[float], grid: Grid, mass: float = 1.0,
                      floor: float = 1e-10) -> Density:
    """Equal-mass one-cell blocks at the cells containing the atoms, plus a tiny floor"""
    idx = np.clip(((np.asarray(positions, dtype=float) - grid.domain.left) / grid.h).astype(int), 0, grid.n - 1)
    values = np.full(grid.n, floor)
    np.add.at(values, idx, mass / (len(idx) * grid.h))
    return Density(grid=grid, f=values)
