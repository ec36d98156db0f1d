"""
Densities, the weight pair (rho, m), energy functionals and weighted norms.

All quantities live on a uniform grid as per-cell samples; integrals use the
midpoint rule of ``utils.grid_domain.integrate``.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np

from utils.errors import PositivityError, UnsupportedExponentError
from utils.grid_domain import Grid, check_shape, face_differences, face_means, integrate

logger = logging.getLogger(__name__)

LAMBDA_SHRINK = 1e-9


@dataclass(frozen=True)
class Exponents:
    """Diffusion exponent r > 0 with sigma = r + 1"""
    r: float
    d: int = 1

    def __post_init__(self):
        if not self.r > 0:
            raise UnsupportedExponentError(f"r must be positive, got {self.r}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d}")

    @property
    def sigma(self) -> float:
        return self.r + 1.0


@dataclass(frozen=True)
class Weight:
    """Samples of rho and m = rho^(1/(r+1)) with bounds lambda and Lambda"""
    grid: Grid
    r: float
    rho: np.ndarray = field(repr=False)
    m: np.ndarray = field(repr=False)
    lam: float
    Lambda: float = 0.0

    @property
    def m_min(self) -> float:
        return float(np.min(self.m))

    @property
    def m_max(self) -> float:
        return float(np.max(self.m))

    @property
    def gamma(self) -> float:
        return 1.0 / integrate(self.m, self.grid)


@dataclass(frozen=True)
class Density:
    """Nonnegative cell averages with their total mass"""
    grid: Grid
    f: np.ndarray = field(repr=False)
    mass: float = field(init=False)

    def __post_init__(self):
        arr = check_shape(self.f, self.grid, 'density')
        if not np.all(np.isfinite(arr)):
            raise PositivityError("density has non-finite samples")
        if np.any(arr < 0):
            raise PositivityError(f"density has negative samples (min {arr.min():.3e})")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, 'f', arr)
        mass = integrate(arr, self.grid)
        if not mass > 0:
            raise PositivityError("density has zero mass")
        object.__setattr__(self, 'mass', mass)

    @property
    def is_positive(self) -> bool:
        return bool(np.all(self.f > 0))


def make_density(values, grid: Grid) -> Density:
    return Density(grid=grid, f=np.asarray(values, dtype=float))


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def weight_from_samples(rho_samples, grid: Grid, exps: Exponents, Lambda: float = 0.0) -> Weight:
    """Build a Weight from per-cell rho samples, renormalized to unit mass"""
    rho = check_shape(rho_samples, grid, 'rho')
    if np.any(~np.isfinite(rho)) or np.any(rho <= 0):
        raise PositivityError("rho must be strictly positive on every cell")
    rho = rho / integrate(rho, grid)
    m = rho ** (1.0 / exps.sigma)
    lam = min(float(m.min()), 1.0 / float(m.max())) * (1.0 - LAMBDA_SHRINK)
    logger.debug("weight built: n=%d min m=%.6g max m=%.6g lambda=%.6g", grid.n, m.min(), m.max(), lam)
    return Weight(grid=grid, r=exps.r, rho=_freeze(rho), m=_freeze(m), lam=lam, Lambda=float(Lambda))


def weight_from_rho(rho_fn: Callable[[np.ndarray], np.ndarray], grid: Grid, exps: Exponents,
                    Lambda: float = 0.0) -> Weight:
    """Sample rho at cell centers and build the weight pair"""
    samples = np.broadcast_to(np.asarray(rho_fn(grid.centers), dtype=float), (grid.n,))
    return weight_from_samples(samples, grid, exps, Lambda)


# Named weight presets: each returns (rho_fn, admissible Lambda)

def uniform_rho(grid: Grid, exps: Exponents) -> Tuple[Callable, float]:
    return (lambda x: np.ones_like(x)), 0.0


def cosine_rho(grid: Grid, exps: Exponents, amplitude: float) -> Tuple[Callable, float]:
    """rho proportional to 1 + a cos(2 pi (x - x0) / L)"""
    if not 0 <= amplitude < 0.5:
        raise ValueError(f"cosine amplitude must lie in [0, 0.5), got {amplitude}")
    x0 = grid.domain.left
    length = grid.domain.measure
    k = 2.0 * np.pi / length
    Lambda = amplitude * k * k / ((1.0 - amplitude) * exps.sigma)
    return (lambda x: 1.0 + amplitude * np.cos(k * (x - x0))), Lambda


def exp_tilt_rho(grid: Grid, exps: Exponents, slope: float) -> Tuple[Callable, float]:
    """rho proportional to exp(-slope x); log m is affine so Lambda = 0"""
    if grid.periodic and slope != 0:
        raise ValueError("exp-tilt weight is not periodic; use an interval domain")
    return (lambda x: np.exp(-slope * x)), 0.0


def to_u(f, w: Weight) -> np.ndarray:
    values = f.f if isinstance(f, Density) else np.asarray(f, dtype=float)
    return values / w.m


def to_f(u, w: Weight) -> Density:
    return make_density(np.asarray(u, dtype=float) * w.m, w.grid)


def _samples(f) -> np.ndarray:
    return f.f if isinstance(f, Density) else np.asarray(f, dtype=float)


def functional_F(w: Weight, f, exps: Exponents) -> float:
    """F_rho[f] = integral of rho / f^r; +inf when some cell is empty"""
    values = check_shape(_samples(f), w.grid, 'density')
    if np.any(values <= 0):
        return float('inf')
    return integrate(w.rho * values ** (-exps.r), w.grid)


def functional_Gq(q: float, w: Weight, f) -> float:
    """G_q[f] = integral of (f/m)^q m, defined for q < 0 or q > 1"""
    if 0 <= q <= 1:
        raise UnsupportedExponentError(f"G_q is defined only for q < 0 or q > 1, got q={q}")
    values = check_shape(_samples(f), w.grid, 'density')
    if q < 0 and np.any(values <= 0):
        return float('inf')
    return integrate((values / w.m) ** q * w.m, w.grid)


def weighted_BV_norm(u, w: Weight, grid: Grid) -> float:
    """Sum over faces of m_face |u_{i+1} - u_i|"""
    return float(np.sum(face_means(w.m, grid) * np.abs(face_differences(u, grid))))


def weighted_Lq_moment(u, w: Weight, q: float) -> float:
    values = check_shape(u, w.grid, 'u')
    if q < 0 and np.any(values <= 0):
        raise PositivityError("negative moments need u > 0")
    return integrate(w.m * values ** q, w.grid)


def weighted_Lq_norm(u, w: Weight, q: float) -> float:
    if q == 0:
        raise UnsupportedExponentError("weighted L^q norm is undefined for q = 0")
    return weighted_Lq_moment(u, w, q) ** (1.0 / q)


def steady_state(w: Weight, M: float, grid: Grid) -> Density:
    """The stationary density M gamma m"""
    if not M > 0:
        raise PositivityError(f"mass must be positive, got {M}")
    values = M * w.gamma * w.m
    # rescale so the stored mass equals M to roundoff
    values = values * (M / integrate(values, grid))
    return make_density(values, grid)


def u_power_gradient_energy(u, w: Weight, grid: Grid, exponent: float) -> float:
    """Discrete integral of m |grad u^exponent|^2"""
    values = check_shape(u, grid, 'u')
    if exponent <= 0 and np.any(values <= 0):
        raise PositivityError("nonpositive powers need u > 0")
    diffs = face_differences(values ** exponent, grid)
    return float(np.sum(face_means(w.m, grid) * diffs ** 2) / grid.h)


def l1_distance(f, g, grid: Grid) -> float:
    return integrate(np.abs(_samples(f) - _samples(g)), grid)


def l2_distance(f, g, grid: Grid) -> float:
    return float(np.sqrt(integrate((_samples(f) - _samples(g)) ** 2, grid)))


def U(s, exps: Exponents):
    return np.asarray(s, dtype=float) ** (-exps.r)


def U_prime(s, exps: Exponents):
    return -exps.r * np.asarray(s, dtype=float) ** (-exps.sigma)


def U_second(s, exps: Exponents):
    return exps.r * exps.sigma * np.asarray(s, dtype=float) ** (-exps.sigma - 1.0)


def dissipation_coefficient(r: float) -> float:
    """Coefficient of int m |grad u^(-r-1/2)|^2 in the H1-type step identity"""
    return r * r * (r + 1.0) ** 2 / (r + 0.5) ** 2


def flow_interchange_coefficient(r: float, q: float) -> float:
    """c(r, q) = 4 r (r+1) q (q-1) / (q-r-1)^2"""
    sigma = r + 1.0
    if q == sigma:
        raise UnsupportedExponentError("c(r, q) is singular at q = r + 1")
    return 4.0 * r * sigma * q * (q - 1.0) / (q - sigma) ** 2
