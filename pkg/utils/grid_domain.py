import numpy as np
from dataclasses import dataclass, field
from typing import Union

from utils.errors import InvalidResolutionError, ShapeError


@dataclass(frozen=True)
class Torus:
    """Periodic domain [0, L) with the endpoints identified"""
    length: float = 1.0

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"Torus length must be positive, got {self.length}")

    @property
    def measure(self) -> float:
        return float(self.length)

    @property
    def left(self) -> float:
        return 0.0

    @property
    def right(self) -> float:
        return float(self.length)

    @property
    def periodic(self) -> bool:
        return True


@dataclass(frozen=True)
class Interval:
    """Interval [a, b] with no-flux boundary"""
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError(f"Interval needs a < b, got a={self.a}, b={self.b}")

    @property
    def measure(self) -> float:
        return float(self.b - self.a)

    @property
    def left(self) -> float:
        return float(self.a)

    @property
    def right(self) -> float:
        return float(self.b)

    @property
    def periodic(self) -> bool:
        return False


Domain = Union[Torus, Interval]


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid on a 1-D domain"""
    domain: Domain
    n: int
    h: float = field(init=False)
    centers: np.ndarray = field(init=False, repr=False)
    edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        h = self.domain.measure / self.n
        edges = self.domain.left + h * np.arange(self.n + 1, dtype=float)
        edges[-1] = self.domain.right
        object.__setattr__(self, 'h', h)
        object.__setattr__(self, 'edges', _frozen(edges))
        object.__setattr__(self, 'centers', _frozen(self.domain.left + h * (np.arange(self.n) + 0.5)))

    @property
    def periodic(self) -> bool:
        return self.domain.periodic

    @property
    def n_faces(self) -> int:
        return self.n if self.periodic else self.n - 1


def make_grid(domain: Domain, n: int) -> Grid:
    """Build a uniform grid with n cells"""
    if int(n) != n or n < 2:
        raise InvalidResolutionError(f"Grid needs at least 2 cells, got {n}")
    return Grid(domain=domain, n=int(n))


def check_shape(values, grid: Grid, name: str = 'values') -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != (grid.n,):
        raise ShapeError(f"{name} has shape {arr.shape}, expected ({grid.n},)")
    return arr


def integrate(values, grid: Grid) -> float:
    """Midpoint quadrature h * sum(values)"""
    arr = check_shape(values, grid)
    return float(grid.h * np.sum(arr))


def face_differences(values, grid: Grid) -> np.ndarray:
    """Forward differences across faces; includes the wrap face on a torus"""
    arr = check_shape(values, grid)
    if grid.periodic:
        return np.roll(arr, -1) - arr
    return np.diff(arr)


def face_means(values, grid: Grid) -> np.ndarray:
    """Arithmetic means of the two cells adjacent to each face"""
    arr = check_shape(values, grid)
    if grid.periodic:
        return 0.5 * (arr + np.roll(arr, -1))
    return 0.5 * (arr[:-1] + arr[1:])
