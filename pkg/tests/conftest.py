import numpy as np
import pytest

from utils.config import load_config
from utils.grid_domain import Interval, Torus, make_grid
from utils.measures import (Exponents, cosine_rho, exp_tilt_rho, make_density, uniform_rho,
                            weight_from_rho)

WEIGHT_PRESETS = ('uniform', 'cosine', 'exp-tilt')


def build_weight(preset, n=128, r=1.0, amplitude=0.2, slope=1.0):
    """Grid, exponents and weight for one of the named presets"""
    exps = Exponents(r)
    if preset == 'exp-tilt':
        grid = make_grid(Interval(0.0, 1.0), n)
        rho_fn, Lambda = exp_tilt_rho(grid, exps, slope)
    else:
        grid = make_grid(Torus(1.0), n)
        if preset == 'cosine':
            rho_fn, Lambda = cosine_rho(grid, exps, amplitude)
        else:
            rho_fn, Lambda = uniform_rho(grid, exps)
    return grid, exps, weight_from_rho(rho_fn, grid, exps, Lambda)


def sine_density(grid, amplitude=0.3, mass=1.0):
    x = grid.centers - grid.domain.left
    values = 1.0 + amplitude * np.sin(2.0 * np.pi * x / grid.domain.measure)
    return make_density(values * mass / (grid.h * values.sum()), grid)


def smooth_field(grid, seed, modes=4):
    """Random trigonometric field scaled to max |value| = 1"""
    rng = np.random.default_rng(seed)
    y = 2.0 * np.pi * (grid.centers - grid.domain.left) / grid.domain.measure
    values = np.zeros(grid.n)
    for k in range(1, modes + 1):
        a, b = rng.standard_normal(2)
        values += (a * np.cos(k * y) + b * np.sin(k * y)) / k
    return values / np.max(np.abs(values))


@pytest.fixture(autouse=True)
def _isolated_app_config(monkeypatch):
    for key in ('ULTRAFAST_LOG_LEVEL', 'ULTRAFAST_OUT_DIR', 'ULTRAFAST_STRIDE', 'ULTRAFAST_WORKERS', 'DEBUG'):
        monkeypatch.delenv(key, raising=False)
    monkeypatch.setenv('ULTRAFAST_WORKERS', '1')
    load_config(reload=True)
    yield
    load_config(reload=True)


@pytest.fixture
def torus_grid():
    return make_grid(Torus(1.0), 128)


@pytest.fixture
def interval_grid():
    return make_grid(Interval(0.0, 1.0), 128)


@pytest.fixture
def uniform_setup():
    return build_weight('uniform')


@pytest.fixture
def cosine_setup():
    return build_weight('cosine')
