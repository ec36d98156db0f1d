import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from conftest import sine_density, smooth_field
from utils.errors import AtomLimitError, DegenerateCDFError, InvalidResolutionError, MassMismatchError
from utils.grid_domain import Interval, Torus, make_grid
from utils.measures import make_density
from utils.transport1d import (blocks_from_atoms, cumulative_mass, quantiles, torus_shift_cost, w2, w2_atoms,
                               w2_bruteforce, w2_interval, w2_torus)

N_CELLS = 256


@st.composite
def atom_pairs(draw, length=1.0):
    """Two equal-size atom sets placed at distinct cell centers"""
    k = draw(st.integers(min_value=1, max_value=8))
    cells = st.lists(st.integers(min_value=0, max_value=N_CELLS - 1), min_size=k, max_size=k, unique=True)
    h = length / N_CELLS
    xs = (np.array(draw(cells)) + 0.5) * h
    ys = (np.array(draw(cells)) + 0.5) * h
    return xs, ys


@settings(max_examples=50, deadline=None)
@given(pair=atom_pairs(), periodic=st.booleans())
def test_sorted_matching_agrees_with_bruteforce(pair, periodic):
    xs, ys = pair
    domain = Torus(1.0) if periodic else Interval(0.0, 1.0)
    assert w2_atoms(xs, ys, domain) == pytest.approx(w2_bruteforce(xs, ys, domain), abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(pair=atom_pairs(), periodic=st.booleans())
def test_grid_transport_agrees_with_bruteforce(pair, periodic):
    xs, ys = pair
    domain = Torus(1.0) if periodic else Interval(0.0, 1.0)
    grid = make_grid(domain, N_CELLS)
    f, g = blocks_from_atoms(xs, grid), blocks_from_atoms(ys, grid)
    exact = w2_bruteforce(xs, ys, domain)
    # blocks move rigidly with their atoms; only the floor mass perturbs the cost
    tol = 1e-6
    result = w2(f, g, grid)
    assert abs(result.w2 - exact) <= tol
    if periodic:
        assert result.shift is not None
    else:
        assert result.shift is None


def test_bruteforce_against_linear_program():
    ot = pytest.importorskip("ot")
    rng = np.random.default_rng(7)
    for _ in range(10):
        xs, ys = rng.uniform(0.0, 1.0, 6), rng.uniform(0.0, 1.0, 6)
        weights = np.full(6, 1.0 / 6)
        cost = ot.emd2(weights, weights, (xs[:, None] - ys[None, :]) ** 2)
        assert w2_bruteforce(xs, ys, Interval(0.0, 1.0)) == pytest.approx(np.sqrt(cost), abs=1e-8)


def test_circle_atoms_against_linear_program():
    ot = pytest.importorskip("ot")
    rng = np.random.default_rng(11)
    for _ in range(10):
        xs, ys = rng.uniform(0.0, 1.0, 6), rng.uniform(0.0, 1.0, 6)
        weights = np.full(6, 1.0 / 6)
        gap = np.abs(xs[:, None] - ys[None, :])
        cost = ot.emd2(weights, weights, np.minimum(gap, 1.0 - gap) ** 2)
        assert w2_atoms(xs, ys, Torus(1.0)) == pytest.approx(np.sqrt(cost), abs=1e-8)


def test_bruteforce_atom_limit():
    with pytest.raises(AtomLimitError):
        w2_bruteforce(np.linspace(0, 1, 9), np.linspace(0, 1, 9), Interval(0.0, 1.0))


def test_circle_distance_wraps():
    assert w2_atoms([0.05], [0.95], Torus(1.0)) == pytest.approx(0.1)
    assert w2_atoms([0.05], [0.95], Interval(0.0, 1.0)) == pytest.approx(0.9)


def test_quantiles_of_uniform_density():
    grid = make_grid(Interval(0.0, 2.0), 16)
    f = make_density(np.full(16, 0.5), grid)
    qmap = quantiles(f, grid, N=8)
    np.testing.assert_allclose(qmap.X, np.linspace(0.0, 2.0, 9), atol=1e-14)
    np.testing.assert_allclose(qmap.s_nodes, np.linspace(0.0, 1.0, 9))
    assert not qmap.periodic
    with pytest.raises(InvalidResolutionError):
        quantiles(f, grid, N=1)


def test_quantiles_are_monotone(torus_grid):
    qmap = quantiles(sine_density(torus_grid), torus_grid)
    assert np.all(np.diff(qmap.X) > 0)
    assert qmap.X[0] == 0.0 and qmap.X[-1] == 1.0


def test_cumulative_mass(torus_grid):
    cum = cumulative_mass(np.full(torus_grid.n, 3.0), torus_grid)
    assert cum[0] == 0.0
    assert cum[-1] == pytest.approx(3.0)


def test_zero_cell_is_degenerate(torus_grid):
    values = np.ones(torus_grid.n)
    values[10] = 0.0
    f = make_density(values, torus_grid)
    with pytest.raises(DegenerateCDFError):
        w2(f, sine_density(torus_grid, mass=f.mass), torus_grid)


def test_mass_mismatch(torus_grid):
    with pytest.raises(MassMismatchError):
        w2(sine_density(torus_grid), sine_density(torus_grid, mass=2.0), torus_grid)


def test_identical_densities(interval_grid):
    f = sine_density(interval_grid)
    result = w2_interval(f, f, interval_grid)
    assert result.w2 == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(result.map_T, interval_grid.centers, atol=1e-12)
    np.testing.assert_allclose(result.potential_phi, 0.0, atol=1e-12)


def test_interval_against_closed_form():
    grid = make_grid(Interval(0.0, 1.0), 512)
    f = make_density(np.ones(grid.n), grid)
    g = make_density(0.5 + grid.centers, grid)
    t = np.linspace(0.0, 1.0, 200001)
    # quantile of 0.5 + x is -1/2 + sqrt(1/4 + 2t)
    reference = np.sqrt(trapezoid((t - (-0.5 + np.sqrt(0.25 + 2.0 * t))) ** 2, t))
    result = w2_interval(f, g, grid)
    assert result.w2 == pytest.approx(reference, abs=1e-4)
    # potential gradient is x - T(x)
    np.testing.assert_allclose(np.gradient(result.potential_phi, grid.h)[1:-1],
                               (grid.centers - result.map_T)[1:-1], atol=1e-3)


def test_circle_never_exceeds_line():
    torus = make_grid(Torus(1.0), 128)
    line = make_grid(Interval(0.0, 1.0), 128)
    f = sine_density(torus, amplitude=0.6)
    values = np.roll(f.f, 40)
    g_torus, g_line = make_density(values, torus), make_density(values, line)
    circle = w2_torus(f, g_torus, torus)
    straight = w2_interval(make_density(f.f, line), g_line, line)
    assert circle.w2 <= straight.w2 + 1e-12
    assert torus_shift_cost(f, g_torus, torus, 0.0) == pytest.approx(straight.w2 ** 2, rel=1e-10)


def test_torus_shift_minimizes_cost(torus_grid):
    f = sine_density(torus_grid, amplitude=0.5)
    g = make_density(np.roll(f.f, 17), torus_grid)
    result = w2_torus(f, g, torus_grid)
    assert torus_shift_cost(f, g, torus_grid, result.shift) == pytest.approx(result.w2 ** 2, rel=1e-9)
    for theta in np.linspace(-0.9, 0.9, 19):
        assert torus_shift_cost(f, g, torus_grid, theta) >= result.w2 ** 2 - 1e-12
    assert w2_torus(g, f, torus_grid).w2 == pytest.approx(result.w2, abs=1e-8)


def test_w2_torus_needs_periodic_grid(interval_grid):
    f = sine_density(interval_grid)
    with pytest.raises(ValueError):
        w2_torus(f, f, interval_grid)


def _smooth_density(grid, seed):
    values = 1.0 + 0.5 * smooth_field(grid, seed)
    return make_density(values / (grid.h * values.sum()), grid)


@settings(max_examples=25, deadline=None)
@given(seeds=st.lists(st.integers(min_value=0, max_value=10 ** 6), min_size=3, max_size=3, unique=True))
def test_interval_distance_is_a_metric(seeds):
    grid = make_grid(Interval(0.0, 1.0), 128)
    f, g, h = (_smooth_density(grid, seed) for seed in seeds)
    fg = w2_interval(f, g, grid).w2
    assert w2_interval(g, f, grid).w2 == pytest.approx(fg, abs=1e-10)
    assert w2_interval(f, h, grid).w2 <= fg + w2_interval(g, h, grid).w2 + 1e-8


@settings(max_examples=25, deadline=None)
@given(seeds=st.lists(st.integers(min_value=0, max_value=10 ** 6), min_size=2, max_size=2, unique=True))
def test_torus_shift_cost_is_unimodal(seeds):
    grid = make_grid(Torus(1.0), 128)
    f, g = (_smooth_density(grid, seed) for seed in seeds)
    thetas = np.linspace(-f.mass, f.mass, 64)
    steps = np.diff([torus_shift_cost(f, g, grid, theta) for theta in thetas])
    rising = np.flatnonzero(steps > 1e-12)
    if rising.size:
        assert np.all(steps[rising[0]:] >= -1e-12)
