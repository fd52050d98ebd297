import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from escontrol.errors import ContractViolationError, IntegrationDivergedError
from escontrol.ode import (TimeGrid, cumulative_trapezoid, integrate_rk4,
                           integrate_rk4_linear, quadrature_trapezoid)


def test_grid_invariants():
    grid = TimeGrid(0.0, 1.0, 100)
    assert grid.h == pytest.approx(0.01)
    nodes = grid.nodes()
    assert nodes.shape == (101,)
    assert np.allclose(np.diff(nodes), grid.h)
    with pytest.raises(ContractViolationError):
        TimeGrid(1.0, 1.0, 10)
    with pytest.raises(ContractViolationError):
        TimeGrid(0.0, 1.0, 1)


def test_zero_dynamics_stays_constant():
    traj = integrate_rk4(lambda t, x: np.zeros(1), np.array([3.0]), TimeGrid(0.0, 1.0, 100))
    assert np.all(traj.states == 3.0)


def test_exponential_growth_matches_closed_form():
    traj = integrate_rk4(lambda t, x: x, np.array([1.0]), TimeGrid(0.0, 1.0, 1000))
    assert abs(traj.states[-1, 0] - math.e) < 1e-9


def test_constant_derivative_is_exact():
    traj = integrate_rk4(lambda t, x: np.ones(1), np.array([2.0]), TimeGrid(0.0, 1.0, 10))
    assert traj.states[-1, 0] == pytest.approx(3.0, abs=1e-13)


def test_rk4_fourth_order_on_exponential():
    def error(n):
        traj = integrate_rk4(lambda t, x: x, np.array([1.0]), TimeGrid(0.0, 1.0, n))
        return abs(traj.states[-1, 0] - math.e)

    ratio = error(100) / error(200)
    assert 12.0 <= ratio <= 20.0


@settings(max_examples=25, deadline=None)
@given(
    a=st.lists(st.floats(-2.0, 2.0), min_size=4, max_size=4),
    scale=st.floats(-5.0, 5.0).filter(lambda v: abs(v) > 1e-3),
)
def test_linear_dynamics_scale_with_initial_condition(a, scale):
    mat = np.array(a).reshape(2, 2)
    grid = TimeGrid(0.0, 1.0, 64)
    v = np.array([1.0, -0.5])
    base = integrate_rk4(lambda t, x: mat @ x, v, grid).states
    scaled = integrate_rk4(lambda t, x: mat @ x, scale * v, grid).states
    assert np.allclose(scaled, scale * base, rtol=1e-12, atol=1e-12)


def test_divergence_reports_step_index():
    with pytest.raises(IntegrationDivergedError) as err, np.errstate(over="ignore"):
        integrate_rk4(lambda t, x: x * x, np.array([5.0]), TimeGrid(0.0, 1.0, 100))
    assert err.value.step_index is not None
    assert 0 <= err.value.step_index < 100


def test_trapezoid_constant_and_linear():
    grid = TimeGrid(0.0, 1.0, 10)
    assert quadrature_trapezoid(np.ones(11), grid) == pytest.approx(1.0, abs=1e-14)
    assert quadrature_trapezoid(grid.nodes(), grid) == pytest.approx(0.5, abs=1e-14)


def test_trapezoid_quadratic_converges():
    grid = TimeGrid(0.0, 1.0, 1000)
    taus = grid.nodes()
    assert quadrature_trapezoid(taus**2, grid) == pytest.approx(1.0 / 3.0, abs=1e-6)


def test_trapezoid_length_mismatch():
    with pytest.raises(ContractViolationError):
        quadrature_trapezoid(np.ones(10), TimeGrid(0.0, 1.0, 10))


@settings(max_examples=40, deadline=None)
@given(
    n_steps=st.integers(2, 50),
    slope=st.floats(-10.0, 10.0),
    offset=st.floats(-10.0, 10.0),
)
def test_trapezoid_exact_on_affine(n_steps, slope, offset):
    grid = TimeGrid(0.0, 2.0, n_steps)
    taus = grid.nodes()
    expected = slope * 2.0 + offset * 2.0  # integral of slope*tau+offset over [0,2]
    got = quadrature_trapezoid(slope * taus + offset, grid)
    assert got == pytest.approx(expected, abs=1e-11 * (1 + abs(expected)))


def test_cumulative_trapezoid_tracks_running_integral():
    grid = TimeGrid(0.0, 1.0, 500)
    taus = grid.nodes()
    running = cumulative_trapezoid(taus, grid)
    assert np.allclose(running, taus**2 / 2.0, atol=1e-6)
    assert running[0] == 0.0


def test_linear_fast_path_matches_generic_rk4():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((2, 2))
    grid = TimeGrid(0.0, 1.0, 100)
    taus = np.empty(2 * grid.n_steps + 1)
    taus[0::2] = grid.nodes()
    taus[1::2] = grid.midpoints()
    forcing = np.stack([np.sin(3.0 * taus), np.cos(2.0 * taus)], axis=1)
    x0 = np.array([0.3, -1.2])

    fast = integrate_rk4_linear(a, forcing, x0, grid)
    generic = integrate_rk4(
        lambda t, x: a @ x + np.array([math.sin(3.0 * t), math.cos(2.0 * t)]), x0, grid
    )
    scale = np.abs(generic.states).max()
    assert np.allclose(fast.states, generic.states, atol=1e-12 * scale, rtol=1e-12)


def test_linear_fast_path_scalar_matches_generic():
    grid = TimeGrid(0.0, 1.0, 200)
    taus = np.empty(2 * grid.n_steps + 1)
    taus[0::2] = grid.nodes()
    taus[1::2] = grid.midpoints()
    forcing = np.cos(2.0 * np.pi * taus)[:, None]
    fast = integrate_rk4_linear(np.array([[1.0]]), forcing, np.array([2.0]), grid)
    generic = integrate_rk4(
        lambda t, x: x + math.cos(2.0 * math.pi * t), np.array([2.0]), grid
    )
    assert np.allclose(fast.states, generic.states, rtol=1e-12, atol=1e-12)
