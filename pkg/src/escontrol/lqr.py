"""Analytic ground truth: finite-horizon Riccati solve, tracking feedforward,
optimal-feedback simulation and the optimal cost.

This is everything one could compute had the plant and cost been known, and
it is the reference every learned controller is judged against. The matrix
Riccati equation

    -dS/dtau = A'S + SA - S B R^-1 B' S + C'QC,   S(T) = C'PC

is integrated backward by reusing the forward RK4 integrator in reversed
time sigma = T - tau, on a half-step grid so the forward pass later has
exact gain samples at its RK4 stage midpoints. The tracking feedforward
solves

    -dv/dtau = (A - B K)' v + C'Q r(tau),   v(T) = C'P r(T)

and the optimal control is u = -K(tau) x + R^-1 B' v(tau), K = R^-1 B' S.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ContractViolationError, RiccatiInstabilityError
from .ode import StateTrajectory, TimeGrid, integrate_rk4, integrate_rk4_linear
from .scenario import LinearDynamics, QuadraticCost, Scenario, cost_of_trajectory

_PSD_TOL = -1e-8


@dataclass(frozen=True)
class RiccatiSolution:
    """S, K and v sampled on the grid nodes (plus stage midpoints internally)."""

    grid: TimeGrid
    s_matrices: np.ndarray     # (n_steps + 1, n, n)
    gains: np.ndarray          # (n_steps + 1, p, n)
    feedforward: np.ndarray    # (n_steps + 1, n)
    a_matrix: np.ndarray
    b_matrix: np.ndarray
    rinv_bt: np.ndarray        # R^-1 B'
    has_reference: bool
    _s_doubled: np.ndarray
    _k_doubled: np.ndarray
    _v_doubled: np.ndarray

    @property
    def state_dim(self) -> int:
        return self.a_matrix.shape[0]

    def optimal_cost(self, x0) -> float:
        """1/2 x0' S(0) x0; only valid for the regulating case (r = 0)."""
        return optimal_cost_quadratic_form(self, x0)


def _pd_inverse_times(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """mat^-1 rhs through a Cholesky factorization, with a condition check."""
    eigs = np.linalg.eigvalsh(mat)
    if eigs.min() <= 0 or eigs.max() / eigs.min() > 1e12:
        raise ContractViolationError(
            f"matrix is not safely positive definite (eigenvalues {eigs})"
        )
    return cho_solve(cho_factor(mat, lower=True), rhs)


def solve_riccati(dynamics: LinearDynamics, cost: QuadraticCost, grid: TimeGrid,
                  slow_time: float = 0.0) -> RiccatiSolution:
    """Backward Riccati + feedforward solve with the plant frozen at slow_time."""
    a = np.atleast_2d(np.asarray(dynamics.a_fn(slow_time), dtype=float))
    b = np.atleast_2d(np.asarray(dynamics.b_fn(slow_time), dtype=float))
    n = a.shape[0]
    c = cost.c_matrix
    rinv_bt = _pd_inverse_times(cost.r_matrix, b.T)
    m = b @ rinv_bt                      # B R^-1 B'
    ctqc = c.T @ cost.q_matrix @ c
    has_reference = cost.reference is not None

    t_end = grid.t_end
    sigma_grid = TimeGrid(0.0, grid.span, 2 * grid.n_steps)
    s_terminal = c.T @ cost.p_matrix @ c
    if has_reference:
        r_end = np.atleast_1d(np.asarray(cost.reference(t_end), dtype=float))
        v_terminal = c.T @ cost.p_matrix @ r_end
    else:
        v_terminal = np.zeros(n)
    y0 = np.concatenate([s_terminal.ravel(), v_terminal])

    def derivative(sigma, y):
        s = y[: n * n].reshape(n, n)
        s = 0.5 * (s + s.T)              # keep the symmetric part only
        ds = a.T @ s + s @ a - s @ m @ s + ctqc
        if has_reference:
            v = y[n * n:]
            tau = t_end - sigma
            r_tau = np.atleast_1d(np.asarray(cost.reference(tau), dtype=float))
            dv = (a - m @ s).T @ v + c.T @ cost.q_matrix @ r_tau
        else:
            dv = np.zeros(n)
        return np.concatenate([ds.ravel(), dv])

    try:
        back = integrate_rk4(derivative, y0, sigma_grid)
    except Exception as exc:
        raise RiccatiInstabilityError(f"backward Riccati integration failed: {exc}") from exc

    y_doubled = back.states[::-1]                      # ascending tau
    s_doubled = y_doubled[:, : n * n].reshape(-1, n, n)
    s_doubled = 0.5 * (s_doubled + np.transpose(s_doubled, (0, 2, 1)))
    v_doubled = y_doubled[:, n * n:] if has_reference else np.zeros((y_doubled.shape[0], n))
    k_doubled = np.einsum("ij,kjl->kil", rinv_bt, s_doubled)

    s_nodes = s_doubled[0::2]
    if not np.all(np.isfinite(s_nodes)):
        bad = int(np.argmax(~np.isfinite(s_nodes).reshape(s_nodes.shape[0], -1).all(axis=1)))
        raise RiccatiInstabilityError(f"S blew up at node {bad}", node_index=bad)
    if not cost.terminal_indefinite_ok:
        for idx in range(s_nodes.shape[0]):
            if np.linalg.eigvalsh(s_nodes[idx]).min() < _PSD_TOL:
                raise RiccatiInstabilityError(
                    f"S lost positive semidefiniteness at node {idx}", node_index=idx
                )
    return RiccatiSolution(
        grid=grid,
        s_matrices=s_nodes,
        gains=k_doubled[0::2],
        feedforward=v_doubled[0::2],
        a_matrix=a,
        b_matrix=b,
        rinv_bt=rinv_bt,
        has_reference=has_reference,
        _s_doubled=s_doubled,
        _k_doubled=k_doubled,
        _v_doubled=v_doubled,
    )


def simulate_optimal(dynamics: LinearDynamics, cost: QuadraticCost, grid: TimeGrid,
                     x0, riccati: RiccatiSolution,
                     slow_time: float = 0.0) -> tuple[StateTrajectory, np.ndarray, float]:
    """Forward simulation under u = -K(tau) x + R^-1 B' v(tau); returns J*."""
    if riccati.grid != grid:
        raise ContractViolationError("riccati solution was computed on a different grid")
    a = np.atleast_2d(np.asarray(dynamics.a_fn(slow_time), dtype=float))
    b = np.atleast_2d(np.asarray(dynamics.b_fn(slow_time), dtype=float))
    a_cl = a - np.einsum("ij,kjl->kil", b, riccati._k_doubled)
    forcing = None
    if riccati.has_reference:
        feed = np.einsum("ij,kj->ki", riccati.rinv_bt, riccati._v_doubled)
        forcing = feed @ b.T
    traj = integrate_rk4_linear(a_cl, forcing, x0, grid)
    u_nodes = -np.einsum("kij,kj->ki", riccati.gains, traj.states)
    if riccati.has_reference:
        u_nodes = u_nodes + np.einsum("ij,kj->ki", riccati.rinv_bt, riccati.feedforward)
    j_star = cost_of_trajectory(cost, grid, traj.states, u_nodes)
    return traj, u_nodes, j_star


def optimal_cost_quadratic_form(riccati: RiccatiSolution, x0) -> float:
    """J* = 1/2 x0' S(0) x0, the standard identity for the regulating case."""
    if riccati.has_reference:
        raise ContractViolationError(
            "the quadratic-form cost identity only holds with a zero reference"
        )
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    return float(0.5 * x0 @ riccati.s_matrices[0] @ x0)


def scenario_oracle(scenario: Scenario, slow_time: float = 0.0) -> RiccatiSolution:
    """Riccati solution for a scenario (linear dynamics + quadratic cost only)."""
    if not isinstance(scenario.dynamics, LinearDynamics) or \
            not isinstance(scenario.cost, QuadraticCost):
        raise ContractViolationError(
            "the analytic oracle requires linear dynamics and a quadratic cost"
        )
    return solve_riccati(scenario.dynamics, scenario.cost, scenario.grid, slow_time)


def oracle_costs(scenario: Scenario, slow_time: float = 0.0,
                 riccati: RiccatiSolution | None = None) -> list[float]:
    """Optimal cost J* for each of the scenario's initial conditions."""
    if riccati is None:
        riccati = scenario_oracle(scenario, slow_time)
    out = []
    for x0 in scenario.initial_conditions:
        if riccati.has_reference:
            _, _, j_star = simulate_optimal(scenario.dynamics, scenario.cost,
                                            scenario.grid, x0, riccati, slow_time)
        else:
            j_star = optimal_cost_quadratic_form(riccati, x0)
        out.append(float(j_star))
    return out
