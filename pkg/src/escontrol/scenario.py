"""Repeatable optimal-control problems: plant, cost, horizon, noise.

An episode integrates the plant over the fast horizon [0, T] under a
basis-parameterized controller and returns the cost J plus a noisy
measurement J_hat = J + n. Time-varying plants are frozen within an
episode at the episode's slow time (plants drift far slower than one
horizon), which keeps episodes pure functions of their inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtri

from .basis import Basis, ControllerCoefficients, controller_samples
from .errors import ContractViolationError, ScenarioValidationError
from .ode import (StateTrajectory, TimeGrid, integrate_rk4,
                  integrate_rk4_linear, quadrature_trapezoid)


@dataclass(frozen=True)
class LinearDynamics:
    """dx/dtau = A(t) x + B(t) u with A, B functions of slow time t."""

    a_fn: Callable[[float], np.ndarray]
    b_fn: Callable[[float], np.ndarray]
    state_dim: int
    control_dim: int

    @classmethod
    def constant(cls, a, b) -> "LinearDynamics":
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        if a.shape[0] != a.shape[1]:
            raise ScenarioValidationError(f"A must be square, got {a.shape}")
        if b.shape[0] != a.shape[0]:
            raise ScenarioValidationError(
                f"B rows ({b.shape[0]}) must match the state dimension ({a.shape[0]})"
            )
        return cls(a_fn=lambda t: a, b_fn=lambda t: b,
                   state_dim=a.shape[0], control_dim=b.shape[1])


@dataclass(frozen=True)
class GeneralDynamics:
    """dx/dtau = f(tau, x, u) for arbitrary (possibly nonlinear) plants."""

    f: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    state_dim: int
    control_dim: int


Dynamics = LinearDynamics | GeneralDynamics

_EIG_TOL_PSD = -1e-10
_EIG_TOL_PD = 1e-10


def _check_symmetric(name: str, mat: np.ndarray):
    if not np.allclose(mat, mat.T, atol=1e-12, rtol=1e-12):
        raise ScenarioValidationError(f"{name} not symmetric")


@dataclass(frozen=True)
class QuadraticCost:
    """Half-weighted quadratic tracking cost.

    J = 1/2 (C x(T) - r(T))' P (C x(T) - r(T))
      + 1/2 int (C x - r)' Q (C x - r) dtau + 1/2 int u' R u dtau

    Note the 1/2 convention: a plain cost like x(T)^2 + int(x^2 + u^2)
    is declared here as C=1, P=2, Q=2, R=2.
    """

    c_matrix: np.ndarray
    p_matrix: np.ndarray
    q_matrix: np.ndarray
    r_matrix: np.ndarray
    reference: Callable[[float], np.ndarray] | None = None
    # Escape hatch for reproducing published examples whose terminal weight
    # is not PSD (the 2x2 feedback example ships one); J may then be
    # indefinite in some directions and S(tau) is monitored for blow-up only.
    terminal_indefinite_ok: bool = False

    def __post_init__(self):
        for name in ("c_matrix", "p_matrix", "q_matrix", "r_matrix"):
            object.__setattr__(self, name,
                               np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "_ref_cache", {})
        q_dim = self.c_matrix.shape[0]
        if self.p_matrix.shape != (q_dim, q_dim) or self.q_matrix.shape != (q_dim, q_dim):
            raise ScenarioValidationError("P and Q must be square with the output dimension")
        _check_symmetric("P", self.p_matrix)
        _check_symmetric("Q", self.q_matrix)
        _check_symmetric("R", self.r_matrix)
        if not self.terminal_indefinite_ok and \
                np.linalg.eigvalsh(self.p_matrix).min() < _EIG_TOL_PSD:
            raise ScenarioValidationError("P not positive semidefinite")
        if np.linalg.eigvalsh(self.q_matrix).min() < _EIG_TOL_PSD:
            raise ScenarioValidationError("Q not positive semidefinite")
        if np.linalg.eigvalsh(self.r_matrix).min() < _EIG_TOL_PD:
            raise ScenarioValidationError("R not positive definite")

    @property
    def output_dim(self) -> int:
        return self.c_matrix.shape[0]

    def reference_samples(self, taus: np.ndarray) -> np.ndarray:
        """Reference sampled at taus, shape (len(taus), output_dim).

        Samples for a given grid are cached; expression-based references are
        evaluated vectorized when they support it.
        """
        taus = np.atleast_1d(taus)
        if self.reference is None:
            return np.zeros((taus.shape[0], self.output_dim))
        key = (taus.shape[0], float(taus[0]), float(taus[-1]))
        cached = self._ref_cache.get(key)
        if cached is not None:
            return cached
        vals = None
        try:
            arr = np.asarray(self.reference(taus), dtype=float)
            if arr.shape == (self.output_dim, taus.shape[0]):
                vals = arr.T.copy()
            elif arr.shape == (taus.shape[0], self.output_dim):
                vals = arr
        except Exception:
            vals = None
        if vals is None:
            rows = [np.atleast_1d(np.asarray(self.reference(float(t)), dtype=float))
                    for t in taus]
            vals = np.stack(rows, axis=0)
        self._ref_cache[key] = vals
        return vals


@dataclass(frozen=True)
class GeneralCost:
    """J = terminal(x(T)) + int running(x, u) dtau."""

    terminal: Callable[[np.ndarray], float]
    running: Callable[[np.ndarray, np.ndarray], float]


CostSpec = QuadraticCost | GeneralCost


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian measurement noise from a counter-based Philox stream.

    Draw i is ndtri(u_i) * std_dev where u_i is the i-th uniform of the
    Philox4x64-10 stream keyed by ``seed`` (inverse-CDF sampling), so any
    position in the stream is reproducible on any platform without
    generating its predecessors.
    """

    std_dev: float
    seed: int

    def __post_init__(self):
        if not np.isfinite(self.std_dev) or self.std_dev < 0:
            raise ScenarioValidationError(f"noise std_dev must be finite and >= 0, "
                                          f"got {self.std_dev}")

    def draw(self, index: int) -> float:
        if self.std_dev == 0.0:
            return 0.0
        bit_gen = np.random.Philox(key=self.seed)
        bit_gen.advance(int(index))
        u = np.random.Generator(bit_gen).random()
        u = min(max(u, 5e-324), 1.0 - 1e-16)
        return float(self.std_dev * ndtri(u))


@dataclass
class Scenario:
    """One repeatable optimal-control problem plus its measurement channel."""

    name: str
    dynamics: Dynamics
    cost: CostSpec
    grid: TimeGrid
    basis: Basis
    initial_conditions: list[np.ndarray]
    noise: NoiseModel = field(default_factory=lambda: NoiseModel(0.0, 0))
    batch_period: float | None = None
    feedback: bool = False
    feedforward: bool = False
    es_defaults: dict = field(default_factory=dict)
    raw_config: dict | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        ics = [np.atleast_1d(np.asarray(x0, dtype=float)) for x0 in self.initial_conditions]
        if not ics:
            raise ScenarioValidationError("at least one initial condition is required")
        dims = {x0.shape[0] for x0 in ics}
        if len(dims) != 1 or dims.pop() != self.dynamics.state_dim:
            raise ScenarioValidationError(
                "all initial conditions must match the state dimension "
                f"{self.dynamics.state_dim}"
            )
        self.initial_conditions = ics

    @property
    def state_dim(self) -> int:
        return self.dynamics.state_dim

    @property
    def control_dim(self) -> int:
        return self.dynamics.control_dim

    def doubled_taus(self) -> np.ndarray:
        """Grid nodes interleaved with midpoints (RK4 stage times)."""
        if "taus_d" not in self._cache:
            taus = np.empty(2 * self.grid.n_steps + 1)
            taus[0::2] = self.grid.nodes()
            taus[1::2] = self.grid.midpoints()
            self._cache["taus_d"] = taus
        return self._cache["taus_d"]

    def basis_matrix_doubled(self) -> np.ndarray:
        if "phi_d" not in self._cache:
            self._cache["phi_d"] = self.basis.eval_matrix(self.doubled_taus())
        return self._cache["phi_d"]

    def basis_matrix_nodes(self) -> np.ndarray:
        return self.basis_matrix_doubled()[0::2]

    def slow_time_for(self, step: int, delta: float) -> float:
        """Slow time of episode ``step``: the batch clock when one exists,
        otherwise the optimizer clock step * delta."""
        if self.batch_period is not None:
            return step * self.batch_period
        return step * delta

    def zero_coefficients(self) -> ControllerCoefficients:
        return ControllerCoefficients.zeros(self.control_dim, self.basis)


@dataclass(frozen=True)
class EpisodeResult:
    trajectory: StateTrajectory
    controls: np.ndarray
    cost: float
    measured_cost: float


@dataclass(frozen=True)
class MultiEpisodeResult:
    episodes: tuple[EpisodeResult, ...]
    total_cost: float
    measured_total_cost: float


def cost_of_trajectory(cost: CostSpec, grid: TimeGrid, states: np.ndarray,
                       controls: np.ndarray) -> float:
    """Terminal term plus trapezoid quadrature of the running term."""
    if isinstance(cost, QuadraticCost):
        taus = np.linspace(grid.t_start, grid.t_end, grid.n_steps + 1)
        err = states @ cost.c_matrix.T - cost.reference_samples(taus)
        running = 0.5 * (np.einsum("ki,ij,kj->k", err, cost.q_matrix, err)
                         + np.einsum("ki,ij,kj->k", controls, cost.r_matrix, controls))
        e_t = err[-1]
        terminal = 0.5 * float(e_t @ cost.p_matrix @ e_t)
    else:
        running = np.array([cost.running(states[k], controls[k])
                            for k in range(states.shape[0])], dtype=float)
        terminal = float(cost.terminal(states[-1]))
    return terminal + quadrature_trapezoid(running, grid)


def _integrate_open_loop(scenario: Scenario, coeffs: ControllerCoefficients,
                         slow_time: float, x0: np.ndarray):
    dyn = scenario.dynamics
    if isinstance(dyn, LinearDynamics):
        a = np.atleast_2d(np.asarray(dyn.a_fn(slow_time), dtype=float))
        b = np.atleast_2d(np.asarray(dyn.b_fn(slow_time), dtype=float))
        u_d = controller_samples(coeffs, scenario.basis_matrix_doubled())
        traj = integrate_rk4_linear(a, u_d @ b.T, x0, scenario.grid)
        return traj, u_d[0::2]
    basis = scenario.basis

    def derivative(tau, x):
        u = basis.eval_matrix(tau)[0] @ coeffs.values.T
        return dyn.f(tau, x, u)

    traj = integrate_rk4(derivative, x0, scenario.grid)
    u_nodes = controller_samples(coeffs, scenario.basis_matrix_nodes())
    return traj, u_nodes


def run_episode(scenario: Scenario, coeffs: ControllerCoefficients,
                slow_time: float = 0.0, noise_index: int = 0) -> EpisodeResult:
    """Integrate one episode from the first initial condition and measure J."""
    if coeffs.n_channels != scenario.control_dim or \
            coeffs.n_functions != scenario.basis.n_functions:
        raise ContractViolationError(
            f"coefficients shaped {coeffs.values.shape} do not fit "
            f"{scenario.control_dim} channels x {scenario.basis.n_functions} functions"
        )
    traj, u_nodes = _integrate_open_loop(scenario, coeffs, slow_time,
                                         scenario.initial_conditions[0])
    j = cost_of_trajectory(scenario.cost, scenario.grid, traj.states, u_nodes)
    return EpisodeResult(trajectory=traj, controls=u_nodes, cost=j,
                         measured_cost=j + scenario.noise.draw(noise_index))


def run_multi_episode(scenario: Scenario, coeffs, slow_time: float = 0.0,
                      noise_index: int = 0) -> MultiEpisodeResult:
    """One episode per initial condition; a single noise draw on the summed cost.

    ``coeffs`` is a ControllerCoefficients (open loop, the same control replayed
    from every initial condition) or a feedback GainField.
    """
    from .feedback import GainField, run_feedback_episodes  # avoids a module cycle

    if isinstance(coeffs, GainField):
        episodes = run_feedback_episodes(scenario, coeffs,
                                         scenario.initial_conditions, slow_time)
    else:
        episodes = []
        for x0 in scenario.initial_conditions:
            traj, u_nodes = _integrate_open_loop(scenario, coeffs, slow_time, x0)
            j = cost_of_trajectory(scenario.cost, scenario.grid, traj.states, u_nodes)
            episodes.append(EpisodeResult(traj, u_nodes, j, j))
    total = float(sum(ep.cost for ep in episodes))
    return MultiEpisodeResult(episodes=tuple(episodes), total_cost=total,
                              measured_total_cost=total + scenario.noise.draw(noise_index))


def episode_cost_fn(scenario: Scenario, slow_time: float = 0.0) -> Callable[[np.ndarray], float]:
    """Noise-free cost of a flat coefficient vector; used by the oracles."""
    n_ch = scenario.control_dim

    def cost_fn(flat: np.ndarray) -> float:
        coeffs = ControllerCoefficients.from_flat(flat, n_ch)
        if len(scenario.initial_conditions) == 1:
            return run_episode(scenario, coeffs, slow_time=slow_time).cost
        return run_multi_episode(scenario, coeffs, slow_time=slow_time).total_cost

    return cost_fn
