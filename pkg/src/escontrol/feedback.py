"""Learning a time-varying feedback gain field by extremum seeking.

Instead of open-loop controls, the decision variables here are basis
coefficients of every entry of a p x n gain matrix K(tau) (plus optional
feedforward V(tau)); each batch plays u = -K(tau) x from n linearly
independent initial conditions and measures the summed cost. Once
converged the field is a feedback law valid for any initial condition.

Dither assignment follows the two-dimensional recipe exactly: gain rows
own disjoint frequency bands (row 1 gets [w0, 1.35 w0], row 2 gets
[1.35 w0, 1.75 w0] in the 2x2 case), and within a row the odd columns
dither with cos while even columns reuse the same frequencies with sin.
Wider matrices subdivide each row band per pair of columns; feedforward
rows get fresh bands appended above the gain bands.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .basis import Basis
from .errors import (ContractViolationError, IllPosedSynthesisError,
                     IntegrationDivergedError)
from .es import EsConfig, EsRunRecord, PHASE_COS, PHASE_SIN, make_frequency_schedule, run_es
from .lqr import RiccatiSolution
from .ode import TimeGrid
from .scenario import (EpisodeResult, LinearDynamics, QuadraticCost, Scenario,
                       cost_of_trajectory)


@dataclass(frozen=True)
class GainField:
    """Basis-expanded feedback gain K(tau) and optional feedforward V(tau)."""

    basis: Basis
    state_dim: int
    control_dim: int
    gain_coeffs: np.ndarray              # (p, n, n_functions)
    ff_coeffs: np.ndarray | None = None  # (p, n_functions)

    def __post_init__(self):
        gain = np.asarray(self.gain_coeffs, dtype=float)
        object.__setattr__(self, "gain_coeffs", gain)
        expected = (self.control_dim, self.state_dim, self.basis.n_functions)
        if gain.shape != expected:
            raise ContractViolationError(
                f"gain coefficients shaped {gain.shape}, expected {expected}"
            )
        if self.ff_coeffs is not None:
            ff = np.asarray(self.ff_coeffs, dtype=float)
            object.__setattr__(self, "ff_coeffs", ff)
            if ff.shape != (self.control_dim, self.basis.n_functions):
                raise ContractViolationError(
                    f"feedforward coefficients shaped {ff.shape}, expected "
                    f"{(self.control_dim, self.basis.n_functions)}"
                )
        if not np.all(np.isfinite(gain)):
            raise ContractViolationError("gain coefficients must be finite")

    @classmethod
    def zeros(cls, basis: Basis, state_dim: int, control_dim: int,
              feedforward: bool = False) -> "GainField":
        ff = np.zeros((control_dim, basis.n_functions)) if feedforward else None
        return cls(basis, state_dim, control_dim,
                   np.zeros((control_dim, state_dim, basis.n_functions)), ff)

    @classmethod
    def from_flat(cls, flat, basis: Basis, state_dim: int, control_dim: int,
                  feedforward: bool = False) -> "GainField":
        flat = np.asarray(flat, dtype=float)
        n_gain = control_dim * state_dim * basis.n_functions
        gain = flat[:n_gain].reshape(control_dim, state_dim, basis.n_functions)
        ff = None
        if feedforward:
            ff = flat[n_gain:].reshape(control_dim, basis.n_functions)
        return cls(basis, state_dim, control_dim, gain, ff)

    @property
    def has_feedforward(self) -> bool:
        return self.ff_coeffs is not None

    @property
    def n_coefficients(self) -> int:
        n = self.gain_coeffs.size
        if self.ff_coeffs is not None:
            n += self.ff_coeffs.size
        return n

    def flat(self) -> np.ndarray:
        """Entries row-major (each interleaved per basis order), then V rows."""
        parts = [self.gain_coeffs.ravel()]
        if self.ff_coeffs is not None:
            parts.append(self.ff_coeffs.ravel())
        return np.concatenate(parts)

    def gain_samples(self, phi_matrix: np.ndarray) -> np.ndarray:
        """K at pre-evaluated basis rows; shape (len(taus), p, n)."""
        return np.einsum("pnf,tf->tpn", self.gain_coeffs, phi_matrix)

    def feedforward_samples(self, phi_matrix: np.ndarray) -> np.ndarray:
        return phi_matrix @ self.ff_coeffs.T


def eval_gain(field: GainField, tau: float) -> np.ndarray:
    """The p x n gain matrix at tau, linear in the coefficients."""
    if tau < -1e-9 or tau > field.basis.horizon + 1e-9:
        raise ContractViolationError(
            f"tau={tau} outside the horizon [0, {field.basis.horizon}]"
        )
    return field.gain_samples(field.basis.eval_matrix(tau))[0]


def run_feedback_episodes(scenario: Scenario, field: GainField, x0s,
                          slow_time: float = 0.0) -> list[EpisodeResult]:
    """Closed-loop episodes under u = -K(tau) x (+ V(tau)) for several
    initial conditions at once.

    The transition matrices depend only on the field, so all episodes of a
    batch share one propagation pass; this is the hot path of gain synthesis.
    """
    if not isinstance(scenario.dynamics, LinearDynamics):
        raise ContractViolationError("feedback episodes require linear dynamics")
    from .ode import StateTrajectory, rk4_step_forcing, rk4_step_matrices

    a = np.atleast_2d(np.asarray(scenario.dynamics.a_fn(slow_time), dtype=float))
    b = np.atleast_2d(np.asarray(scenario.dynamics.b_fn(slow_time), dtype=float))
    grid = scenario.grid
    n, dim = grid.n_steps, a.shape[0]
    phi_d = scenario.basis_matrix_doubled()
    k_d = field.gain_samples(phi_d)
    a_cl = a - np.einsum("ij,tjl->til", b, k_d)
    phi_step = rk4_step_matrices(a_cl[0:-1:2], a_cl[1::2], a_cl[2::2], grid.h)
    w = None
    v_nodes = None
    if field.has_feedforward:
        v_d = field.feedforward_samples(phi_d)
        forcing = v_d @ b.T
        w = rk4_step_forcing(a_cl[1::2], a_cl[2::2], forcing[0:-1:2],
                             forcing[1::2], forcing[2::2], grid.h)
        v_nodes = v_d[0::2]

    x = np.stack([np.atleast_1d(np.asarray(x0, dtype=float)) for x0 in x0s], axis=1)
    states = np.empty((n + 1, dim, x.shape[1]))
    states[0] = x
    if w is None:
        for idx in range(n):
            x = phi_step[idx] @ x
            states[idx + 1] = x
    else:
        for idx in range(n):
            x = phi_step[idx] @ x + w[idx][:, None]
            states[idx + 1] = x
    if not np.all(np.isfinite(states)):
        raise IntegrationDivergedError("closed loop diverged", step_index=None)

    u_all = -np.einsum("tij,tjm->tim", k_d[0::2], states)
    if v_nodes is not None:
        u_all = u_all + v_nodes[:, :, None]
    results = []
    for i in range(x.shape[1]):
        traj = StateTrajectory(grid=grid, states=states[:, :, i], dimension=dim)
        j = cost_of_trajectory(scenario.cost, grid, traj.states, u_all[:, :, i])
        results.append(EpisodeResult(trajectory=traj, controls=u_all[:, :, i],
                                     cost=j, measured_cost=j))
    return results


def run_feedback_episode(scenario: Scenario, field: GainField, x0,
                         slow_time: float = 0.0) -> EpisodeResult:
    """Closed-loop episode under u = -K(tau) x (+ V(tau)); noise-free cost."""
    return run_feedback_episodes(scenario, field, [x0], slow_time)[0]


def gain_dither_assignment(omega0: float, m: int, state_dim: int, control_dim: int,
                           feedforward: bool = False,
                           band_edges: Sequence[float] | None = None):
    """(frequencies, phases) for the flat gain-field coefficient vector.

    Returns one (frequency, phase) per scalar coefficient, in the flat
    layout of :meth:`GainField.flat`.
    """
    p, n = control_dim, state_dim
    n_groups = (n + 1) // 2          # column pairs sharing a band via cos/sin
    if band_edges is None:
        if p == 2:
            band_edges = [1.0, 1.35, 1.75]
        else:
            band_edges = np.linspace(1.0, 1.75, p + 1).tolist()
    if len(band_edges) != p + 1:
        raise ContractViolationError(f"need {p + 1} band edges, got {len(band_edges)}")

    ranges = []
    for l in range(p):
        lo, hi = band_edges[l], band_edges[l + 1]
        sub = np.linspace(lo, hi, n_groups + 1)
        for g in range(n_groups):
            ranges.append((float(sub[g]), float(sub[g + 1]), 2 * m))
    n_ff_rows = p if feedforward else 0
    ff_width = band_edges[-1] - band_edges[-2]
    for l in range(n_ff_rows):
        lo = band_edges[-1] + l * ff_width
        ranges.append((lo, lo + ff_width, 2 * m))

    scheduled = make_frequency_schedule(omega0, 2 * m * (p * n_groups + n_ff_rows), ranges)
    bands = scheduled.reshape(p * n_groups + n_ff_rows, 2 * m)

    freqs = np.empty(2 * m * (p * n + n_ff_rows))
    phases: list[str] = []
    idx = 0
    for l in range(p):
        for q in range(n):
            band = bands[l * n_groups + q // 2]
            phase = PHASE_COS if q % 2 == 0 else PHASE_SIN
            for f in range(2 * m):
                pair, is_sin = divmod(f, 2)
                freqs[idx] = band[pair] if not is_sin else band[m + pair]
                phases.append(phase)
                idx += 1
    for l in range(n_ff_rows):
        band = bands[p * n_groups + l]
        for f in range(2 * m):
            pair, is_sin = divmod(f, 2)
            freqs[idx] = band[pair] if not is_sin else band[m + pair]
            phases.append(PHASE_COS)
            idx += 1
    return freqs, tuple(phases)


class _GainCostSource:
    def __init__(self, scenario: Scenario, delta: float):
        self.scenario = scenario
        self.delta = delta

    def measure(self, flat: np.ndarray, s: int) -> tuple[float, float]:
        from .scenario import run_multi_episode

        field = GainField.from_flat(flat, self.scenario.basis,
                                    self.scenario.state_dim, self.scenario.control_dim,
                                    feedforward=self.scenario.feedforward)
        t = self.scenario.slow_time_for(s, self.delta)
        res = run_multi_episode(self.scenario, field, slow_time=t, noise_index=s)
        return res.total_cost, res.measured_total_cost


def _check_initial_conditions(scenario: Scenario):
    n = scenario.state_dim
    stacked = np.stack(scenario.initial_conditions) \
        if scenario.initial_conditions else np.zeros((0, n))
    if scenario.feedforward:
        # -K x + V is only separable when the [x0; 1] vectors span R^(n+1):
        # with fewer starts a continuum of (K, V) pairs matches the training
        # trajectories and the learned field cannot generalize
        needed = n + 1
        stacked = np.hstack([stacked, np.ones((stacked.shape[0], 1))]) \
            if stacked.size else stacked
    else:
        needed = n
    if len(scenario.initial_conditions) != needed:
        raise IllPosedSynthesisError(
            f"gain synthesis needs exactly {needed} initial conditions "
            f"({'state dimension + 1 for the feedforward term' if scenario.feedforward else 'one per state dimension'}), "
            f"got {len(scenario.initial_conditions)}"
        )
    smallest = np.linalg.svd(stacked, compute_uv=False).min()
    if smallest <= 1e-8:
        raise IllPosedSynthesisError(
            f"initial conditions are {'affinely' if scenario.feedforward else 'linearly'} "
            f"dependent (smallest singular value {smallest:.3e})"
        )


def synthesize_gain(scenario: Scenario, config: EsConfig | None = None,
                    n_iterations: int | None = None) -> tuple[GainField, EsRunRecord]:
    """ES over all gain-field coefficients against the summed multi-episode cost.

    Returns the converged field (coefficients averaged over the last
    slowest-dither period, removing the residual dither ripple) and the
    full run record.
    """
    if not isinstance(scenario.dynamics, LinearDynamics) or \
            not isinstance(scenario.cost, QuadraticCost):
        raise ContractViolationError("gain synthesis requires linear dynamics "
                                     "and a quadratic cost")
    _check_initial_conditions(scenario)
    m = getattr(scenario.basis, "m", None)
    if m is None:
        raise ContractViolationError("gain synthesis requires a fourier-pairs basis")

    es = scenario.es_defaults
    if config is None:
        freqs, phases = gain_dither_assignment(
            es["omega0"], m, scenario.state_dim, scenario.control_dim,
            feedforward=scenario.feedforward)
        delta = es.get("delta")
        if delta is None:
            delta = 2.0 * np.pi / (10.0 * float(freqs.max()))
        config = EsConfig(k=es["k"], alpha=es["alpha"], omega0=es["omega0"],
                          frequencies=freqs, delta=delta, phases=phases)
    if n_iterations is None:
        n_iterations = int(es.get("n_iterations", 1000))

    source = _GainCostSource(scenario, config.delta)
    record = run_es(source, config, n_iterations, scenario_id=scenario.name)
    field = GainField.from_flat(record.period_averaged_coefficients(),
                                scenario.basis, scenario.state_dim,
                                scenario.control_dim,
                                feedforward=scenario.feedforward)
    return field, record


def project_gains(riccati: RiccatiSolution, basis: Basis, grid: TimeGrid,
                  include_feedforward: bool = False) -> GainField:
    """Least-squares fit of the oracle K(tau) (and feedforward) onto the basis.

    The fit is over the grid nodes; its closed-loop cost lower-bounds what
    any ES run in the same basis can reach, up to the dither residual.
    """
    phi = basis.eval_matrix(grid.nodes())
    p, n = riccati.gains.shape[1], riccati.gains.shape[2]
    gain_coeffs = np.empty((p, n, basis.n_functions))
    for l in range(p):
        for q in range(n):
            coeffs, *_ = np.linalg.lstsq(phi, riccati.gains[:, l, q], rcond=None)
            gain_coeffs[l, q] = coeffs
    ff = None
    if include_feedforward:
        feed = np.einsum("ij,kj->ki", riccati.rinv_bt, riccati.feedforward)
        ff = np.empty((p, basis.n_functions))
        for l in range(p):
            coeffs, *_ = np.linalg.lstsq(phi, feed[:, l], rcond=None)
            ff[l] = coeffs
    return GainField(basis, n, p, gain_coeffs, ff)
