"""The extremum-seeking optimizer.

Each scalar coefficient a_j carries its own dither frequency w_j and is
updated from nothing but the latest scalar cost measurement:

    a_j(s+1) = a_j(s) + delta * sqrt(alpha * w_j) * phase(w_j * s * delta + k * J_hat(s))

with phase either cos or sin per coefficient. For fast dithers the
iteration averages to a gradient flow da/dt = -(k alpha / 2) dJ/da, which
is what the gradient-flow reference here integrates for validation.

Note the sqrt(alpha * w_j) factor makes the dither amplitude grow with
frequency, so coefficients high in a wide schedule oscillate visibly more
than low ones; that disparity is inherent to the update law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .basis import ControllerCoefficients
from .errors import (ContractViolationError, EsControlError,
                     MeasurementInvalidError, OracleDivergedError,
                     ScheduleCollisionError)
from .scenario import Scenario, run_episode, run_multi_episode

PHASE_COS = "cos"
PHASE_SIN = "sin"

_MIN_SAMPLES_PER_PERIOD = 10


def make_frequency_schedule(omega0: float, n_coeffs: int,
                            ranges: Sequence[tuple[float, float, int]]) -> np.ndarray:
    """Distinct dither frequencies omega0 * multiple, evenly spaced per range.

    Each range (low_multiple, high_multiple, count) contributes ``count``
    evenly spaced frequencies inclusive of its endpoints. When a range's
    low endpoint collides with an already generated frequency (adjacent
    bands sharing an edge), that range instead opens at the next even
    subdivision: count+1 points with the first dropped.
    """
    if omega0 <= 0:
        raise ContractViolationError(f"omega0 must be positive, got {omega0}")
    total = sum(count for _, _, count in ranges)
    if total != n_coeffs:
        raise ContractViolationError(
            f"range counts sum to {total}, expected n_coeffs={n_coeffs}"
        )
    freqs: list[float] = []
    for low, high, count in ranges:
        if low <= 0 or high < low or count < 1:
            raise ContractViolationError(f"bad schedule range ({low}, {high}, {count})")
        vals = omega0 * np.linspace(low, high, count)
        if any(v in freqs for v in vals):
            if count == 1 or high == low:
                raise ScheduleCollisionError(
                    f"range ({low}, {high}, {count}) collides with an existing frequency "
                    "and has no room to shift"
                )
            vals = omega0 * np.linspace(low, high, count + 1)[1:]
        freqs.extend(float(v) for v in vals)
    if len(set(freqs)) != len(freqs):
        raise ScheduleCollisionError(
            "generated frequencies are not pairwise distinct; adjust the ranges"
        )
    return np.array(freqs)


def default_phases(n_coeffs: int) -> tuple[str, ...]:
    """Alternating cos/sin, pairing even-index (a) coefficients with cos."""
    return tuple(PHASE_COS if i % 2 == 0 else PHASE_SIN for i in range(n_coeffs))


@dataclass(frozen=True)
class EsConfig:
    """Gains, dither schedule and step size of one ES run.

    Distinctness is enforced on (frequency, phase) pairs: two coefficients
    may share a frequency only through a cos/sin quadrature pair, which is
    how the feedback synthesis reuses each band across gain columns.
    """

    k: float
    alpha: float
    omega0: float
    frequencies: np.ndarray
    delta: float
    phases: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "frequencies",
                           np.asarray(self.frequencies, dtype=float))
        if self.k <= 0 or self.alpha <= 0 or self.omega0 <= 0:
            raise ContractViolationError("k, alpha and omega0 must all be positive")
        if self.delta < 0:
            raise ContractViolationError(f"delta must be >= 0, got {self.delta}")
        if len(self.phases) != self.frequencies.shape[0]:
            raise ContractViolationError("one phase per frequency is required")
        if any(p not in (PHASE_COS, PHASE_SIN) for p in self.phases):
            raise ContractViolationError(f"phases must be '{PHASE_COS}' or '{PHASE_SIN}'")
        pairs = list(zip(self.frequencies.tolist(), self.phases))
        if len(set(pairs)) != len(pairs):
            raise ScheduleCollisionError("(frequency, phase) pairs must be distinct")

    def validate_sampling(self):
        """Check the fastest dither is sampled densely enough for averaging.

        Inclusive bound: the default delta sits exactly on 10 samples per
        period. Enforced when a run starts; a bare es_step is fine at any
        delta (the update law itself has no sampling requirement).
        """
        if self.delta * float(self.frequencies.max()) > \
                (2.0 * np.pi / _MIN_SAMPLES_PER_PERIOD) * (1.0 + 1e-9):
            raise ContractViolationError(
                "delta too large: need at least "
                f"{_MIN_SAMPLES_PER_PERIOD} samples of the fastest dither per period"
            )

    @classmethod
    def build(cls, k: float, alpha: float, omega0: float, n_coeffs: int,
              ranges: Sequence[tuple[float, float, int]] | None = None,
              delta: float | None = None,
              phases: Sequence[str] | None = None) -> "EsConfig":
        """Assemble a config with one frequency per coefficient.

        Defaults: a single band of even spacing over [omega0, 1.75 omega0],
        delta = 2 pi / (10 max w), and alternating cos/sin phases.
        """
        if ranges is None:
            ranges = [(1.0, 1.75, n_coeffs)] if n_coeffs > 1 else [(1.0, 1.0, 1)]
        freqs = make_frequency_schedule(omega0, n_coeffs, ranges)
        if delta is None:
            delta = 2.0 * np.pi / (_MIN_SAMPLES_PER_PERIOD * float(freqs.max()))
        if phases is None:
            phases = default_phases(n_coeffs)
        return cls(k=k, alpha=alpha, omega0=omega0, frequencies=freqs,
                   delta=delta, phases=tuple(phases))

    @property
    def n_coeffs(self) -> int:
        return self.frequencies.shape[0]

    def slowest_period_steps(self) -> int:
        """Iterations spanning one period of the slowest dither."""
        if self.delta == 0.0:
            return 1
        return int(math.ceil(2.0 * np.pi / (self.delta * float(self.frequencies.min()))))

    def step_gains(self) -> np.ndarray:
        cached = self.__dict__.get("_step_gains")
        if cached is None:
            cached = self.delta * np.sqrt(self.alpha * self.frequencies)
            object.__setattr__(self, "_step_gains", cached)
        return cached

    def cos_mask(self) -> np.ndarray:
        cached = self.__dict__.get("_cos_mask")
        if cached is None:
            cached = np.array([p == PHASE_COS for p in self.phases])
            object.__setattr__(self, "_cos_mask", cached)
        return cached

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "alpha": self.alpha,
            "omega0": self.omega0,
            "delta": self.delta,
            "frequencies": [float(f) for f in self.frequencies],
            "phases": list(self.phases),
        }


def es_step(coeffs, j_hat: float, s: int, config: EsConfig):
    """One update of every coefficient from the measured cost j_hat.

    ``coeffs`` may be a flat array or ControllerCoefficients; the result has
    the same type. A non-finite measurement raises MeasurementInvalidError
    and the step is not applied (skipping silently would desynchronize the
    step index from the dither phases).
    """
    if not np.isfinite(j_hat):
        raise MeasurementInvalidError(f"measured cost at step {s} is {j_hat}")
    wrap = None
    if isinstance(coeffs, ControllerCoefficients):
        wrap = coeffs.n_channels
        flat = coeffs.flat()
    else:
        flat = np.asarray(coeffs, dtype=float)
    if flat.shape[0] != config.n_coeffs:
        raise ContractViolationError(
            f"{flat.shape[0]} coefficients but {config.n_coeffs} scheduled frequencies"
        )
    theta = config.frequencies * (s * config.delta) + config.k * j_hat
    osc = np.where(config.cos_mask(), np.cos(theta), np.sin(theta))
    new_flat = flat + config.step_gains() * osc
    if wrap is not None:
        return ControllerCoefficients.from_flat(new_flat, wrap)
    return new_flat


@dataclass(frozen=True)
class EsRunRecord:
    """Everything recorded along one ES run (s = 0 .. n_iterations)."""

    scenario_id: str
    config: EsConfig
    coefficients: np.ndarray   # (n_iterations + 1, n_coeffs)
    costs: np.ndarray          # J(s), the cost measured under coefficients(s)
    measured_costs: np.ndarray

    def __post_init__(self):
        if not (self.coefficients.shape[0] == self.costs.shape[0]
                == self.measured_costs.shape[0]):
            raise ContractViolationError("record arrays must have matching lengths")

    @property
    def n_iterations(self) -> int:
        return self.coefficients.shape[0] - 1

    def steps(self) -> np.ndarray:
        return np.arange(self.coefficients.shape[0])

    def times(self) -> np.ndarray:
        return self.steps() * self.config.delta

    def final_window(self) -> int:
        """Rows in the convergence-statistic window (one slowest-dither period)."""
        return min(self.config.slowest_period_steps(), self.coefficients.shape[0])

    def period_averaged_cost(self) -> float:
        """Mean J over the last slowest-dither period; raw J oscillates
        persistently, so this is the convergence statistic."""
        return float(self.costs[-self.final_window():].mean())

    def period_averaged_coefficients(self) -> np.ndarray:
        """Mean coefficients over the last slowest-dither period (the
        converged controller, with the dither ripple averaged out)."""
        return self.coefficients[-self.final_window():].mean(axis=0)


class _ScenarioCostSource:
    """Adapts a Scenario to the (flat coefficients, step) -> (J, J_hat) protocol."""

    def __init__(self, scenario: Scenario, delta: float):
        self.scenario = scenario
        self.delta = delta
        self.n_channels = scenario.control_dim
        self.multi = len(scenario.initial_conditions) > 1

    def measure(self, flat: np.ndarray, s: int) -> tuple[float, float]:
        coeffs = ControllerCoefficients.from_flat(flat, self.n_channels)
        t = self.scenario.slow_time_for(s, self.delta)
        if self.multi:
            res = run_multi_episode(self.scenario, coeffs, slow_time=t, noise_index=s)
            return res.total_cost, res.measured_total_cost
        res = run_episode(self.scenario, coeffs, slow_time=t, noise_index=s)
        return res.cost, res.measured_cost


def _as_cost_source(cost_source, config: EsConfig):
    if isinstance(cost_source, Scenario):
        return _ScenarioCostSource(cost_source, config.delta)
    return cost_source


def run_es(cost_source, config: EsConfig, n_iterations: int,
           initial_coeffs=None, scenario_id: str = "") -> EsRunRecord:
    """Alternate cost measurement and es_step, recording every iterate.

    ``cost_source`` is a Scenario, an object with
    ``measure(flat, s) -> (J, J_hat)``, or a plain noise-free callable of the
    flat coefficient vector. Coefficients start at zero unless given.
    """
    if n_iterations < 1:
        raise ContractViolationError(f"n_iterations must be >= 1, got {n_iterations}")
    config.validate_sampling()
    source = _as_cost_source(cost_source, config)
    if callable(source) and not hasattr(source, "measure"):
        fn = source

        class _CallableSource:
            @staticmethod
            def measure(flat, s):
                j = float(fn(flat))
                return j, j

        source = _CallableSource()
    if isinstance(cost_source, Scenario) and not scenario_id:
        scenario_id = cost_source.name

    if initial_coeffs is None:
        flat = np.zeros(config.n_coeffs)
    elif isinstance(initial_coeffs, ControllerCoefficients):
        flat = initial_coeffs.flat()
    else:
        flat = np.asarray(initial_coeffs, dtype=float).copy()

    n_coeffs = flat.shape[0]
    coeff_hist = np.empty((n_iterations + 1, n_coeffs))
    costs = np.empty(n_iterations + 1)
    measured = np.empty(n_iterations + 1)
    for s in range(n_iterations + 1):
        coeff_hist[s] = flat
        try:
            j, j_hat = source.measure(flat, s)
            costs[s] = j
            measured[s] = j_hat
            if s < n_iterations:
                flat = es_step(flat, j_hat, s, config)
        except EsControlError as exc:
            try:
                wrapped = type(exc)(f"ES iteration s={s}: {exc}")
            except TypeError:
                raise
            raise wrapped from exc
    return EsRunRecord(scenario_id=scenario_id, config=config,
                       coefficients=coeff_hist, costs=costs, measured_costs=measured)


def finite_diff_gradient(cost_fn: Callable[[np.ndarray], float], point,
                         h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient, one coordinate at a time."""
    if h <= 0:
        raise ContractViolationError(f"finite-difference step must be positive, got {h}")
    point = np.asarray(point, dtype=float)
    grad = np.empty_like(point)
    for i in range(point.shape[0]):
        bump = np.zeros_like(point)
        bump[i] = h
        grad[i] = (float(cost_fn(point + bump)) - float(cost_fn(point - bump))) / (2.0 * h)
    if not np.all(np.isfinite(grad)):
        raise MeasurementInvalidError("finite-difference gradient is not finite")
    return grad


def gradient_flow_reference(cost_fn: Callable[[np.ndarray], float], a0,
                            kalpha: float, duration: float, step: float,
                            fd_h: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Integrate the averaged system da/dt = -(k alpha / 2) dJ/da (RK4).

    Test oracle only. ``step`` must be small against the cost curvature
    (step * ||Hessian|| < 0.1 keeps RK4 comfortably stable). Returns
    (times, path) with path[0] = a0.
    """
    a = np.atleast_1d(np.asarray(a0, dtype=float)).copy()
    n = max(1, int(round(duration / step)))
    times = np.arange(n + 1) * step
    path = np.empty((n + 1, a.shape[0]))
    path[0] = a
    scale = -0.5 * kalpha
    bound = 1e8 * (1.0 + float(np.linalg.norm(a)))

    def rate(v):
        try:
            return scale * finite_diff_gradient(cost_fn, v, h=fd_h)
        except MeasurementInvalidError as exc:
            raise OracleDivergedError(f"gradient flow diverged: {exc}") from exc

    for i in range(n):
        k1 = rate(a)
        k2 = rate(a + 0.5 * step * k1)
        k3 = rate(a + 0.5 * step * k2)
        k4 = rate(a + step * k3)
        a = a + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(a)) or np.linalg.norm(a) > bound:
            raise OracleDivergedError(f"gradient flow diverged at t={times[i + 1]}")
        path[i + 1] = a
    return times, path


@dataclass(frozen=True)
class QuadraticCostModel:
    """Exact quadratic model J(c) = 1/2 c' H c + g' c + j0."""

    hessian: np.ndarray
    gradient0: np.ndarray
    j0: float

    def __call__(self, c: np.ndarray) -> float:
        c = np.asarray(c, dtype=float)
        return float(0.5 * c @ self.hessian @ c + self.gradient0 @ c + self.j0)

    def minimizer(self) -> np.ndarray:
        return np.linalg.solve(self.hessian, -self.gradient0)

    def minimum(self) -> float:
        return self(self.minimizer())


def assemble_quadratic_cost(cost_fn: Callable[[np.ndarray], float],
                            dim: int) -> QuadraticCostModel:
    """Recover the exact quadratic form of a cost by probing it.

    Probes J at 0, +-e_i and e_i + e_j (1 + 2 dim + dim (dim - 1) / 2
    evaluations). A final random probe verifies the model reproduces the
    cost, which guards against calling this on a non-quadratic cost.
    """
    e = np.eye(dim)
    j0 = float(cost_fn(np.zeros(dim)))
    j_plus = np.array([float(cost_fn(e[i])) for i in range(dim)])
    j_minus = np.array([float(cost_fn(-e[i])) for i in range(dim)])
    g = 0.5 * (j_plus - j_minus)
    h = np.empty((dim, dim))
    np.fill_diagonal(h, j_plus + j_minus - 2.0 * j0)
    for i in range(dim):
        for j in range(i + 1, dim):
            jij = float(cost_fn(e[i] + e[j]))
            h[i, j] = h[j, i] = jij - j_plus[i] - j_plus[j] + j0
    model = QuadraticCostModel(hessian=h, gradient0=g, j0=j0)
    rng = np.random.default_rng(12345)
    probe = rng.standard_normal(dim)
    actual = float(cost_fn(probe))
    if abs(actual - model(probe)) > 1e-7 * max(1.0, abs(actual), abs(j0)):
        raise ContractViolationError(
            "cost is not quadratic in the coefficients; the quadratic-form "
            "oracle only applies to linear dynamics with quadratic cost"
        )
    return model


def restricted_optimum(scenario: Scenario, slow_time: float = 0.0):
    """Best achievable (coefficients, cost) inside the scenario's basis.

    Exact for linear dynamics with quadratic cost, where the episode cost is
    an explicit convex quadratic in the coefficient vector. This is the
    reference for every ES convergence test.
    """
    from .scenario import episode_cost_fn

    dim = scenario.control_dim * scenario.basis.n_functions
    model = assemble_quadratic_cost(episode_cost_fn(scenario, slow_time), dim)
    c_star = model.minimizer()
    return c_star, model.minimum(), model
