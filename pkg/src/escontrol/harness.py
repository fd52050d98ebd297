"""Scenario loading, experiment orchestration and artifact emission.

Scenario files are YAML with a fixed schema (see the shipped ``*.scn``
files). Matrices are numbers or nested lists; time-varying entries and
references are expression strings in ``t`` (slow time) or ``tau`` (fast
time) over a small whitelisted namespace (sin, cos, exp, sqrt, pi, ...).

All artifacts are CSV plus one summary.json; float cells are written with
``repr`` (shortest round-trip), so identical runs produce byte-identical
files.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

from .basis import ControllerCoefficients, FourierPairsBasis
from .errors import (ContractViolationError, ScenarioParseError,
                     ScenarioValidationError)
from .es import EsConfig, EsRunRecord, run_es
from .feedback import GainField, synthesize_gain
from .lqr import oracle_costs, scenario_oracle
from .ode import TimeGrid
from .scenario import (LinearDynamics, NoiseModel, QuadraticCost, Scenario,
                       run_episode)

OUTPUT_DIR_ENV = "ESCONTROL_OUTPUT_DIR"

MODES = ("open-loop-es", "feedback-es", "oracle-only", "compare")

_EXPR_NAMESPACE = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
    "sqrt": np.sqrt, "log": np.log, "tanh": np.tanh, "abs": np.abs,
    "pi": np.pi, "e": np.e,
}


def compile_expression(expr: str, var: str) -> Callable[[float], float]:
    """Compile a whitelisted arithmetic expression of one variable."""
    try:
        code = compile(expr, f"<{var}-expression>", "eval")
    except SyntaxError as exc:
        raise ScenarioParseError(f"bad expression {expr!r}: {exc}") from exc
    unknown = set(code.co_names) - set(_EXPR_NAMESPACE) - {var}
    if unknown:
        raise ScenarioParseError(
            f"expression {expr!r} uses unknown names {sorted(unknown)}"
        )

    def fn(value):
        return eval(code, {"__builtins__": {}}, {**_EXPR_NAMESPACE, var: value})

    return fn


def _matrix_fn(value, var: str):
    """A scenario matrix entry: number, expression string, or nested lists."""
    if isinstance(value, (int, float)):
        const = np.array([[float(value)]])
        return (lambda t: const), const.shape, True
    if isinstance(value, str):
        f = compile_expression(value, var)
        return (lambda t: np.array([[float(f(t))]])), (1, 1), False
    rows = value
    if not isinstance(rows, list) or not rows or not isinstance(rows[0], list):
        raise ScenarioParseError(f"matrix must be a number, string, or nested list, "
                                 f"got {value!r}")
    shape = (len(rows), len(rows[0]))
    if any(len(r) != shape[1] for r in rows):
        raise ScenarioParseError("matrix rows have inconsistent lengths")
    if all(isinstance(x, (int, float)) for r in rows for x in r):
        const = np.array(rows, dtype=float)
        return (lambda t: const), shape, True
    fns = [[compile_expression(x, var) if isinstance(x, str) else (lambda t, v=float(x): v)
            for x in r] for r in rows]

    def fn(t):
        return np.array([[float(f(t)) for f in row] for row in fns])

    return fn, shape, False


def _reference_fn(value):
    """Reference r(tau): expression string or list of strings/numbers."""
    if value is None:
        return None
    entries = value if isinstance(value, list) else [value]
    fns = [compile_expression(x, "tau") if isinstance(x, str)
           else (lambda tau, v=float(x): v) for x in entries]

    def fn(tau):
        return np.array([f(tau) for f in fns], dtype=float)

    return fn


def _require(config: dict, key: str, context: str):
    if key not in config:
        raise ScenarioValidationError(f"{context} is missing required key {key!r}")
    return config[key]


def build_scenario(config: dict, name: str | None = None) -> Scenario:
    """Validated Scenario from a parsed scenario-file dictionary."""
    name = name or config.get("name", "scenario")
    dyn_cfg = _require(config, "dynamics", "scenario")
    kind = dyn_cfg.get("kind", "linear")
    if kind != "linear":
        raise ScenarioValidationError(
            f"scenario files only declare linear dynamics, got kind={kind!r}; "
            "general dynamics are constructed through the API"
        )
    a_fn, a_shape, a_const = _matrix_fn(_require(dyn_cfg, "a", "dynamics"), "t")
    b_fn, b_shape, b_const = _matrix_fn(_require(dyn_cfg, "b", "dynamics"), "t")
    if a_shape[0] != a_shape[1]:
        raise ScenarioValidationError(f"A must be square, got {a_shape}")
    if b_shape[0] != a_shape[0]:
        raise ScenarioValidationError(
            f"B rows ({b_shape[0]}) must match the state dimension ({a_shape[0]})"
        )
    dynamics = LinearDynamics(a_fn=a_fn, b_fn=b_fn,
                              state_dim=a_shape[0], control_dim=b_shape[1])

    cost_cfg = _require(config, "cost", "scenario")
    cost = QuadraticCost(
        c_matrix=np.atleast_2d(cost_cfg.get("c", np.eye(a_shape[0]).tolist())),
        p_matrix=np.atleast_2d(_require(cost_cfg, "p", "cost")),
        q_matrix=np.atleast_2d(_require(cost_cfg, "q", "cost")),
        r_matrix=np.atleast_2d(_require(cost_cfg, "r", "cost")),
        reference=_reference_fn(cost_cfg.get("reference")),
        terminal_indefinite_ok=bool(cost_cfg.get("allow_indefinite_terminal", False)),
    )

    grid_cfg = _require(config, "grid", "scenario")
    grid = TimeGrid(t_start=float(grid_cfg.get("t_start", 0.0)),
                    t_end=float(_require(grid_cfg, "t_end", "grid")),
                    n_steps=int(grid_cfg.get("n_steps", 1000)))

    basis_cfg = _require(config, "basis", "scenario")
    extension = basis_cfg.get("extension", 0.1 * grid.span)
    basis = FourierPairsBasis(m=int(_require(basis_cfg, "m", "basis")),
                              horizon=grid.span, extension=float(extension))

    ics_raw = _require(config, "initial_conditions", "scenario")
    ics = [np.atleast_1d(np.asarray(x, dtype=float)) for x in ics_raw]

    noise_cfg = config.get("noise", {})
    noise = NoiseModel(std_dev=float(noise_cfg.get("std_dev", 0.0)),
                       seed=int(noise_cfg.get("seed", 0)))

    return Scenario(
        name=name,
        dynamics=dynamics,
        cost=cost,
        grid=grid,
        basis=basis,
        initial_conditions=ics,
        noise=noise,
        batch_period=(float(config["batch_period"])
                      if config.get("batch_period") is not None else None),
        feedback=bool(config.get("feedback", False)),
        feedforward=bool(config.get("feedforward", False)),
        es_defaults=dict(config.get("es", {})),
        raw_config=normalize_config(config, name),
    )


def normalize_config(config: dict, name: str | None = None) -> dict:
    """Canonical plain-data form of a scenario config (round-trip stable)."""
    out = json.loads(json.dumps(config))  # deep copy, YAML scalars only
    out["name"] = name or config.get("name", "scenario")
    out.setdefault("noise", {"std_dev": 0.0, "seed": 0})
    out["noise"].setdefault("std_dev", 0.0)
    out["noise"].setdefault("seed", 0)
    out.setdefault("feedback", False)
    out.setdefault("feedforward", False)
    out.setdefault("batch_period", None)
    out["grid"].setdefault("t_start", 0.0)
    out["grid"].setdefault("n_steps", 1000)
    return out


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario file {path}: {exc}") from exc
    try:
        config = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f" (line {mark.line + 1})" if mark is not None else ""
        raise ScenarioParseError(f"{path}{line}: {exc}") from exc
    if not isinstance(config, dict):
        raise ScenarioParseError(f"{path}: scenario file must be a mapping")
    try:
        return build_scenario(config, name=config.get("name", path.stem))
    except ScenarioValidationError as exc:
        raise ScenarioValidationError(f"{path}: {exc}") from exc


def save_scenario(scenario: Scenario, path) -> None:
    if scenario.raw_config is None:
        raise ContractViolationError("scenario was not built from a config; "
                                     "nothing to serialize")
    Path(path).write_text(yaml.safe_dump(scenario.raw_config, sort_keys=True))


def scenarios_dir() -> Path:
    return Path(__file__).parent / "scenarios"


def shipped_scenarios() -> list[Path]:
    return sorted(scenarios_dir().glob("*.scn"))


def apply_overrides(config: dict, overrides: dict[str, str]) -> dict:
    """Apply dotted-path overrides with YAML-parsed values."""
    for dotted, raw_value in overrides.items():
        value = yaml.safe_load(raw_value) if isinstance(raw_value, str) else raw_value
        target = config
        parts = dotted.split(".")
        for part in parts[:-1]:
            if part not in target or not isinstance(target[part], dict):
                target[part] = {}
            target = target[part]
        target[parts[-1]] = value
    return config


# --- experiment orchestration ----------------------------------------------


@dataclass
class ExperimentSpec:
    scenario_path: str
    mode: str | None = None
    n_iterations: int | None = None
    seed: int | None = None
    out_dir: str | None = None
    overrides: dict[str, str] = field(default_factory=dict)


@dataclass
class RunSummary:
    scenario: str
    mode: str
    final_period_averaged_cost: float | None
    oracle_cost: float | None
    relative_gap: float | None
    iterations: int | None
    wall_time_s: float
    seed: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def es_config_for(scenario: Scenario) -> EsConfig:
    """EsConfig for an open-loop run, from the scenario's tuned es section."""
    es = scenario.es_defaults
    for key in ("k", "alpha", "omega0"):
        if key not in es:
            raise ScenarioValidationError(
                f"scenario {scenario.name!r} has no tuned es.{key}"
            )
    n_coeffs = scenario.control_dim * scenario.basis.n_functions
    ranges = es.get("ranges")
    if ranges is not None:
        ranges = [tuple(r) for r in ranges]
    return EsConfig.build(k=float(es["k"]), alpha=float(es["alpha"]),
                          omega0=float(es["omega0"]), n_coeffs=n_coeffs,
                          ranges=ranges, delta=es.get("delta"),
                          phases=es.get("phases"))


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def write_iterations_csv(path: Path, record: EsRunRecord) -> None:
    """One row per iteration: s, t = s*delta, J, J_hat, then coefficients
    (channel-major, interleaved cos/sin per pair)."""
    n_coeffs = record.coefficients.shape[1]
    header = ["s", "t", "J", "J_hat"] + [f"c_{i:03d}" for i in range(n_coeffs)]
    times = record.times()

    def rows():
        for s in range(record.coefficients.shape[0]):
            yield [s, times[s], record.costs[s], record.measured_costs[s],
                   *record.coefficients[s]]

    write_csv(path, header, rows())


def _write_trajectories_csv(path: Path, scenario: Scenario, record: EsRunRecord) -> None:
    """First/last-iteration episodes (closed loop from the first initial
    condition when the record is a gain-synthesis run)."""
    from .feedback import run_feedback_episode

    taus = scenario.grid.nodes()
    header = (["phase", "s", "tau"]
              + [f"x_{i}" for i in range(scenario.state_dim)]
              + [f"u_{i}" for i in range(scenario.control_dim)])

    def episode_rows(phase: str, s: int):
        t = scenario.slow_time_for(s, record.config.delta)
        if scenario.feedback:
            field_ = GainField.from_flat(record.coefficients[s], scenario.basis,
                                         scenario.state_dim, scenario.control_dim,
                                         feedforward=scenario.feedforward)
            res = run_feedback_episode(scenario, field_,
                                       scenario.initial_conditions[0], slow_time=t)
        else:
            coeffs = ControllerCoefficients.from_flat(record.coefficients[s],
                                                      scenario.control_dim)
            res = run_episode(scenario, coeffs, slow_time=t, noise_index=s)
        for k in range(taus.shape[0]):
            yield [phase, s, taus[k], *res.trajectory.states[k], *res.controls[k]]

    def rows():
        yield from episode_rows("first", 0)
        yield from episode_rows("last", record.n_iterations)

    write_csv(path, header, rows())


def _write_oracle_csv(path: Path, scenario: Scenario, riccati) -> None:
    taus = scenario.grid.nodes()
    p, n = riccati.gains.shape[1], riccati.gains.shape[2]
    header = (["tau"]
              + [f"k_{l + 1}_{q + 1}" for l in range(p) for q in range(n)]
              + [f"v_{i + 1}" for i in range(n)])

    def rows():
        for idx in range(taus.shape[0]):
            yield [taus[idx], *riccati.gains[idx].ravel(), *riccati.feedforward[idx]]

    write_csv(path, header, rows())


def _write_gains_csv(path: Path, scenario: Scenario, field_: GainField,
                     riccati) -> None:
    taus = scenario.grid.nodes()
    phi = scenario.basis_matrix_nodes()
    k_samples = field_.gain_samples(phi)
    p, n = field_.control_dim, field_.state_dim
    header = ["tau"] + [f"k_{l + 1}_{q + 1}" for l in range(p) for q in range(n)]
    blocks = [k_samples.reshape(taus.shape[0], -1)]
    if field_.has_feedforward:
        header += [f"v_{l + 1}" for l in range(p)]
        blocks.append(field_.feedforward_samples(phi))
    if riccati is not None:
        header += [f"oracle_k_{l + 1}_{q + 1}" for l in range(p) for q in range(n)]
        blocks.append(riccati.gains.reshape(taus.shape[0], -1))
        if field_.has_feedforward:
            header += [f"oracle_v_{l + 1}" for l in range(p)]
            blocks.append(np.einsum("ij,kj->ki", riccati.rinv_bt, riccati.feedforward))
    data = np.hstack([taus[:, None]] + blocks)
    write_csv(path, header, data)


def _resolve_out_dir(spec: ExperimentSpec, scenario_name: str, mode: str) -> Path:
    if spec.out_dir:
        out = Path(spec.out_dir)
    else:
        base = Path(os.environ.get(OUTPUT_DIR_ENV, "runs"))
        out = base / f"{scenario_name}-{mode}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _oracle_info(scenario: Scenario, slow_time: float):
    """(riccati, total J*, per-IC J*) or (None, None, None) when no oracle applies."""
    if not isinstance(scenario.dynamics, LinearDynamics) or \
            not isinstance(scenario.cost, QuadraticCost):
        return None, None, None
    riccati = scenario_oracle(scenario, slow_time)
    per_ic = oracle_costs(scenario, slow_time, riccati)
    return riccati, float(sum(per_ic)), per_ic


def run_experiment(spec: ExperimentSpec) -> RunSummary:
    """Dispatch one experiment and write its artifact files.

    Artifacts: iterations.csv (ES modes), trajectory.csv (open-loop modes),
    gains.csv (feedback mode), oracle.csv (oracle/compare modes) and
    summary.json always.
    """
    started = time.perf_counter()
    path = Path(spec.scenario_path)
    try:
        config = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ScenarioParseError(f"{path}: {exc}") from exc
    if spec.overrides:
        config = apply_overrides(config, spec.overrides)
    if spec.seed is not None:
        config.setdefault("noise", {})["seed"] = int(spec.seed)
    scenario = build_scenario(config, name=config.get("name", path.stem))

    mode = spec.mode or ("feedback-es" if scenario.feedback else "open-loop-es")
    if mode not in MODES:
        raise ContractViolationError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "feedback-es" and len(scenario.initial_conditions) < scenario.state_dim:
        raise ScenarioValidationError(
            f"feedback-es needs at least {scenario.state_dim} initial conditions"
        )
    out_dir = _resolve_out_dir(spec, scenario.name, mode)

    extras: dict = {}
    record = None
    j_avg = None
    oracle_total = None

    if mode == "oracle-only":
        riccati, oracle_total, per_ic = _oracle_info(scenario, 0.0)
        if riccati is None:
            raise ContractViolationError(
                "oracle-only mode requires linear dynamics and a quadratic cost"
            )
        _write_oracle_csv(out_dir / "oracle.csv", scenario, riccati)
        extras["oracle_costs_per_initial_condition"] = per_ic
        iterations = None
    elif mode == "feedback-es":
        field_, record = synthesize_gain(scenario, n_iterations=spec.n_iterations)
        iterations = record.n_iterations
        j_avg = record.period_averaged_cost()
        slow_final = scenario.slow_time_for(iterations, record.config.delta)
        riccati, oracle_total, per_ic = _oracle_info(scenario, slow_final)
        write_iterations_csv(out_dir / "iterations.csv", record)
        _write_trajectories_csv(out_dir / "trajectory.csv", scenario, record)
        _write_gains_csv(out_dir / "gains.csv", scenario, field_, riccati)
        extras["oracle_costs_per_initial_condition"] = per_ic
        extras["es_config"] = record.config.to_dict()
    else:  # open-loop-es / compare
        es_cfg = es_config_for(scenario)
        iterations = spec.n_iterations or int(scenario.es_defaults.get("n_iterations", 1000))
        record = run_es(scenario, es_cfg, iterations)
        j_avg = record.period_averaged_cost()
        slow_final = scenario.slow_time_for(iterations, es_cfg.delta)
        riccati, oracle_total, per_ic = _oracle_info(scenario, slow_final)
        write_iterations_csv(out_dir / "iterations.csv", record)
        _write_trajectories_csv(out_dir / "trajectory.csv", scenario, record)
        if mode == "compare" and riccati is not None:
            _write_oracle_csv(out_dir / "oracle.csv", scenario, riccati)
        extras["oracle_costs_per_initial_condition"] = per_ic
        extras["es_config"] = record.config.to_dict()

    gap = None
    if j_avg is not None and oracle_total is not None and oracle_total > 0:
        gap = (j_avg - oracle_total) / oracle_total

    summary = RunSummary(
        scenario=scenario.name,
        mode=mode,
        final_period_averaged_cost=j_avg,
        oracle_cost=oracle_total,
        relative_gap=gap,
        iterations=iterations,
        wall_time_s=time.perf_counter() - started,
        seed=scenario.noise.seed,
    )
    payload = summary.to_dict()
    payload["scenario_path"] = str(path)
    payload["coefficient_order"] = (
        "channel-major; within a channel interleaved per pair: "
        "cos_1, sin_1, cos_2, sin_2, ...; feedback mode flattens gain entries "
        "row-major (k_1_1, k_1_2, ..., then feedforward rows)"
    )
    payload.update(extras)
    payload["resolved_scenario"] = scenario.raw_config
    (out_dir / "summary.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    return summary
