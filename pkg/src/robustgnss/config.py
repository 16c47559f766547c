"""Declarative run configuration: one JSON file with sections, plus dotted
--set overrides. Parse errors always name the offending key."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigError, InvalidSpecError, RobustGnssError
from .estimator import BetweenOptions, EstimatorOptions
from .graph import SolverConfig
from .kernels import RobustConfig, Scheme
from .simulate import (
    MAX_FAULT_PROBABILITY,
    ClockModel,
    FaultSpec,
    SatelliteSpec,
    ScenarioSpec,
    TrajectorySpec,
    default_constellation,
)

_SCHEME_NAMES = tuple(s.value for s in Scheme)


@dataclass(frozen=True)
class SweepConfig:
    schemes: tuple[str, ...] = _SCHEME_NAMES
    p_grid: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(10))
    trials: int = 10
    base_seed: int | None = None

    def robust_configs(self, base: RobustConfig) -> list[RobustConfig]:
        """One RobustConfig per sweep scheme, sharing the base parameters."""
        from dataclasses import replace
        return [replace(base, scheme=Scheme(name)) for name in self.schemes]


@dataclass(frozen=True)
class IoConfig:
    observations: str = "observations.jsonl"
    truth: str = "truth.csv"
    faults: str = "faults.csv"
    output_dir: str = "out"


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    fault: FaultSpec = field(default_factory=FaultSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    robust: RobustConfig = field(default_factory=RobustConfig)
    estimator: EstimatorOptions = field(default_factory=EstimatorOptions)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    io: IoConfig = field(default_factory=IoConfig)

    def sweep_base_seed(self) -> int:
        return self.sweep.base_seed if self.sweep.base_seed is not None else self.scenario.seed

    def to_dict(self) -> dict:
        return {
            "scenario": _scenario_to_dict(self.scenario),
            "fault": {
                "probability": self.fault.probability,
                "sigma_m": self.fault.sigma_m,
                "seed": self.fault.seed,
            },
            "solver": {
                "max_iterations": self.solver.max_iterations,
                "initial_lambda": self.solver.initial_lambda,
                "lambda_up": self.solver.lambda_up,
                "lambda_down": self.solver.lambda_down,
                "relative_error_tol": self.solver.relative_error_tol,
                "absolute_error_tol": self.solver.absolute_error_tol,
            },
            "robust": self.robust.to_dict(),
            "estimator": self.estimator.to_dict(),
            "sweep": {
                "schemes": list(self.sweep.schemes),
                "p_grid": list(self.sweep.p_grid),
                "trials": self.sweep.trials,
                "base_seed": self.sweep.base_seed,
            },
            "io": {
                "observations": self.io.observations,
                "truth": self.io.truth,
                "faults": self.io.faults,
                "output_dir": self.io.output_dir,
            },
        }


def _scenario_to_dict(s: ScenarioSpec) -> dict:
    constellation = []
    for sat in s.constellation:
        if sat.position is not None:
            constellation.append({"sat_id": sat.sat_id, "position": list(sat.position)})
        else:
            constellation.append({
                "sat_id": sat.sat_id,
                "azimuth_deg": sat.azimuth_deg,
                "elevation_deg": sat.elevation_deg,
                "range_m": sat.range_m,
            })
    traj: dict = {"kind": s.trajectory.kind, "position": list(s.trajectory.position)}
    if s.trajectory.kind == "constant_velocity":
        traj["velocity"] = list(s.trajectory.velocity)
    if s.trajectory.kind == "waypoints":
        traj["waypoints"] = [list(w) for w in s.trajectory.waypoints]
    return {
        "duration_s": s.duration_s,
        "rate_hz": s.rate_hz,
        "trajectory": traj,
        "constellation": constellation,
        "noise_sigma_m": s.noise_sigma_m,
        "true_zenith_tropo_m": s.true_zenith_tropo_m,
        "clock": {
            "initial_m": s.clock.initial_m,
            "drift_m_per_s": s.clock.drift_m_per_s,
            "random_walk_m_sqrt_s": s.clock.random_walk_m_sqrt_s,
        },
        "elevation_mask_deg": s.elevation_mask_deg,
        "seed": s.seed,
    }


def _check_keys(section: dict, allowed: set[str], path: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown key")


def _build(path: str, constructor, **kwargs):
    try:
        return constructor(**kwargs)
    except (InvalidSpecError, RobustGnssError, ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _parse_trajectory(raw: dict) -> TrajectorySpec:
    _check_keys(raw, {"kind", "position", "velocity", "waypoints"}, "scenario.trajectory")
    kwargs: dict = {"kind": raw.get("kind", "static")}
    if "position" in raw:
        kwargs["position"] = tuple(float(v) for v in raw["position"])
    if "velocity" in raw:
        kwargs["velocity"] = tuple(float(v) for v in raw["velocity"])
    if "waypoints" in raw:
        kwargs["waypoints"] = tuple(tuple(float(v) for v in w) for w in raw["waypoints"])
    return _build("scenario.trajectory", TrajectorySpec, **kwargs)


def _parse_constellation(raw) -> tuple[SatelliteSpec, ...]:
    if raw == "default":
        return default_constellation()
    if not isinstance(raw, list):
        raise ConfigError("scenario.constellation", "expected 'default' or a list")
    sats = []
    for i, entry in enumerate(raw):
        path = f"scenario.constellation[{i}]"
        _check_keys(entry, {"sat_id", "azimuth_deg", "elevation_deg", "range_m", "position"}, path)
        kwargs = {"sat_id": str(entry.get("sat_id", f"G{i + 1:02d}"))}
        if "position" in entry:
            kwargs["position"] = tuple(float(v) for v in entry["position"])
        for name in ("azimuth_deg", "elevation_deg", "range_m"):
            if name in entry:
                kwargs[name] = float(entry[name])
        sats.append(_build(path, SatelliteSpec, **kwargs))
    return tuple(sats)


def _parse_scenario(raw: dict) -> ScenarioSpec:
    _check_keys(raw, {"duration_s", "rate_hz", "trajectory", "constellation", "noise_sigma_m",
                      "true_zenith_tropo_m", "clock", "elevation_mask_deg", "seed"}, "scenario")
    kwargs: dict = {}
    for name in ("duration_s", "rate_hz", "noise_sigma_m", "true_zenith_tropo_m",
                 "elevation_mask_deg"):
        if name in raw:
            try:
                kwargs[name] = float(raw[name])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"scenario.{name}", str(exc)) from exc
    if "seed" in raw:
        kwargs["seed"] = _parse_seed(raw["seed"], "scenario.seed")
    if "trajectory" in raw:
        kwargs["trajectory"] = _parse_trajectory(raw["trajectory"])
    if "constellation" in raw:
        kwargs["constellation"] = _parse_constellation(raw["constellation"])
    if "clock" in raw:
        _check_keys(raw["clock"], {"initial_m", "drift_m_per_s", "random_walk_m_sqrt_s"},
                    "scenario.clock")
        kwargs["clock"] = _build("scenario.clock", ClockModel,
                                 **{k: float(v) for k, v in raw["clock"].items()})
    return _build("scenario", ScenarioSpec, **kwargs)


def _parse_seed(value, path: str) -> int:
    try:
        seed = int(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc
    if not 0 <= seed < 2 ** 64:
        raise ConfigError(path, "seed must fit in an unsigned 64-bit integer")
    return seed


def _parse_fault(raw: dict) -> FaultSpec:
    _check_keys(raw, {"probability", "sigma_m", "seed"}, "fault")
    kwargs: dict = {}
    if "probability" in raw:
        kwargs["probability"] = float(raw["probability"])
    if "sigma_m" in raw:
        kwargs["sigma_m"] = float(raw["sigma_m"])
    if "seed" in raw:
        kwargs["seed"] = _parse_seed(raw["seed"], "fault.seed")
    return _build("fault", FaultSpec, **kwargs)


def _parse_solver(raw: dict) -> SolverConfig:
    allowed = {"max_iterations", "initial_lambda", "lambda_up", "lambda_down",
               "relative_error_tol", "absolute_error_tol"}
    _check_keys(raw, allowed, "solver")
    kwargs = {}
    for name in allowed:
        if name in raw:
            kwargs[name] = int(raw[name]) if name == "max_iterations" else float(raw[name])
    return _build("solver", SolverConfig, **kwargs)


def _parse_robust(raw: dict) -> RobustConfig:
    allowed = {"scheme", "kernel_width", "switch_prior", "switch_prior_variance",
               "dcs_phi", "null_weight", "null_variance_inflation"}
    _check_keys(raw, allowed, "robust")
    kwargs: dict = {}
    if "scheme" in raw:
        if raw["scheme"] not in _SCHEME_NAMES:
            raise ConfigError("robust.scheme",
                              f"unknown scheme {raw['scheme']!r}; choose from {_SCHEME_NAMES}")
        kwargs["scheme"] = Scheme(raw["scheme"])
    for name in allowed - {"scheme", "kernel_width"}:
        if name in raw:
            kwargs[name] = float(raw[name])
    if "kernel_width" in raw and raw["kernel_width"] is not None:
        kwargs["kernel_width"] = float(raw["kernel_width"])
    return _build("robust", RobustConfig, **kwargs)


def _parse_estimator(raw: dict) -> EstimatorOptions:
    _check_keys(raw, {"elevation_mask_deg", "between"}, "estimator")
    kwargs: dict = {}
    if "elevation_mask_deg" in raw:
        kwargs["elevation_mask_deg"] = float(raw["elevation_mask_deg"])
    if "between" in raw:
        between = raw["between"]
        if between is None:
            kwargs["between"] = None
        else:
            _check_keys(between, {"position_sigma_m", "clock_sigma_m", "tropo_sigma_m"},
                        "estimator.between")
            fields = {k: (None if v is None else float(v)) for k, v in between.items()}
            kwargs["between"] = _build("estimator.between", BetweenOptions, **fields)
    return _build("estimator", EstimatorOptions, **kwargs)


def _parse_sweep(raw: dict) -> SweepConfig:
    _check_keys(raw, {"schemes", "p_grid", "trials", "base_seed"}, "sweep")
    kwargs: dict = {}
    if "schemes" in raw:
        for name in raw["schemes"]:
            if name not in _SCHEME_NAMES:
                raise ConfigError("sweep.schemes",
                                  f"unknown scheme {name!r}; choose from {_SCHEME_NAMES}")
        kwargs["schemes"] = tuple(raw["schemes"])
    if "p_grid" in raw:
        grid = tuple(float(p) for p in raw["p_grid"])
        for p in grid:
            if not 0.0 <= p <= MAX_FAULT_PROBABILITY:
                raise ConfigError(
                    "sweep.p_grid",
                    f"fault probability {p} exceeds the {MAX_FAULT_PROBABILITY} ceiling")
        kwargs["p_grid"] = grid
    if "trials" in raw:
        trials = int(raw["trials"])
        if trials < 1:
            raise ConfigError("sweep.trials", "must be >= 1")
        kwargs["trials"] = trials
    if raw.get("base_seed") is not None:
        kwargs["base_seed"] = _parse_seed(raw["base_seed"], "sweep.base_seed")
    return SweepConfig(**kwargs)


def _parse_io(raw: dict) -> IoConfig:
    allowed = {"observations", "truth", "faults", "output_dir"}
    _check_keys(raw, allowed, "io")
    return IoConfig(**{k: str(v) for k, v in raw.items()})


_SECTIONS = {"scenario", "fault", "solver", "robust", "estimator", "sweep", "io"}


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    _check_keys(raw, _SECTIONS, "<root>")

    def section(name: str) -> dict:
        value = raw.get(name, {})
        if not isinstance(value, dict):
            raise ConfigError(name, "section must be a JSON object")
        return value

    return RunConfig(
        scenario=_parse_scenario(section("scenario")),
        fault=_parse_fault(section("fault")),
        solver=_parse_solver(section("solver")),
        robust=_parse_robust(section("robust")),
        estimator=_parse_estimator(section("estimator")),
        sweep=_parse_sweep(section("sweep")),
        io=_parse_io(section("io")),
    )


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError("<config>", f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("<config>", f"invalid JSON: {exc}") from exc
    return parse_config(raw)


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply repeatable --set KEY=VALUE flags to the raw config dict.

    The value is parsed as JSON when possible and kept as a string otherwise.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError("--set", f"expected KEY=VALUE, got {item!r}")
        dotted, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = raw
        parts = dotted.split(".")
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(dotted, f"cannot descend into non-object key {part!r}")
            node = nxt
        node[parts[-1]] = value
    return raw


def override_all_seeds(raw: dict, seed: int) -> dict:
    """--seed flag semantics: every seed in the config takes this value."""
    raw.setdefault("scenario", {})["seed"] = seed
    raw.setdefault("fault", {})["seed"] = seed
    raw.setdefault("sweep", {})["base_seed"] = seed
    return raw
