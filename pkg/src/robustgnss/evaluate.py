"""Positioning error metrics and the fault-probability sweep experiment."""

from __future__ import annotations

import concurrent.futures
import json
import logging
from dataclasses import dataclass, field, replace
from typing import IO, Callable, Sequence

import numpy as np

from .errors import EmptySeriesError, EpochMismatchError, InvalidSpecError, RobustGnssError
from .estimator import EstimatorOptions, solve_observations
from .graph import SolverConfig, StateSeries
from .kernels import RobustConfig
from .simulate import (
    MAX_FAULT_PROBABILITY,
    FaultSpec,
    ScenarioSpec,
    generate_truth,
    inject_faults,
    synthesize_observations,
)

log = logging.getLogger(__name__)

DEFAULT_P_GRID = tuple(round(0.05 * i, 2) for i in range(10))  # 0.00 .. 0.45

# Spawn-key tags deriving per-trial scenario and fault seeds from a base seed.
_DERIVE_SCENARIO = 100
_DERIVE_FAULT = 200


@dataclass(frozen=True)
class ErrorStats:
    """Median / mean / max of a non-negative error series."""

    median: float
    mean: float
    max: float
    count: int

    def __post_init__(self):
        if self.count > 0 and (self.median > self.max + 1e-12 or self.mean > self.max + 1e-12):
            raise ValueError("median and mean cannot exceed max")


def rsos_series(estimate: StateSeries, truth: StateSeries) -> np.ndarray:
    """Per-epoch root-sum-of-squares position difference, in meters.

    The two series must share an identical epoch grid; no interpolation.
    """
    if len(estimate) != len(truth) or not np.array_equal(estimate.times, truth.times):
        raise EpochMismatchError("estimate and truth epoch grids differ")
    return np.linalg.norm(estimate.positions() - truth.positions(), axis=1)


def error_stats(series: Sequence[float] | np.ndarray) -> ErrorStats:
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise EmptySeriesError("cannot compute statistics of an empty series")
    return ErrorStats(
        median=float(np.median(series)),
        mean=float(np.mean(series)),
        max=float(np.max(series)),
        count=int(series.size),
    )


@dataclass
class TrialOutcome:
    scheme: str
    p: float
    trial: int
    stats: ErrorStats | None
    diverged: bool
    error: str | None = None


@dataclass
class SweepResult:
    """Aggregated sweep outcome for one robust scheme."""

    scheme: str
    fault_probabilities: list[float]
    stats: list[ErrorStats]          # one per probability (aggregated over trials)
    divergences: list[int]
    trials: int
    seeds: list[int]                 # per-trial derived scenario seeds
    per_trial: list[list[TrialOutcome]] = field(default_factory=list)

    def median_at(self, p: float) -> float:
        return self.stats[self.fault_probabilities.index(p)].median


def derive_trial_seeds(base_seed: int, trial: int) -> tuple[int, int]:
    """Deterministic (scenario_seed, fault_seed) pair for one trial."""
    sc = np.random.SeedSequence(base_seed, spawn_key=(_DERIVE_SCENARIO, trial))
    ft = np.random.SeedSequence(base_seed, spawn_key=(_DERIVE_FAULT, trial))
    return int(sc.generate_state(1)[0]), int(ft.generate_state(1)[0])


def trial_observations(scenario: ScenarioSpec, p: float, trial: int, base_seed: int,
                       fault_sigma_m: float = 50.0):
    """Regenerate the exact faulted observation set of one (p, trial) cell.

    Every scheme evaluated in that cell consumes this byte-identical data.
    """
    sc_seed, ft_seed = derive_trial_seeds(base_seed, trial)
    spec = replace(scenario, seed=sc_seed)
    truth = generate_truth(spec)
    clean = synthesize_observations(truth, spec)
    faulted, mask = inject_faults(
        clean, FaultSpec(probability=p, sigma_m=fault_sigma_m, seed=ft_seed))
    return truth, faulted, mask


def _run_cell(
    scenario: ScenarioSpec,
    robust: RobustConfig,
    solver: SolverConfig | None,
    options: EstimatorOptions | None,
    p: float,
    trial: int,
    base_seed: int,
    fault_sigma_m: float = 50.0,
) -> TrialOutcome:
    scheme = robust.scheme.value
    try:
        truth, faulted, _ = trial_observations(scenario, p, trial, base_seed, fault_sigma_m)
        estimation = solve_observations(faulted, robust=robust, solver=solver, options=options)
        series = rsos_series(estimation.series(), truth)
        return TrialOutcome(scheme, p, trial, error_stats(series), diverged=False)
    except RobustGnssError as exc:
        log.warning("cell scheme=%s p=%.2f trial=%d failed: %s", scheme, p, trial, exc)
        return TrialOutcome(scheme, p, trial, None, diverged=True, error=str(exc))


def aggregate_cells(
    outcomes: list[TrialOutcome],
    schemes: list[str],
    p_grid: list[float],
    trials: int,
    seeds: list[int],
) -> list[SweepResult]:
    """Order-independent reduction of per-trial outcomes to per-scheme tables.

    Aggregation is median-of-medians and mean-of-means over the surviving
    trials of each cell; failed trials contribute no epochs and are counted.
    """
    by_key = {(o.scheme, o.p, o.trial): o for o in outcomes}
    results = []
    for scheme in schemes:
        stats, divergences, per_trial = [], [], []
        for p in p_grid:
            cell = [by_key[(scheme, p, t)] for t in range(trials)]
            ok = [c.stats for c in cell if c.stats is not None]
            n_div = sum(1 for c in cell if c.diverged)
            if ok:
                stats.append(ErrorStats(
                    median=float(np.median([s.median for s in ok])),
                    mean=float(np.mean([s.mean for s in ok])),
                    max=float(np.max([s.max for s in ok])),
                    count=int(np.sum([s.count for s in ok])),
                ))
            else:
                stats.append(ErrorStats(median=float("nan"), mean=float("nan"),
                                         max=float("nan"), count=0))
            divergences.append(n_div)
            per_trial.append(cell)
        results.append(SweepResult(
            scheme=scheme,
            fault_probabilities=list(p_grid),
            stats=stats,
            divergences=divergences,
            trials=trials,
            seeds=seeds,
            per_trial=per_trial,
        ))
    return results


def fault_sweep(
    scenario: ScenarioSpec,
    schemes: Sequence[RobustConfig],
    p_grid: Sequence[float],
    trials: int,
    base_seed: int,
    solver: SolverConfig | None = None,
    options: EstimatorOptions | None = None,
    workers: int = 1,
    progress: Callable[[str], None] | None = None,
    fault_sigma_m: float = 50.0,
) -> list[SweepResult]:
    """Monte-Carlo sweep over fault probabilities for several schemes.

    Fully deterministic given base_seed: every (p, trial) cell derives its own
    seeds, and all schemes inside a cell see identical faulted observations.
    """
    p_grid = [float(p) for p in p_grid]
    for p in p_grid:
        if not 0.0 <= p <= MAX_FAULT_PROBABILITY:
            raise InvalidSpecError(
                f"fault probability {p} outside [0, {MAX_FAULT_PROBABILITY}]")
    if trials < 1:
        raise InvalidSpecError("trials must be >= 1")
    if not schemes:
        raise InvalidSpecError("at least one scheme required")

    tasks = [(robust, p, trial)
             for robust in schemes for p in p_grid for trial in range(trials)]
    outcomes: list[TrialOutcome] = []
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_cell, scenario, robust, solver, options,
                            p, trial, base_seed, fault_sigma_m)
                for robust, p, trial in tasks
            ]
            for future in concurrent.futures.as_completed(futures):
                outcome = future.result()
                outcomes.append(outcome)
                if progress:
                    progress(f"scheme={outcome.scheme} p={outcome.p:.2f} trial={outcome.trial}")
    else:
        for robust, p, trial in tasks:
            outcome = _run_cell(scenario, robust, solver, options, p, trial,
                                base_seed, fault_sigma_m)
            outcomes.append(outcome)
            if progress:
                progress(f"scheme={outcome.scheme} p={outcome.p:.2f} trial={outcome.trial}")

    seeds = [derive_trial_seeds(base_seed, t)[0] for t in range(trials)]
    return aggregate_cells(outcomes, [r.scheme.value for r in schemes],
                           p_grid, trials, seeds)


# ---------------------------------------------------------------------------
# Delimited / JSON outputs
# ---------------------------------------------------------------------------

def write_sweep_csv(results: list[SweepResult], sink: str | IO[str]) -> None:
    """Per-trial rows; aggregates live in the JSON summary."""
    if isinstance(sink, str):
        with open(sink, "w", encoding="utf-8", newline="\n") as handle:
            write_sweep_csv(results, handle)
        return
    sink.write("scheme,p,trial,median,mean,max,diverged\n")
    for res in results:
        for cell in res.per_trial:
            for outcome in cell:
                if outcome.stats is not None:
                    sink.write(
                        f"{outcome.scheme},{outcome.p:.2f},{outcome.trial},"
                        f"{outcome.stats.median:.6f},{outcome.stats.mean:.6f},"
                        f"{outcome.stats.max:.6f},{int(outcome.diverged)}\n")
                else:
                    sink.write(f"{outcome.scheme},{outcome.p:.2f},{outcome.trial},"
                               f"nan,nan,nan,{int(outcome.diverged)}\n")


def sweep_summary(results: list[SweepResult], base_seed: int) -> dict:
    schemes = {}
    for res in results:
        schemes[res.scheme] = {
            "p": res.fault_probabilities,
            "median": [s.median for s in res.stats],
            "mean": [s.mean for s in res.stats],
            "max": [s.max for s in res.stats],
            "count": [s.count for s in res.stats],
            "divergences": res.divergences,
            "trial_medians": [
                [o.stats.median if o.stats else None for o in cell]
                for cell in res.per_trial
            ],
        }
    trials = results[0].trials if results else 0
    return {
        "base_seed": base_seed,
        "trials": trials,
        "p_grid": results[0].fault_probabilities if results else [],
        "schemes": schemes,
    }


def write_sweep_json(results: list[SweepResult], base_seed: int, sink: str | IO[str]) -> None:
    if isinstance(sink, str):
        with open(sink, "w", encoding="utf-8", newline="\n") as handle:
            write_sweep_json(results, base_seed, handle)
        return
    json.dump(sweep_summary(results, base_seed), sink, indent=2, sort_keys=True)
    sink.write("\n")
