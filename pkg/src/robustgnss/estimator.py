"""Batch estimation pipeline: observation grouping, deterministic coarse
initialization, graph construction, and solution extraction."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from .errors import SingularNormalEquationsError
from .gnss import (
    DEFAULT_ELEVATION_MASK_DEG,
    MIN_UP_NORM_M,
    PseudorangeObservation,
    elevation_angle,
)
from .graph import (
    EpochState,
    FactorGraph,
    SolveResult,
    SolverConfig,
    StateSeries,
    VariableKind,
    between_factor,
    pseudorange_factor,
    solve_lm,
    state_key,
)
from .kernels import RobustConfig, Scheme, augment_with_switches, huber

log = logging.getLogger(__name__)

_BOOTSTRAP_GN_ITERATIONS = 12
_BOOTSTRAP_IRLS_ITERATIONS = 5


@dataclass(frozen=True)
class BetweenOptions:
    """Zero-delta random-walk coupling between consecutive epoch states.

    Each sigma is the allowed per-step change of that component; None leaves
    the component uncoupled. The default ties only the zenith troposphere,
    which varies far more slowly than the epoch spacing; position and clock
    stay free so the coupling injects no motion assumptions.
    """

    position_sigma_m: float | None = None
    clock_sigma_m: float | None = None
    tropo_sigma_m: float | None = 0.05

    def components(self) -> tuple[list[int], list[float]]:
        indices, sigmas = [], []
        if self.position_sigma_m is not None:
            indices += [0, 1, 2]
            sigmas += [self.position_sigma_m] * 3
        if self.clock_sigma_m is not None:
            indices.append(3)
            sigmas.append(self.clock_sigma_m)
        if self.tropo_sigma_m is not None:
            indices.append(4)
            sigmas.append(self.tropo_sigma_m)
        return indices, sigmas

    def to_dict(self) -> dict:
        return {
            "position_sigma_m": self.position_sigma_m,
            "clock_sigma_m": self.clock_sigma_m,
            "tropo_sigma_m": self.tropo_sigma_m,
        }


@dataclass(frozen=True)
class EstimatorOptions:
    elevation_mask_deg: float = DEFAULT_ELEVATION_MASK_DEG
    between: BetweenOptions | None = field(default_factory=BetweenOptions)

    def to_dict(self) -> dict:
        return {
            "elevation_mask_deg": self.elevation_mask_deg,
            "between": self.between.to_dict() if self.between else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatorOptions":
        between = data.get("between")
        return cls(
            elevation_mask_deg=data.get("elevation_mask_deg", DEFAULT_ELEVATION_MASK_DEG),
            between=BetweenOptions(**between) if between else None,
        )


@dataclass
class EpochSolution:
    t: float
    state: EpochState
    n_sats: int
    mean_switch: float | None = None


@dataclass
class EstimationResult:
    epochs: list[EpochSolution]
    converged: bool
    iterations: list
    result: SolveResult

    def series(self) -> StateSeries:
        return StateSeries(
            times=np.array([e.t for e in self.epochs]),
            states=[e.state for e in self.epochs],
        )


def group_by_epoch(observations: list[PseudorangeObservation]) -> dict[float, list[PseudorangeObservation]]:
    """Group observations on their exact epoch value, sorted by time."""
    groups: dict[float, list[PseudorangeObservation]] = {}
    for obs in observations:
        groups.setdefault(obs.epoch, []).append(obs)
    return dict(sorted(groups.items()))


def coarse_point_solution(observations: list[PseudorangeObservation]) -> tuple[np.ndarray, float]:
    """Deterministic per-epoch position/clock bootstrap.

    Gauss-Newton on [x, y, z, clock] from the geocenter, followed by a few
    Huber-reweighted refinements so that gross faults do not drag the
    initialization arbitrarily far. Troposphere is ignored here.
    """
    m = len(observations)
    if m < 4:
        raise SingularNormalEquationsError(
            f"epoch t={observations[0].epoch if observations else '?'} has {m} observations; "
            "need >= 4 for a point solution")
    sat_pos = np.stack([o.sat.position for o in observations])
    # Satellite clock and correction terms are known; fold them into the
    # observable so only range + receiver clock remain.
    rho = np.array([o.rho_if + o.sat.clock_bias - o.sat.correction_sum for o in observations])
    sigma = np.array([o.sigma for o in observations])

    x = np.zeros(4)
    total = _BOOTSTRAP_GN_ITERATIONS + _BOOTSTRAP_IRLS_ITERATIONS
    for it in range(total):
        diff = x[:3] - sat_pos
        rng = np.linalg.norm(diff, axis=1)
        if np.any(rng == 0.0):
            raise SingularNormalEquationsError("iterate coincides with a satellite")
        pred = rng + x[3]
        resid = (rho - pred) / sigma
        J = np.empty((m, 4))
        J[:, :3] = diff / (rng[:, None] * sigma[:, None])
        J[:, 3] = 1.0 / sigma
        w = np.ones(m)
        if it >= _BOOTSTRAP_GN_ITERATIONS:
            w = huber(resid, 1.345).weight
        Jw = J * w[:, None]
        H = J.T @ Jw
        g = J.T @ (w * resid)
        try:
            delta = np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise SingularNormalEquationsError(
                f"degenerate geometry in point solution: {exc}") from exc
        x += delta
        if np.linalg.norm(delta) < 1e-6 and it >= _BOOTSTRAP_GN_ITERATIONS:
            break
    if not np.all(np.isfinite(x)):
        raise SingularNormalEquationsError("point solution diverged")
    return x[:3], float(x[3])


@dataclass
class _EpochSetup:
    t: float
    admitted: list[PseudorangeObservation]
    initial: np.ndarray


def _admit_epoch(
    t: float,
    obs_list: list[PseudorangeObservation],
    mask_deg: float,
) -> _EpochSetup:
    pos, clk = coarse_point_solution(obs_list)
    if np.linalg.norm(pos) > MIN_UP_NORM_M:
        mask_rad = math.radians(mask_deg)
        admitted = [o for o in obs_list
                    if elevation_angle(pos, o.sat.position) >= mask_rad]
    else:
        # No usable vertical at the bootstrap point; admission falls back to
        # accepting everything rather than guessing elevations.
        log.warning("epoch t=%.3f: bootstrap position below %.0e m, elevation mask skipped",
                    t, MIN_UP_NORM_M)
        admitted = list(obs_list)
    return _EpochSetup(t=t, admitted=admitted, initial=np.array([*pos, clk, 0.0]))


def build_graph(
    observations: list[PseudorangeObservation],
    robust: RobustConfig,
    options: EstimatorOptions | None = None,
) -> tuple[FactorGraph, list[_EpochSetup]]:
    """Assemble the batch graph: one 5-dim state per epoch, one factor per
    admitted observation, optional between factors, switch augmentation when
    the switch scheme is active."""
    options = options or EstimatorOptions()
    groups = group_by_epoch(observations)
    if not groups:
        raise SingularNormalEquationsError("no observations supplied")

    setups = [_admit_epoch(t, obs_list, options.elevation_mask_deg)
              for t, obs_list in groups.items()]

    graph = FactorGraph()
    for i, setup in enumerate(setups):
        graph.add_variable(state_key(i), setup.initial)
    for i, setup in enumerate(setups):
        for obs in setup.admitted:
            graph.add_factor(pseudorange_factor(state_key(i), obs))
    if options.between is not None and len(setups) > 1:
        indices, sigmas = options.between.components()
        if indices:
            cov = np.diag(np.square(sigmas))
            for i in range(len(setups) - 1):
                graph.add_factor(between_factor(state_key(i), state_key(i + 1),
                                                np.zeros(len(indices)), cov,
                                                indices=indices))
    if robust.scheme == Scheme.SWITCH:
        augment_with_switches(graph, robust)
    return graph, setups


def solve_observations(
    observations: list[PseudorangeObservation],
    robust: RobustConfig | None = None,
    solver: SolverConfig | None = None,
    options: EstimatorOptions | None = None,
) -> EstimationResult:
    """End-to-end batch solve over an observation stream."""
    robust = robust or RobustConfig()
    graph, setups = build_graph(observations, robust, options)
    result = solve_lm(graph, solver, robust)

    epochs = []
    for i, setup in enumerate(setups):
        state = EpochState.from_vector(result.values[state_key(i)])
        mean_switch = None
        if robust.scheme == Scheme.SWITCH:
            svals = [float(v[0]) for k, v in result.values.items()
                     if k.kind == VariableKind.SWITCH and k.epoch_index == i]
            mean_switch = float(np.mean(svals)) if svals else None
        epochs.append(EpochSolution(t=setup.t, state=state,
                                    n_sats=len(setup.admitted), mean_switch=mean_switch))
        if state.zenith_tropo < 0:
            log.warning("epoch t=%.3f converged with negative zenith troposphere %.3f m",
                        setup.t, state.zenith_tropo)
    return EstimationResult(
        epochs=epochs,
        converged=result.converged,
        iterations=result.iterations,
        result=result,
    )


def write_estimate_csv(estimation: EstimationResult, sink: str | IO[str]) -> None:
    """Per-epoch solution table; gains a mean_switch column under the switch
    scheme."""
    if isinstance(sink, str):
        with open(sink, "w", encoding="utf-8", newline="\n") as handle:
            write_estimate_csv(estimation, handle)
        return
    with_switch = any(e.mean_switch is not None for e in estimation.epochs)
    header = "t,x,y,z,clock,tropo,n_sats,converged"
    if with_switch:
        header += ",mean_switch"
    sink.write(header + "\n")
    conv = int(estimation.converged)
    for e in estimation.epochs:
        row = (f"{e.t:.3f},{e.state.position[0]:.6f},{e.state.position[1]:.6f},"
               f"{e.state.position[2]:.6f},{e.state.clock_bias:.6f},"
               f"{e.state.zenith_tropo:.6f},{e.n_sats},{conv}")
        if with_switch:
            row += f",{e.mean_switch:.6f}" if e.mean_switch is not None else ",nan"
        sink.write(row + "\n")


def write_iterations_csv(iterations: list, sink: str | IO[str]) -> None:
    if isinstance(sink, str):
        with open(sink, "w", encoding="utf-8", newline="\n") as handle:
            write_iterations_csv(iterations, handle)
        return
    sink.write("iteration,lambda,total_error,accepted\n")
    for rec in iterations:
        sink.write(f"{rec.iteration},{rec.lambda_:.6g},{rec.total_error:.12g},"
                   f"{int(rec.accepted)}\n")
