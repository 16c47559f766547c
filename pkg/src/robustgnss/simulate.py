"""Synthetic scenario generation: ground-truth trajectories, satellite
geometry, clean pseudorange observations, and random fault injection.

Every random draw comes from a counter-based stream keyed by (seed, epoch,
satellite), so generation is reproducible and safe to parallelize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import IO

import numpy as np

from .errors import InsufficientVisibilityError, InvalidSpecError
from .gnss import (
    DEFAULT_ELEVATION_MASK_DEG,
    PseudorangeObservation,
    SatelliteContext,
    elevation_angle,
    predict_pseudorange,
)
from .graph import EpochState, StateSeries

# Stream tags keeping clock-walk, measurement-noise, and fault draws disjoint
# even when the same seed value is reused across specs.
_STREAM_CLOCK = 0
_STREAM_NOISE = 1
_STREAM_FAULT = 2

MAX_FAULT_PROBABILITY = 0.49


@dataclass(frozen=True)
class TrajectorySpec:
    """Piecewise ground-truth motion: static point, constant velocity, or
    piecewise-linear waypoints [(t, x, y, z), ...]."""

    kind: str = "static"
    position: tuple[float, float, float] = (6378137.0, 0.0, 0.0)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    waypoints: tuple[tuple[float, float, float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in ("static", "constant_velocity", "waypoints"):
            raise InvalidSpecError(f"unknown trajectory kind {self.kind!r}")
        if self.kind == "waypoints" and len(self.waypoints) < 2:
            raise InvalidSpecError("waypoints trajectory needs at least 2 points")

    def position_at(self, t: float) -> np.ndarray:
        p0 = np.asarray(self.position, dtype=float)
        if self.kind == "static":
            return p0
        if self.kind == "constant_velocity":
            return p0 + t * np.asarray(self.velocity, dtype=float)
        pts = np.asarray(self.waypoints, dtype=float)
        ts, xyz = pts[:, 0], pts[:, 1:]
        return np.array([np.interp(t, ts, xyz[:, i]) for i in range(3)])


@dataclass(frozen=True)
class ClockModel:
    """Receiver clock truth: initial bias plus linear drift plus random walk
    (all in meters; random_walk in m per sqrt-second)."""

    initial_m: float = 0.0
    drift_m_per_s: float = 0.0
    random_walk_m_sqrt_s: float = 0.0

    def __post_init__(self):
        if self.random_walk_m_sqrt_s < 0:
            raise InvalidSpecError("clock random walk must be >= 0")


@dataclass(frozen=True)
class SatelliteSpec:
    """One satellite, either az/el/range relative to the initial position or
    an explicit ECEF location."""

    sat_id: str
    azimuth_deg: float | None = None
    elevation_deg: float | None = None
    range_m: float | None = None
    position: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.position is None and None in (self.azimuth_deg, self.elevation_deg, self.range_m):
            raise InvalidSpecError(
                f"satellite {self.sat_id}: need either position or azimuth/elevation/range")


def default_constellation() -> tuple[SatelliteSpec, ...]:
    """Eight satellites spread in azimuth with mixed elevations, giving a
    representative dilution of precision.

    Ranges shrink with elevation (2.6e7 m at 15 deg down to 2.2e7 m at
    75 deg) so the implied geocentric radii stay inside the GNSS orbit band.
    """
    elevations = (15.0, 25.0, 35.0, 50.0, 65.0, 30.0, 45.0, 75.0)
    return tuple(
        SatelliteSpec(
            sat_id=f"G{i + 1:02d}",
            azimuth_deg=45.0 * i,
            elevation_deg=el,
            range_m=2.2e7 + (75.0 - el) / 60.0 * 0.4e7,
        )
        for i, el in enumerate(elevations)
    )


@dataclass(frozen=True)
class ScenarioSpec:
    duration_s: float = 100.0
    rate_hz: float = 1.0
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    constellation: tuple[SatelliteSpec, ...] = field(default_factory=default_constellation)
    noise_sigma_m: float = 1.0
    true_zenith_tropo_m: float = 2.4
    clock: ClockModel = field(default_factory=ClockModel)
    elevation_mask_deg: float = DEFAULT_ELEVATION_MASK_DEG
    seed: int = 0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise InvalidSpecError("duration_s must be > 0")
        if self.rate_hz <= 0:
            raise InvalidSpecError("rate_hz must be > 0")
        if self.noise_sigma_m < 0:
            raise InvalidSpecError("noise_sigma_m must be >= 0")
        if not self.constellation:
            raise InvalidSpecError("constellation must not be empty")

    @property
    def n_epochs(self) -> int:
        return int(round(self.duration_s * self.rate_hz))


@dataclass(frozen=True)
class FaultSpec:
    """Independent per-observation fault injection: with the given
    probability, add a zero-mean Gaussian offset of the given scale."""

    probability: float = 0.0
    sigma_m: float = 50.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.probability <= MAX_FAULT_PROBABILITY:
            raise InvalidSpecError(
                f"fault probability {self.probability} outside [0, {MAX_FAULT_PROBABILITY}]")
        if self.sigma_m <= 0:
            raise InvalidSpecError("fault sigma_m must be > 0")


def _stream(seed: int, tag: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tag, *key)))


def _enu_basis(p0: np.ndarray) -> np.ndarray:
    """Rows are east/north/up unit vectors for the geocentric vertical at p0."""
    up = p0 / np.linalg.norm(p0)
    z = np.array([0.0, 0.0, 1.0])
    east = np.cross(z, up)
    if np.linalg.norm(east) < 1e-12:  # polar user: pick an arbitrary east
        east = np.array([1.0, 0.0, 0.0])
    east = east / np.linalg.norm(east)
    north = np.cross(up, east)
    return np.vstack([east, north, up])


def constellation_positions(spec: ScenarioSpec) -> list[SatelliteContext]:
    """Resolve the constellation to ECEF satellite contexts (static over the
    scenario; GNSS geometry changes slowly at these durations)."""
    p0 = np.asarray(spec.trajectory.position_at(0.0), dtype=float)
    basis = _enu_basis(p0)
    sats = []
    for sat in spec.constellation:
        if sat.position is not None:
            pos = np.asarray(sat.position, dtype=float)
        else:
            az = math.radians(sat.azimuth_deg)
            el = math.radians(sat.elevation_deg)
            enu = np.array([
                math.cos(el) * math.sin(az),
                math.cos(el) * math.cos(az),
                math.sin(el),
            ])
            pos = p0 + sat.range_m * (basis.T @ enu)
        sats.append(SatelliteContext(sat_id=sat.sat_id, position=pos))
    return sats


def generate_truth(spec: ScenarioSpec) -> StateSeries:
    """Deterministic ground-truth state series at 1/rate spacing."""
    n = spec.n_epochs
    if n < 1:
        raise InvalidSpecError("scenario produces no epochs")
    dt = 1.0 / spec.rate_hz
    times = np.arange(n) * dt

    clock = np.full(n, spec.clock.initial_m) + spec.clock.drift_m_per_s * times
    if spec.clock.random_walk_m_sqrt_s > 0:
        rng = _stream(spec.seed, _STREAM_CLOCK)
        steps = rng.normal(0.0, spec.clock.random_walk_m_sqrt_s * math.sqrt(dt), size=n - 1)
        clock[1:] += np.cumsum(steps)

    states = [
        EpochState(
            position=spec.trajectory.position_at(float(t)),
            clock_bias=float(clock[i]),
            zenith_tropo=spec.true_zenith_tropo_m,
        )
        for i, t in enumerate(times)
    ]
    return StateSeries(times=times, states=states)


def synthesize_observations(truth: StateSeries, spec: ScenarioSpec) -> list[PseudorangeObservation]:
    """Forward-model clean observations for every satellite above the mask.

    The recorded sigma is the noise level, or the 1 m nominal tag when the
    scenario is noiseless (the estimator needs a positive uncertainty).
    """
    sats = constellation_positions(spec)
    sigma_tag = spec.noise_sigma_m if spec.noise_sigma_m > 0 else 1.0
    mask_rad = math.radians(spec.elevation_mask_deg)
    observations: list[PseudorangeObservation] = []
    for epoch_idx, (t, state) in enumerate(zip(truth.times, truth.states)):
        visible = 0
        for sat_idx, sat in enumerate(sats):
            if elevation_angle(state.position, sat.position) < mask_rad:
                continue
            visible += 1
            rho = predict_pseudorange(state, sat, elevation_mask_deg=None)
            if spec.noise_sigma_m > 0:
                rho += _stream(spec.seed, _STREAM_NOISE, epoch_idx, sat_idx).normal(
                    0.0, spec.noise_sigma_m)
            observations.append(
                PseudorangeObservation(epoch=float(t), sat=sat, rho_if=rho, sigma=sigma_tag))
        if visible < 4:
            raise InsufficientVisibilityError(
                f"epoch {epoch_idx} (t={t:.3f}) has {visible} visible satellites; need >= 4")
    return observations


def inject_faults(
    observations: list[PseudorangeObservation],
    fault: FaultSpec,
) -> tuple[list[PseudorangeObservation], np.ndarray]:
    """Independently fault each observation with the configured probability.

    Returns the possibly-modified observations and the boolean fault mask.
    The sigma field is left untouched; the estimator must not see the fault.
    """
    sat_index: dict[str, int] = {}
    epoch_index: dict[float, int] = {}
    out: list[PseudorangeObservation] = []
    mask = np.zeros(len(observations), dtype=bool)
    for i, obs in enumerate(observations):
        e_idx = epoch_index.setdefault(obs.epoch, len(epoch_index))
        s_idx = sat_index.setdefault(obs.sat.sat_id, len(sat_index))
        rng = _stream(fault.seed, _STREAM_FAULT, e_idx, s_idx)
        if rng.uniform() < fault.probability:
            offset = rng.normal(0.0, fault.sigma_m)
            out.append(replace(obs, rho_if=obs.rho_if + offset))
            mask[i] = True
        else:
            out.append(obs)
    return out, mask


# ---------------------------------------------------------------------------
# Delimited outputs
# ---------------------------------------------------------------------------

def write_truth_csv(truth: StateSeries, sink: str | IO[str]) -> None:
    if isinstance(sink, str):
        with open(sink, "w", encoding="utf-8", newline="\n") as handle:
            write_truth_csv(truth, handle)
        return
    sink.write("t,x,y,z,clock,tropo\n")
    for t, state in zip(truth.times, truth.states):
        sink.write(
            f"{t:.3f},{state.position[0]:.6f},{state.position[1]:.6f},"
            f"{state.position[2]:.6f},{state.clock_bias:.6f},{state.zenith_tropo:.6f}\n")


def write_fault_csv(
    observations: list[PseudorangeObservation],
    mask: np.ndarray,
    sink: str | IO[str],
) -> None:
    if isinstance(sink, str):
        with open(sink, "w", encoding="utf-8", newline="\n") as handle:
            write_fault_csv(observations, mask, handle)
        return
    sink.write("t,sat,faulted\n")
    for obs, flagged in zip(observations, mask):
        sink.write(f"{obs.epoch:.3f},{obs.sat.sat_id},{int(flagged)}\n")
