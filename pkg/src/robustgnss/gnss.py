"""Pseudorange measurement pipeline.

Dual-frequency combination, observation prediction, geometry, troposphere
mapping, analytic Jacobians, and the JSON-lines observation format.

Clock biases are stored pre-multiplied by the speed of light, i.e. in meters.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import IO, TYPE_CHECKING, Callable, Iterable, Iterator

import numpy as np

from .errors import (
    BelowElevationMaskError,
    CoincidentPositionsError,
    ElevationOutOfRangeError,
    EqualFrequenciesError,
    NonPositiveSigmaError,
    ObservationParseError,
    UndefinedUpError,
)

if TYPE_CHECKING:
    from .graph import EpochState

log = logging.getLogger(__name__)

GPS_L1_HZ = 1575.42e6
GPS_L2_HZ = 1227.60e6

DEFAULT_ELEVATION_MASK_DEG = 10.0

# Receiver closer to the geocenter than this has no usable local vertical.
MIN_UP_NORM_M = 1.0e6

_RANGE_SANITY_M = (1.0e6, 1.0e8)
_ORBIT_SANITY_M = (2.0e7, 3.0e7)


@dataclass(frozen=True)
class DualFreqObservation:
    """One dual-frequency pseudorange pair for a single satellite."""

    epoch: float
    sat_id: str
    rho_l1: float
    rho_l2: float
    f1: float = GPS_L1_HZ
    f2: float = GPS_L2_HZ

    def __post_init__(self):
        if self.f1 <= 0 or self.f2 <= 0:
            raise EqualFrequenciesError("carrier frequencies must be positive")
        for name, rho in (("rho_l1", self.rho_l1), ("rho_l2", self.rho_l2)):
            if not _RANGE_SANITY_M[0] < rho < _RANGE_SANITY_M[1]:
                log.warning(
                    "%s=%.3f m for %s outside sanity band (1e6, 1e8)",
                    name, rho, self.sat_id,
                )


@dataclass(frozen=True)
class SatelliteContext:
    """Satellite state and additive correction terms, all in meters."""

    sat_id: str
    position: np.ndarray  # ECEF, shape (3,)
    clock_bias: float = 0.0
    rel_correction: float = 0.0
    phase_center: float = 0.0
    dcb: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if self.position.shape != (3,):
            raise ValueError("satellite position must be a 3-vector")
        radius = float(np.linalg.norm(self.position))
        if not _ORBIT_SANITY_M[0] < radius < _ORBIT_SANITY_M[1]:
            log.warning(
                "satellite %s radius %.0f m outside GNSS orbit band (2e7, 3e7)",
                self.sat_id, radius,
            )
        for name in ("clock_bias", "rel_correction", "phase_center", "dcb"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"satellite {self.sat_id}: {name} must be finite")

    @property
    def correction_sum(self) -> float:
        return self.rel_correction + self.phase_center + self.dcb


@dataclass(frozen=True)
class PseudorangeObservation:
    """Ionosphere-free pseudorange with its satellite context."""

    epoch: float
    sat: SatelliteContext
    rho_if: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise NonPositiveSigmaError(
                f"sigma must be > 0, got {self.sigma} for {self.sat.sat_id}"
            )


def iono_free(obs: DualFreqObservation) -> float:
    """Combine L1/L2 pseudoranges to cancel the first-order dispersive delay."""
    f1sq = obs.f1 * obs.f1
    f2sq = obs.f2 * obs.f2
    denom = f1sq - f2sq
    if denom == 0.0:
        raise EqualFrequenciesError(f"f1 == f2 == {obs.f1} Hz")
    return obs.rho_l1 * (f1sq / denom) - obs.rho_l2 * (f2sq / denom)


def iono_free_coefficients(f1: float = GPS_L1_HZ, f2: float = GPS_L2_HZ) -> tuple[float, float]:
    """Return the (L1, L2) combination coefficients; they differ by exactly 1."""
    if f1 == f2:
        raise EqualFrequenciesError(f"f1 == f2 == {f1} Hz")
    f1sq, f2sq = f1 * f1, f2 * f2
    return f1sq / (f1sq - f2sq), f2sq / (f1sq - f2sq)


def elevation_angle(user_pos: np.ndarray, sat_pos: np.ndarray) -> float:
    """Satellite elevation in radians, using the geocentric vertical at the user."""
    user_pos = np.asarray(user_pos, dtype=float)
    sat_pos = np.asarray(sat_pos, dtype=float)
    user_norm = float(np.linalg.norm(user_pos))
    if user_norm <= MIN_UP_NORM_M:
        raise UndefinedUpError(f"|user_pos| = {user_norm:.1f} m <= {MIN_UP_NORM_M:.0f} m")
    los = sat_pos - user_pos
    los_norm = float(np.linalg.norm(los))
    if los_norm == 0.0:
        raise CoincidentPositionsError("user and satellite positions coincide")
    sin_el = float(np.dot(user_pos, los)) / (user_norm * los_norm)
    return math.asin(min(1.0, max(-1.0, sin_el)))


def tropo_mapping(el: float) -> float:
    """Slant factor for the zenith troposphere delay; monotone decreasing in elevation."""
    if not 0.0 < el <= math.pi / 2:
        raise ElevationOutOfRangeError(f"elevation {el} rad outside (0, pi/2]")
    s = math.sin(el)
    return 1.001 / math.sqrt(0.002001 + s * s)


def cosecant_mapping(el: float) -> float:
    """Simple 1/sin(el) mapping, for comparison against tropo_mapping."""
    if not 0.0 < el <= math.pi / 2:
        raise ElevationOutOfRangeError(f"elevation {el} rad outside (0, pi/2]")
    return 1.0 / math.sin(el)


MAPPING_FUNCTIONS: dict[str, Callable[[float], float]] = {
    "closed_form": tropo_mapping,
    "cosecant": cosecant_mapping,
}


def _geometry(state: "EpochState", sat: SatelliteContext) -> tuple[np.ndarray, float]:
    diff = state.position - sat.position
    rng = float(np.linalg.norm(diff))
    if rng == 0.0:
        raise CoincidentPositionsError(f"state coincides with satellite {sat.sat_id}")
    return diff, rng


def predict_pseudorange(
    state: "EpochState",
    sat: SatelliteContext,
    elevation_mask_deg: float | None = DEFAULT_ELEVATION_MASK_DEG,
    mapping: Callable[[float], float] = tropo_mapping,
    mapping_value: float | None = None,
) -> float:
    """Model the ionosphere-free pseudorange for a state/satellite pair.

    ``mapping_value`` short-circuits the elevation computation with a fixed
    slant factor; with it set, the elevation mask is not applied.
    """
    diff, rng = _geometry(state, sat)
    if mapping_value is None:
        el = elevation_angle(state.position, sat.position)
        if elevation_mask_deg is not None and el < math.radians(elevation_mask_deg):
            raise BelowElevationMaskError(
                f"{sat.sat_id}: elevation {math.degrees(el):.2f} deg below "
                f"{elevation_mask_deg:.2f} deg mask"
            )
        mapping_value = mapping(el)
    return (
        rng
        + state.clock_bias
        - sat.clock_bias
        + state.zenith_tropo * mapping_value
        + sat.correction_sum
    )


def pseudorange_jacobian(
    state: "EpochState",
    sat: SatelliteContext,
    elevation_mask_deg: float | None = DEFAULT_ELEVATION_MASK_DEG,
    mapping: Callable[[float], float] = tropo_mapping,
    mapping_value: float | None = None,
) -> np.ndarray:
    """Row of partials of the predicted pseudorange w.r.t. [x, y, z, clock, tropo].

    The dependence of the slant factor on position is neglected; it is orders
    of magnitude below the line-of-sight term.
    """
    diff, rng = _geometry(state, sat)
    if mapping_value is None:
        el = elevation_angle(state.position, sat.position)
        if elevation_mask_deg is not None and el < math.radians(elevation_mask_deg):
            raise BelowElevationMaskError(
                f"{sat.sat_id}: elevation {math.degrees(el):.2f} deg below "
                f"{elevation_mask_deg:.2f} deg mask"
            )
        mapping_value = mapping(el)
    row = np.empty(5)
    row[:3] = diff / rng
    row[3] = 1.0
    row[4] = mapping_value
    return row


def pseudorange_whitened_error(
    state: "EpochState",
    obs: PseudorangeObservation,
    mapping: Callable[[float], float] = tropo_mapping,
) -> float:
    """(observed - predicted) / sigma; its square is the factor cost."""
    if obs.sigma <= 0:
        raise NonPositiveSigmaError(f"sigma must be > 0, got {obs.sigma}")
    predicted = predict_pseudorange(state, obs.sat, elevation_mask_deg=None, mapping=mapping)
    return (obs.rho_if - predicted) / obs.sigma


# ---------------------------------------------------------------------------
# JSON-lines observation stream
# ---------------------------------------------------------------------------

_CORRECTION_KEYS = ("sat_clk", "rel", "pc", "dcb")


def observation_from_record(record: dict) -> PseudorangeObservation:
    """Build one observation from a parsed JSON record.

    Either ``rho_if`` or the ``rho_l1``/``rho_l2`` pair must be present.
    Missing correction keys default to 0; unknown keys are ignored.
    """
    try:
        epoch = float(record["t"])
        sat_id = str(record["sat"])
        sat_pos = np.asarray(record["sat_pos"], dtype=float)
        sigma = float(record["sigma"])
    except KeyError as exc:
        raise ObservationParseError(f"missing required key {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ObservationParseError(str(exc)) from exc

    if "rho_if" in record:
        rho_if = float(record["rho_if"])
    elif "rho_l1" in record and "rho_l2" in record:
        dual = DualFreqObservation(
            epoch=epoch,
            sat_id=sat_id,
            rho_l1=float(record["rho_l1"]),
            rho_l2=float(record["rho_l2"]),
            f1=float(record.get("f1", GPS_L1_HZ)),
            f2=float(record.get("f2", GPS_L2_HZ)),
        )
        rho_if = iono_free(dual)
    else:
        raise ObservationParseError("record needs either 'rho_if' or the 'rho_l1'/'rho_l2' pair")

    sat_clk, rel, pc, dcb = (float(record.get(k, 0.0)) for k in _CORRECTION_KEYS)
    sat = SatelliteContext(
        sat_id=sat_id,
        position=sat_pos,
        clock_bias=sat_clk,
        rel_correction=rel,
        phase_center=pc,
        dcb=dcb,
    )
    return PseudorangeObservation(epoch=epoch, sat=sat, rho_if=rho_if, sigma=sigma)


def observation_to_record(obs: PseudorangeObservation) -> dict:
    return {
        "t": obs.epoch,
        "sat": obs.sat.sat_id,
        "rho_if": obs.rho_if,
        "sat_pos": [float(v) for v in obs.sat.position],
        "sat_clk": obs.sat.clock_bias,
        "rel": obs.sat.rel_correction,
        "pc": obs.sat.phase_center,
        "dcb": obs.sat.dcb,
        "sigma": obs.sigma,
    }


def read_observations(source: str | IO[str]) -> list[PseudorangeObservation]:
    """Parse a JSON-lines observation file (path or open text stream)."""
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as handle:
            return read_observations(handle)
    observations = []
    for lineno, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ObservationParseError(f"line {lineno}: invalid JSON ({exc})") from exc
        try:
            observations.append(observation_from_record(record))
        except ObservationParseError as exc:
            raise ObservationParseError(f"line {lineno}: {exc}") from exc
    return observations


def write_observations(observations: Iterable[PseudorangeObservation], sink: str | IO[str]) -> None:
    """Write observations as JSON-lines with a stable key order."""
    if isinstance(sink, str):
        with open(sink, "w", encoding="utf-8", newline="\n") as handle:
            write_observations(observations, handle)
        return
    for obs in observations:
        sink.write(json.dumps(observation_to_record(obs)) + "\n")
