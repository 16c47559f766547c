"""Sparse factor graph and damped Gauss-Newton batch solver.

Variables are flat vectors (5-dim epoch states, 1-dim switches). Factors
produce whitened residuals; the solver minimizes the summed squared whitened
error, with per-factor robust reweighting folded into the normal equations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import (
    DimensionMismatchError,
    DisconnectedVariableError,
    DuplicateKeyError,
    MissingVariableError,
    NonFiniteResidualError,
    SingularNormalEquationsError,
)
from .gnss import PseudorangeObservation
from .kernels import RobustConfig, Scheme, scheme_costs, scheme_weights

log = logging.getLogger(__name__)

STATE_DIM = 5
SWITCH_DIM = 1

# Damping ladder ceiling; exceeding it means no improving step exists.
_LAMBDA_MAX = 1.0e10
_LAMBDA_MIN = 1.0e-12
_RANK_TOL = 1.0e-12
_DENSE_LIMIT = 500


class VariableKind(Enum):
    STATE = "state"
    SWITCH = "switch"


_KIND_DIMS = {VariableKind.STATE: STATE_DIM, VariableKind.SWITCH: SWITCH_DIM}


@dataclass(frozen=True, order=True)
class VariableKey:
    """Identifies one variable; switches carry the satellite slot in sub_index."""

    kind: VariableKind = field(compare=False)
    epoch_index: int
    sub_index: int = 0
    _kind_order: str = field(init=False, repr=False, default="")

    def __post_init__(self):
        object.__setattr__(self, "_kind_order", self.kind.value)

    @property
    def dim(self) -> int:
        return _KIND_DIMS[self.kind]


def state_key(epoch_index: int) -> VariableKey:
    return VariableKey(VariableKind.STATE, epoch_index, 0)


def switch_key(epoch_index: int, slot: int) -> VariableKey:
    return VariableKey(VariableKind.SWITCH, epoch_index, slot)


@dataclass
class EpochState:
    """Estimated state at one epoch: ECEF position, clock bias and zenith
    troposphere delay, all in meters."""

    position: np.ndarray
    clock_bias: float = 0.0
    zenith_tropo: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.position.shape != (3,):
            raise DimensionMismatchError("position must be a 3-vector")
        if not (np.all(np.isfinite(self.position))
                and math.isfinite(self.clock_bias)
                and math.isfinite(self.zenith_tropo)):
            raise NonFiniteResidualError("state components must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, [self.clock_bias, self.zenith_tropo]])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "EpochState":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (STATE_DIM,):
            raise DimensionMismatchError(f"state vector must have length {STATE_DIM}")
        return cls(position=vec[:3].copy(), clock_bias=float(vec[3]), zenith_tropo=float(vec[4]))


@dataclass
class StateSeries:
    """A time-ordered sequence of epoch states on an explicit epoch grid."""

    times: np.ndarray
    states: list[EpochState]

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.states):
            raise DimensionMismatchError("times and states must have equal length")

    def __len__(self) -> int:
        return len(self.states)

    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.states])


class FactorKind(Enum):
    PSEUDORANGE = "pseudorange"
    BETWEEN = "between"
    PRIOR = "prior"
    SWITCH_PRIOR = "switch_prior"


@dataclass
class Factor:
    """One probabilistic constraint.

    payload depends on kind: PseudorangeObservation, between delta vector,
    prior mean vector, or the switch prior value (gamma).
    """

    kind: FactorKind
    keys: tuple[VariableKey, ...]
    payload: Any
    noise: np.ndarray

    def __post_init__(self):
        if not self.keys:
            raise MissingVariableError("factor must reference at least one variable")
        self.keys = tuple(self.keys)
        self.noise = np.atleast_2d(np.asarray(self.noise, dtype=float))
        if self.noise.shape[0] != self.noise.shape[1]:
            raise DimensionMismatchError("noise covariance must be square")
        cond = np.linalg.cond(self.noise)
        if not np.isfinite(cond) or cond > 1e12:
            log.warning("factor %s noise covariance condition %.3g exceeds 1e12",
                        self.kind.value, cond)


@dataclass(frozen=True)
class BetweenPayload:
    """Expected difference state_b - state_a, optionally on a component subset."""

    delta: np.ndarray
    indices: tuple[int, ...] | None = None

    def resolve_indices(self, dim: int) -> np.ndarray:
        if self.indices is None:
            return np.arange(dim)
        return np.asarray(self.indices, dtype=np.intp)


def prior_factor(key: VariableKey, mean: np.ndarray, noise: np.ndarray) -> Factor:
    return Factor(FactorKind.PRIOR, (key,), np.asarray(mean, dtype=float), noise)


def between_factor(key_a: VariableKey, key_b: VariableKey,
                   delta: np.ndarray, noise: np.ndarray,
                   indices: Sequence[int] | None = None) -> Factor:
    payload = BetweenPayload(
        delta=np.atleast_1d(np.asarray(delta, dtype=float)),
        indices=tuple(int(i) for i in indices) if indices is not None else None,
    )
    if payload.indices is not None and len(payload.indices) != payload.delta.shape[0]:
        raise DimensionMismatchError("delta length must match the component subset")
    return Factor(FactorKind.BETWEEN, (key_a, key_b), payload, noise)


def pseudorange_factor(key: VariableKey, obs: PseudorangeObservation,
                       switch: VariableKey | None = None) -> Factor:
    keys = (key,) if switch is None else (key, switch)
    return Factor(FactorKind.PSEUDORANGE, keys, obs, np.array([[obs.sigma ** 2]]))


def switch_prior_factor(key: VariableKey, gamma: float, xi: float) -> Factor:
    return Factor(FactorKind.SWITCH_PRIOR, (key,), float(gamma), np.array([[float(xi)]]))


def switch_response(s: float | np.ndarray) -> float | np.ndarray:
    """Switch response: identity clamped to [0, 1]."""
    return np.clip(s, 0.0, 1.0)


def switch_response_grad(s: float | np.ndarray) -> float | np.ndarray:
    """Subgradient of the clamp; 1 on the closed interval so boundary
    initializations (gamma = 1) can still move."""
    s = np.asarray(s, dtype=float)
    return np.where((s >= 0.0) & (s <= 1.0), 1.0, 0.0)


@dataclass
class SolverConfig:
    """Damping schedule and stopping tolerances for the batch solver."""

    max_iterations: int = 100
    initial_lambda: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    relative_error_tol: float = 1e-8
    absolute_error_tol: float = 1e-10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("initial_lambda", "lambda_up", "lambda_down",
                     "relative_error_tol", "absolute_error_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not self.lambda_up > 1.0 > self.lambda_down > 0.0:
            raise ValueError("need lambda_up > 1 > lambda_down > 0")


@dataclass
class IterationRecord:
    iteration: int
    lambda_: float
    total_error: float
    accepted: bool


@dataclass
class SolveResult:
    values: dict[VariableKey, np.ndarray]
    iterations: list[IterationRecord]
    converged: bool

    @property
    def final_error(self) -> float:
        return self.iterations[-1].total_error if self.iterations else float("nan")


class FactorGraph:
    """Bipartite container of variables (with initial linearization points)
    and factors. A graph plus its values is a self-contained value."""

    def __init__(self):
        self._initial: dict[VariableKey, np.ndarray] = {}
        self._factors: list[Factor] = []
        self.switch_augmented = False

    def add_variable(self, key: VariableKey, initial: np.ndarray) -> "FactorGraph":
        if key in self._initial:
            raise DuplicateKeyError(f"variable {key} already present")
        vec = np.atleast_1d(np.asarray(initial, dtype=float))
        if vec.shape != (key.dim,):
            raise DimensionMismatchError(
                f"{key.kind.value} variable expects dim {key.dim}, got {vec.shape}")
        self._initial[key] = vec.copy()
        return self

    def add_factor(self, factor: Factor) -> "FactorGraph":
        for key in factor.keys:
            if key not in self._initial:
                raise MissingVariableError(f"factor references unknown variable {key}")
        self._factors.append(factor)
        return self

    def has_variable(self, key: VariableKey) -> bool:
        return key in self._initial

    def variables(self) -> tuple[VariableKey, ...]:
        return tuple(self._initial.keys())

    def factors(self) -> tuple[Factor, ...]:
        return tuple(self._factors)

    def initial_values(self) -> dict[VariableKey, np.ndarray]:
        return {k: v.copy() for k, v in self._initial.items()}

    def set_initial(self, key: VariableKey, value: np.ndarray) -> None:
        if key not in self._initial:
            raise MissingVariableError(f"unknown variable {key}")
        vec = np.atleast_1d(np.asarray(value, dtype=float))
        if vec.shape != (key.dim,):
            raise DimensionMismatchError(f"expected dim {key.dim}")
        self._initial[key] = vec.copy()


def _whitener(noise: np.ndarray) -> np.ndarray:
    """Inverse Cholesky factor; whitened = Linv @ raw."""
    L = np.linalg.cholesky(noise)
    return scipy.linalg.solve_triangular(L, np.eye(noise.shape[0]), lower=True)


def evaluate_factor(factor: Factor, values: dict[VariableKey, np.ndarray]) -> np.ndarray:
    """Whitened residual of one factor at the given values."""
    for key in factor.keys:
        if key not in values:
            raise MissingVariableError(f"values missing {key}")

    if factor.kind == FactorKind.PRIOR:
        raw = np.atleast_1d(values[factor.keys[0]]) - factor.payload
        out = _whitener(factor.noise) @ raw
    elif factor.kind == FactorKind.BETWEEN:
        a, b = factor.keys
        idx = factor.payload.resolve_indices(a.dim)
        diff = np.atleast_1d(values[b])[idx] - np.atleast_1d(values[a])[idx]
        out = _whitener(factor.noise) @ (diff - factor.payload.delta)
    elif factor.kind == FactorKind.SWITCH_PRIOR:
        s = float(np.atleast_1d(values[factor.keys[0]])[0])
        out = np.array([(s - factor.payload) / math.sqrt(factor.noise[0, 0])])
    elif factor.kind == FactorKind.PSEUDORANGE:
        obs: PseudorangeObservation = factor.payload
        state = EpochState.from_vector(values[factor.keys[0]])
        from .gnss import predict_pseudorange
        predicted = predict_pseudorange(state, obs.sat, elevation_mask_deg=None)
        e = (predicted - obs.rho_if) / obs.sigma
        if len(factor.keys) == 2:
            s = float(np.atleast_1d(values[factor.keys[1]])[0])
            e = float(switch_response(s)) * e
        out = np.array([e])
    else:  # pragma: no cover - enum is exhaustive
        raise ValueError(f"unknown factor kind {factor.kind}")

    if not np.all(np.isfinite(out)):
        raise NonFiniteResidualError(f"non-finite residual from {factor.kind.value} factor")
    return out


def between_factor_error(state_a: EpochState, state_b: EpochState,
                         delta: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Whitened residual of (state_b - state_a) - delta."""
    raw = (state_b.as_vector() - state_a.as_vector()) - np.asarray(delta, dtype=float)
    out = _whitener(np.asarray(noise, dtype=float)) @ raw
    if not np.all(np.isfinite(out)):
        raise NonFiniteResidualError("non-finite between residual")
    return out


# ---------------------------------------------------------------------------
# Vectorized solve engine
# ---------------------------------------------------------------------------

_KIND_ORDER = {FactorKind.PRIOR: 0, FactorKind.BETWEEN: 1,
               FactorKind.PSEUDORANGE: 2, FactorKind.SWITCH_PRIOR: 3}


def _payload_fingerprint(factor: Factor) -> bytes:
    if factor.kind == FactorKind.PSEUDORANGE:
        obs: PseudorangeObservation = factor.payload
        arr = np.array([obs.epoch, obs.rho_if, obs.sigma, obs.sat.clock_bias,
                        obs.sat.correction_sum, *obs.sat.position])
        return arr.tobytes()
    if factor.kind == FactorKind.SWITCH_PRIOR:
        return np.array([factor.payload, factor.noise[0, 0]]).tobytes()
    if factor.kind == FactorKind.BETWEEN:
        idx = b"" if factor.payload.indices is None else bytes(factor.payload.indices)
        return factor.payload.delta.tobytes() + idx + factor.noise.tobytes()
    return np.asarray(factor.payload, dtype=float).tobytes() + factor.noise.tobytes()


class _LinearBlock:
    """Constant-Jacobian factors (prior/between/switch-prior) grouped for
    vectorized evaluation."""

    def __init__(self, rows, cols_a, cols_b, target, linv):
        # cols_a is None for priors/switch-priors; target is mean/delta/gamma.
        self.rows = rows
        self.cols_a = cols_a
        self.cols_b = cols_b
        self.target = target
        self.linv = linv

    def residuals(self, x: np.ndarray) -> np.ndarray:
        vb = x[self.cols_b]
        raw = vb - self.target if self.cols_a is None else (vb - x[self.cols_a]) - self.target
        return np.einsum("mij,mj->mi", self.linv, raw)

    def triplets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m, d = self.target.shape
        row_idx = np.repeat(self.rows[:, None, None] + np.arange(d)[None, :, None], d, axis=2)
        col_b = np.repeat(self.cols_b[:, None, :], d, axis=1)
        rows = [row_idx.ravel()]
        cols = [col_b.ravel()]
        vals = [self.linv.ravel()]
        if self.cols_a is not None:
            col_a = np.repeat(self.cols_a[:, None, :], d, axis=1)
            rows.append(row_idx.ravel())
            cols.append(col_a.ravel())
            vals.append((-self.linv).ravel())
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


class _PseudorangeBlock:
    def __init__(self, rows, state_col0, switch_col, sat_pos, sat_clk, corr, rho, sigma):
        self.rows = rows
        self.state_col0 = state_col0
        self.switch_col = switch_col          # -1 where unswitched
        self.sat_pos = sat_pos
        self.sat_clk = sat_clk
        self.corr = corr
        self.rho = rho
        self.sigma = sigma
        self.state_cols = state_col0[:, None] + np.arange(STATE_DIM)[None, :]
        self.switched = switch_col >= 0

    def model(self, x: np.ndarray):
        """Return (whitened unswitched residual e, row residual, geometry terms)."""
        pos = x[self.state_cols[:, :3]]
        clk = x[self.state_col0 + 3]
        tz = x[self.state_col0 + 4]
        diff = pos - self.sat_pos
        rng = np.linalg.norm(diff, axis=1)
        rng = np.where(rng == 0.0, np.nan, rng)
        pn = np.linalg.norm(pos, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            sin_el = -np.einsum("mi,mi->m", pos, diff) / (pn * rng)
        sin_el = np.clip(np.nan_to_num(sin_el, nan=1.0), -1.0, 1.0)
        # Geocentric vertical degenerates near the origin; fall back to zenith.
        sin_el = np.where(pn < 1.0, 1.0, sin_el)
        mapping = 1.001 / np.sqrt(0.002001 + sin_el * sin_el)
        pred = rng + clk - self.sat_clk + tz * mapping + self.corr
        e = (pred - self.rho) / self.sigma
        if self.switched.any():
            s = np.where(self.switched, x[np.maximum(self.switch_col, 0)], 1.0)
            psi = np.clip(s, 0.0, 1.0)
            dpsi = np.where((s >= 0.0) & (s <= 1.0), 1.0, 0.0)
            r = np.where(self.switched, psi * e, e)
        else:
            psi = np.ones_like(e)
            dpsi = psi
            r = e
        return e, r, diff, rng, mapping, psi, dpsi

    def triplets(self, x: np.ndarray, e, diff, rng, mapping, psi, dpsi):
        m = len(self.rows)
        jac = np.empty((m, STATE_DIM))
        scale = psi / self.sigma
        jac[:, :3] = (diff / rng[:, None]) * scale[:, None]
        jac[:, 3] = scale
        jac[:, 4] = mapping * scale
        rows = np.repeat(self.rows, STATE_DIM)
        cols = self.state_cols.ravel()
        vals = jac.ravel()
        if self.switched.any():
            idx = np.nonzero(self.switched)[0]
            rows = np.concatenate([rows, self.rows[idx]])
            cols = np.concatenate([cols, self.switch_col[idx]])
            vals = np.concatenate([vals, (dpsi * e)[idx]])
        return rows, cols, vals


class _Engine:
    def __init__(self, graph: FactorGraph, robust: RobustConfig, mapping: str):
        if mapping != "closed_form":
            raise ValueError("vectorized engine supports the closed_form mapping only")
        self.robust = robust
        self.keys = list(graph.variables())
        self.offsets: dict[VariableKey, int] = {}
        off = 0
        for key in self.keys:
            self.offsets[key] = off
            off += key.dim
        self.n = off

        self._check_connectivity(graph)

        idx = {k: i for i, k in enumerate(self.keys)}
        order = sorted(
            range(len(graph.factors())),
            key=lambda i: (
                _KIND_ORDER[graph.factors()[i].kind],
                tuple(idx[k] for k in graph.factors()[i].keys),
                _payload_fingerprint(graph.factors()[i]),
            ),
        )
        factors = [graph.factors()[i] for i in order]

        self.linear_blocks: list[_LinearBlock] = []
        self.pr_block: _PseudorangeBlock | None = None
        self._build(factors)

        self._const_trip = self._constant_triplets()
        x0 = np.empty(self.n)
        for key, vec in graph.initial_values().items():
            o = self.offsets[key]
            x0[o:o + key.dim] = vec
        self.x0 = x0

    def _check_connectivity(self, graph: FactorGraph) -> None:
        informative: set[VariableKey] = set()
        touched: set[VariableKey] = set()
        for f in graph.factors():
            for k in f.keys:
                touched.add(k)
                if f.kind != FactorKind.SWITCH_PRIOR:
                    informative.add(k)
        for key in self.keys:
            if key not in touched:
                raise DisconnectedVariableError(f"variable {key} has no factor")
            if key not in informative and key.kind != VariableKind.SWITCH:
                raise DisconnectedVariableError(
                    f"variable {key} is touched only by a switch prior")
            if key not in informative:
                raise DisconnectedVariableError(
                    f"switch {key} lacks its measurement factor")

    def _build(self, factors: Sequence[Factor]) -> None:
        row = 0
        groups: dict[tuple, list] = {}
        pr: list[tuple] = []
        for f in factors:
            if f.kind == FactorKind.PSEUDORANGE:
                obs: PseudorangeObservation = f.payload
                sw = self.offsets[f.keys[1]] if len(f.keys) == 2 else -1
                pr.append((row, self.offsets[f.keys[0]], sw, obs))
                row += 1
                continue
            d = f.noise.shape[0]
            linv = _whitener(f.noise)
            if f.kind == FactorKind.PRIOR:
                target = np.asarray(f.payload, dtype=float)
                cols_b = self.offsets[f.keys[0]] + np.arange(d)
                entry = (row, None, cols_b, target, linv)
            elif f.kind == FactorKind.BETWEEN:
                idx = f.payload.resolve_indices(f.keys[0].dim)
                target = f.payload.delta
                entry = (row, self.offsets[f.keys[0]] + idx,
                         self.offsets[f.keys[1]] + idx, target, linv)
            else:  # SWITCH_PRIOR
                target = np.array([float(f.payload)])
                entry = (row, None, np.array([self.offsets[f.keys[0]]]), target, linv)
            groups.setdefault((f.kind, d), []).append(entry)
            row += d
        self.n_rows = row

        for (kind, d), entries in groups.items():
            rows = np.array([e[0] for e in entries], dtype=np.intp)
            has_a = entries[0][1] is not None
            cols_a = (np.stack([e[1] for e in entries]).astype(np.intp)
                      if has_a else None)
            cols_b = np.stack([e[2] for e in entries]).astype(np.intp)
            target = np.stack([e[3] for e in entries])
            linv = np.stack([e[4] for e in entries])
            self.linear_blocks.append(_LinearBlock(rows, cols_a, cols_b, target, linv))

        if pr:
            self.pr_rows = np.array([p[0] for p in pr], dtype=np.intp)
            self.pr_block = _PseudorangeBlock(
                rows=self.pr_rows,
                state_col0=np.array([p[1] for p in pr], dtype=np.intp),
                switch_col=np.array([p[2] for p in pr], dtype=np.intp),
                sat_pos=np.stack([p[3].sat.position for p in pr]),
                sat_clk=np.array([p[3].sat.clock_bias for p in pr]),
                corr=np.array([p[3].sat.correction_sum for p in pr]),
                rho=np.array([p[3].rho_if for p in pr]),
                sigma=np.array([p[3].sigma for p in pr]),
            )
        else:
            self.pr_rows = np.empty(0, dtype=np.intp)

    def _constant_triplets(self):
        rows, cols, vals = [], [], []
        for blk in self.linear_blocks:
            r, c, v = blk.triplets()
            rows.append(r)
            cols.append(c)
            vals.append(v)
        if rows:
            return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        z = np.empty(0)
        return z.astype(np.intp), z.astype(np.intp), z

    # -- per-point evaluation ------------------------------------------------

    def residual_parts(self, x: np.ndarray):
        r = np.zeros(self.n_rows)
        for blk in self.linear_blocks:
            whit = blk.residuals(x)
            d = whit.shape[1]
            for j in range(d):
                r[blk.rows + j] = whit[:, j]
        geom = None
        e = np.empty(0)
        if self.pr_block is not None:
            e, r_pr, *geom = self.pr_block.model(x)
            r[self.pr_rows] = r_pr
        return r, e, geom

    def total_cost(self, r: np.ndarray, e: np.ndarray) -> float:
        lin = float(r @ r)
        if self.pr_block is not None:
            lin -= float(r[self.pr_rows] @ r[self.pr_rows])
            if self.robust.scheme == Scheme.SWITCH:
                pr_cost = float(r[self.pr_rows] @ r[self.pr_rows])
            else:
                pr_cost = float(np.sum(scheme_costs(e, self.robust)))
            lin += pr_cost
        return lin

    def cost_at(self, x: np.ndarray) -> float:
        r, e, _ = self.residual_parts(x)
        if not np.all(np.isfinite(r)):
            return float("inf")
        return self.total_cost(r, e)

    def jacobian(self, x: np.ndarray, e, geom) -> scipy.sparse.csr_matrix:
        rows, cols, vals = self._const_trip
        if self.pr_block is not None:
            pr_r, pr_c, pr_v = self.pr_block.triplets(x, e, *geom)
            rows = np.concatenate([rows, pr_r])
            cols = np.concatenate([cols, pr_c])
            vals = np.concatenate([vals, pr_v])
        return scipy.sparse.coo_matrix(
            (vals, (rows, cols)), shape=(self.n_rows, self.n)).tocsr()

    def row_weights(self, e: np.ndarray) -> np.ndarray:
        w = np.ones(self.n_rows)
        if self.pr_block is not None and self.robust.scheme not in (Scheme.L2, Scheme.SWITCH):
            w[self.pr_rows] = scheme_weights(e, self.robust)
        return w

    # -- linear algebra -------------------------------------------------------

    def _solve_normal(self, H, g, damping: float) -> np.ndarray | None:
        diag = H.diagonal()
        floor = max(float(diag.max()), 1.0) * 1e-14
        if damping > 0.0:
            damp = damping * np.maximum(diag, floor)
            Hd = H + scipy.sparse.diags(damp)
        else:
            Hd = H
        try:
            if self.n <= _DENSE_LIMIT:
                c, low = scipy.linalg.cho_factor(Hd.toarray())
                delta = scipy.linalg.cho_solve((c, low), -g)
            else:
                lu = scipy.sparse.linalg.splu(Hd.tocsc())
                delta = lu.solve(-g)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, RuntimeError):
            return None
        if not np.all(np.isfinite(delta)):
            return None
        return delta

    def check_rank(self, J: scipy.sparse.csr_matrix) -> None:
        H0 = (J.T @ J).tocsc()
        if self.n <= _DENSE_LIMIT:
            eig = np.linalg.eigvalsh(H0.toarray())
            if eig[-1] <= 0 or eig[0] < _RANK_TOL * eig[-1]:
                raise SingularNormalEquationsError(
                    "normal equations numerically rank deficient "
                    f"(min/max eigenvalue ratio {eig[0] / max(eig[-1], 1e-300):.2e})")
        else:
            try:
                lu = scipy.sparse.linalg.splu(H0)
            except RuntimeError as exc:
                raise SingularNormalEquationsError(str(exc)) from exc
            ud = np.abs(lu.U.diagonal())
            if ud.min() < _RANK_TOL * ud.max():
                raise SingularNormalEquationsError(
                    "normal equations numerically rank deficient "
                    f"(pivot ratio {ud.min() / max(ud.max(), 1e-300):.2e})")


def solve_lm(
    graph: FactorGraph,
    config: SolverConfig | None = None,
    robust: RobustConfig | None = None,
) -> SolveResult:
    """Minimize the robust weighted squared error over the whole graph.

    Each outer iteration recomputes robust weights from the current whitened
    residual norms, then tries an undamped Gauss-Newton step followed by an
    escalating damping ladder; a step is accepted only if it decreases the
    total cost, so the accepted error sequence is non-increasing.
    """
    config = config or SolverConfig()
    robust = robust or RobustConfig()
    if not graph.variables():
        raise DisconnectedVariableError("graph has no variables")
    if robust.scheme == Scheme.SWITCH and not graph.switch_augmented:
        raise ValueError("switch scheme requires a switch-augmented graph")
    if robust.scheme != Scheme.SWITCH and graph.switch_augmented:
        raise ValueError(f"augmented graph must be solved with the switch scheme, not {robust.scheme.value}")

    engine = _Engine(graph, robust, mapping="closed_form")
    x = engine.x0.copy()
    r, e, geom = engine.residual_parts(x)
    if not np.all(np.isfinite(r)):
        raise NonFiniteResidualError("non-finite residual at the initial values")
    error = engine.total_cost(r, e)

    records = [IterationRecord(0, 0.0, error, True)]
    lam = config.initial_lambda
    converged = False

    for it in range(1, config.max_iterations + 1):
        J = engine.jacobian(x, e, geom)
        if it == 1:
            engine.check_rank(J)
        w = engine.row_weights(e)
        Jw = J.multiply(w[:, None]).tocsc()
        H = (J.T @ Jw).tocsc()
        g = J.T @ (w * r)

        accepted = False
        damping = 0.0
        new_error = error
        while True:
            delta = engine._solve_normal(H, g, damping)
            if delta is not None:
                candidate = x + delta
                cand_error = engine.cost_at(candidate)
                if cand_error < error:
                    x = candidate
                    new_error = cand_error
                    accepted = True
                    lam = max((damping if damping > 0.0 else lam) * config.lambda_down,
                              _LAMBDA_MIN)
                    break
            damping = lam if damping == 0.0 else damping * config.lambda_up
            if damping > _LAMBDA_MAX:
                break

        records.append(IterationRecord(it, damping, new_error, accepted))
        if not accepted:
            # No improving step exists within the damping ladder: stationary.
            converged = True
            break
        decrease = error - new_error
        error = new_error
        r, e, geom = engine.residual_parts(x)
        if decrease <= config.relative_error_tol * max(error, 1e-300) \
                or error <= config.absolute_error_tol:
            converged = True
            break

    values = {}
    for key in engine.keys:
        o = engine.offsets[key]
        values[key] = x[o:o + key.dim].copy()
    return SolveResult(values=values, iterations=records, converged=converged)
