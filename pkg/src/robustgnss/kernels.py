"""Robust optimization schemes.

Six interchangeable treatments of measurement residuals: plain least squares,
Huber and Cauchy M-estimators, jointly optimized switch variables, closed-form
dynamic covariance scaling, and a two-component max-mixture selector.

Only measurement (pseudorange) factors are robustified; motion and prior
factors always keep their quadratic cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    AlreadyAugmentedError,
    DegenerateMixtureError,
    NegativeChiSquaredError,
    NonPositiveKernelWidthError,
)

# 95%-efficiency kernel widths for normally distributed inliers.
HUBER_K_DEFAULT = 1.345
CAUCHY_K_DEFAULT = 2.3849


class Scheme(Enum):
    L2 = "l2"
    HUBER = "huber"
    CAUCHY = "cauchy"
    SWITCH = "switch"
    DCS = "dcs"
    MAXMIX = "maxmix"


def _default_kernel_width(scheme: Scheme) -> float:
    if scheme == Scheme.CAUCHY:
        return CAUCHY_K_DEFAULT
    return HUBER_K_DEFAULT


@dataclass(frozen=True)
class RobustConfig:
    """Active robust scheme plus its parameters.

    kernel_width applies to Huber/Cauchy (whitened-residual units) and
    defaults to the classical constant of the selected scheme. switch_prior
    is the anchor value for switch variables, switch_prior_variance the
    variance of that anchor. dcs_phi controls the scaling threshold. The
    max-mixture null hypothesis has weight null_weight and variance inflated
    by null_variance_inflation.
    """

    scheme: Scheme = Scheme.L2
    kernel_width: float | None = None  # None resolves to the scheme default
    switch_prior: float = 1.0
    switch_prior_variance: float = 1.0
    dcs_phi: float = 1.0
    null_weight: float = 0.1
    null_variance_inflation: float = 2500.0

    def __post_init__(self):
        if isinstance(self.scheme, str):
            object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.kernel_width is not None and self.kernel_width <= 0:
            raise NonPositiveKernelWidthError(f"kernel_width {self.kernel_width} must be > 0")
        if self.switch_prior_variance <= 0:
            raise ValueError("switch_prior_variance must be > 0")
        if not 0.0 <= self.switch_prior <= 1.0:
            raise ValueError("switch_prior must lie in [0, 1]")
        if self.dcs_phi <= 0:
            raise ValueError("dcs_phi must be > 0")
        if not 0.0 < self.null_weight < 1.0:
            raise ValueError("null_weight must lie in (0, 1)")
        if self.null_variance_inflation <= 1.0:
            raise DegenerateMixtureError("null_variance_inflation must exceed 1")

    @property
    def effective_kernel_width(self) -> float:
        if self.kernel_width is not None:
            return self.kernel_width
        return _default_kernel_width(self.scheme)

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.value,
            "kernel_width": self.kernel_width,
            "switch_prior": self.switch_prior,
            "switch_prior_variance": self.switch_prior_variance,
            "dcs_phi": self.dcs_phi,
            "null_weight": self.null_weight,
            "null_variance_inflation": self.null_variance_inflation,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RobustConfig":
        return cls(**data)


@dataclass(frozen=True)
class KernelEvaluation:
    """Cost, influence, and IRLS weight at one (whitened) residual."""

    rho: float | np.ndarray
    psi: float | np.ndarray
    weight: float | np.ndarray


def huber(e: float | np.ndarray, k: float) -> KernelEvaluation:
    """Huber kernel: quadratic inside |e| <= k, linear outside."""
    if k <= 0:
        raise NonPositiveKernelWidthError(f"k = {k} must be > 0")
    e = np.asarray(e, dtype=float)
    a = np.abs(e)
    inlier = a <= k
    rho = np.where(inlier, e * e / 2.0, k * (a - k / 2.0))
    psi = np.where(inlier, e, k * np.sign(e))
    weight = np.where(inlier, 1.0, k / np.where(a == 0.0, 1.0, a))
    if np.ndim(e) == 0:
        return KernelEvaluation(float(rho), float(psi), float(weight))
    return KernelEvaluation(rho, psi, weight)


def cauchy(e: float | np.ndarray, k: float) -> KernelEvaluation:
    """Cauchy kernel; redescending, weight -> 0 as |e| -> inf."""
    if k <= 0:
        raise NonPositiveKernelWidthError(f"k = {k} must be > 0")
    e = np.asarray(e, dtype=float)
    u = 1.0 + (e * e) / (k * k)
    rho = (k * k / 2.0) * np.log(u)
    psi = e / u
    weight = 1.0 / u
    if np.ndim(e) == 0:
        return KernelEvaluation(float(rho), float(psi), float(weight))
    return KernelEvaluation(rho, psi, weight)


def dcs_scale(phi: float, chi2: float | np.ndarray) -> float | np.ndarray:
    """Closed-form covariance scale s = min(1, 2*phi / (phi + chi2)).

    The factor's information matrix is scaled by s**2 when the scale is
    applied, i.e. its covariance is inflated by 1/s**2.
    """
    if phi <= 0:
        raise NonPositiveKernelWidthError(f"phi = {phi} must be > 0")
    chi2 = np.asarray(chi2, dtype=float)
    if np.any(chi2 < 0):
        raise NegativeChiSquaredError("chi2 must be >= 0")
    s = np.minimum(1.0, 2.0 * phi / (phi + chi2))
    return float(s) if np.ndim(s) == 0 else s


class MixtureComponent(Enum):
    INLIER = "inlier"
    NULL = "null"


@dataclass(frozen=True)
class MaxMixSelection:
    """Outcome of the two-hypothesis component selection."""

    selected: MixtureComponent
    effective_weight: float       # information weight relative to the nominal sigma
    normalization_penalty: float  # -ln(w) + 0.5*ln(variance) of the selected component


def maxmix_penalty(robust: RobustConfig) -> float:
    """Extra cost (in squared-whitened-residual units) charged when the null
    component is selected, relative to the inlier component."""
    return math.log(robust.null_variance_inflation) \
        + 2.0 * math.log((1.0 - robust.null_weight) / robust.null_weight)


def maxmix_evaluate(e: float, sigma: float, robust: RobustConfig) -> MaxMixSelection:
    """Pick the mixture component with the larger weighted density at ``e``.

    Both components are zero-mean: the inlier has variance sigma**2 and weight
    1 - null_weight; the null hypothesis inflates the variance by
    null_variance_inflation and carries weight null_weight.
    """
    if sigma <= 0:
        raise NonPositiveKernelWidthError(f"sigma = {sigma} must be > 0")
    if robust.null_variance_inflation <= 1.0:
        raise DegenerateMixtureError("null_variance_inflation must exceed 1")
    infl = robust.null_variance_inflation
    w_null = robust.null_weight
    var_in = sigma * sigma
    var_null = infl * var_in
    # Negative log of w * N(e; 0, var), dropping the shared sqrt(2*pi) term.
    nll_in = -math.log(1.0 - w_null) + 0.5 * math.log(var_in) + 0.5 * e * e / var_in
    nll_null = -math.log(w_null) + 0.5 * math.log(var_null) + 0.5 * e * e / var_null
    if nll_in <= nll_null:
        return MaxMixSelection(MixtureComponent.INLIER, 1.0,
                               -math.log(1.0 - w_null) + 0.5 * math.log(var_in))
    return MaxMixSelection(MixtureComponent.NULL, 1.0 / infl,
                           -math.log(w_null) + 0.5 * math.log(var_null))


def maxmix_crossover(robust: RobustConfig) -> float:
    """|e|/sigma above which the null hypothesis wins the selection."""
    pen = maxmix_penalty(robust)
    scale = 1.0 - 1.0 / robust.null_variance_inflation
    if pen <= 0:
        return 0.0
    return math.sqrt(pen / scale)


def _maxmix_null_mask(e: np.ndarray, robust: RobustConfig) -> np.ndarray:
    pen = maxmix_penalty(robust)
    return e * e * (1.0 - 1.0 / robust.null_variance_inflation) > pen


def scheme_weights(e: np.ndarray, robust: RobustConfig) -> np.ndarray:
    """IRLS information weights for whitened measurement residuals."""
    e = np.asarray(e, dtype=float)
    if robust.scheme in (Scheme.L2, Scheme.SWITCH):
        return np.ones_like(e)
    if robust.scheme == Scheme.HUBER:
        return huber(e, robust.effective_kernel_width).weight
    if robust.scheme == Scheme.CAUCHY:
        return cauchy(e, robust.effective_kernel_width).weight
    if robust.scheme == Scheme.DCS:
        s = dcs_scale(robust.dcs_phi, e * e)
        return np.asarray(s) ** 2
    if robust.scheme == Scheme.MAXMIX:
        null = _maxmix_null_mask(e, robust)
        return np.where(null, 1.0 / robust.null_variance_inflation, 1.0)
    raise ValueError(f"unknown scheme {robust.scheme}")


def scheme_costs(e: np.ndarray, robust: RobustConfig) -> np.ndarray:
    """Per-residual contribution to the solver's acceptance objective.

    All schemes reduce to e**2 at small residuals so totals stay comparable.
    Huber/Cauchy use twice their kernel cost; the dynamic scale contributes
    the squared scaled residual; the max-mixture adds the selected
    component's normalization penalty relative to the inlier hypothesis.
    """
    e = np.asarray(e, dtype=float)
    if robust.scheme in (Scheme.L2, Scheme.SWITCH):
        return e * e
    if robust.scheme == Scheme.HUBER:
        return 2.0 * huber(e, robust.effective_kernel_width).rho
    if robust.scheme == Scheme.CAUCHY:
        return 2.0 * cauchy(e, robust.effective_kernel_width).rho
    if robust.scheme == Scheme.DCS:
        s = np.asarray(dcs_scale(robust.dcs_phi, e * e))
        return s * s * e * e
    if robust.scheme == Scheme.MAXMIX:
        pen = maxmix_penalty(robust)
        return np.minimum(e * e, e * e / robust.null_variance_inflation + pen)
    raise ValueError(f"unknown scheme {robust.scheme}")


def augment_with_switches(graph, robust: RobustConfig):
    """Attach one switch variable and one switch prior to every pseudorange
    factor; motion and prior factors are left untouched.

    Mutates and returns the graph. Switch slots are numbered per epoch in
    factor order.
    """
    from .graph import (
        Factor,
        FactorKind,
        VariableKind,
        switch_key,
        switch_prior_factor,
    )

    if graph.switch_augmented:
        raise AlreadyAugmentedError("graph already carries switch variables")

    slot_counter: dict[int, int] = {}
    new_factors = []
    for factor in graph.factors():
        if factor.kind != FactorKind.PSEUDORANGE:
            continue
        if len(factor.keys) == 2:
            raise AlreadyAugmentedError("pseudorange factor already switched")
        epoch_index = factor.keys[0].epoch_index
        slot = slot_counter.get(epoch_index, 0)
        slot_counter[epoch_index] = slot + 1
        skey = switch_key(epoch_index, slot)
        graph.add_variable(skey, np.array([robust.switch_prior]))
        factor.keys = (factor.keys[0], skey)
        new_factors.append(
            switch_prior_factor(skey, robust.switch_prior, robust.switch_prior_variance))
    for factor in new_factors:
        graph.add_factor(factor)
    graph.switch_augmented = True
    return graph
