"""Univariate continuous marginal families.

Each family is described by a location and a positive scale, using the same
conventions as :mod:`scipy.stats`:

==============  =====================  ======================
family          location               scale
==============  =====================  ======================
gaussian        mean                   standard deviation
laplace         median                 b (variance ``2 b**2``)
exponential     left end of support    ``1 / rate``
uniform         left end of support    width
==============  =====================  ======================

The quantile function is what carries the distortion measure into copula
space, so it is vectorized and clamps its argument to ``[DELTA, 1 - DELTA]``
before inversion. All entropies are in nats.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import InvalidArgumentError, InvalidParameterError

__all__ = [
    "DELTA",
    "Family",
    "MarginalDistribution",
    "make_standardized",
    "cdf_eval",
    "quantile_eval",
    "differential_entropy",
    "entropy_power",
]

#: Clamp applied to uniforms before quantile inversion.
DELTA = 1e-12

_TWO_PI_E = 2.0 * math.pi * math.e


class Family(str, enum.Enum):
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    EXPONENTIAL = "exponential"
    UNIFORM = "uniform"

    @classmethod
    def parse(cls, name) -> "Family":
        if isinstance(name, cls):
            return name
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(f.value for f in cls)
            raise InvalidParameterError(
                f"unknown distribution family {name!r} (expected one of: {valid})"
            ) from None


@dataclass(frozen=True)
class MarginalDistribution:
    """A univariate distribution from one of the supported families."""

    family: Family
    location: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        scale = float(self.scale)
        location = float(self.location)
        if not (math.isfinite(scale) and scale > 0.0):
            raise InvalidParameterError(f"scale must be positive and finite, got {self.scale!r}")
        if not math.isfinite(location):
            raise InvalidParameterError(f"location must be finite, got {self.location!r}")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "location", location)

    # -- moments -------------------------------------------------------------
    @property
    def mean(self) -> float:
        f, loc, s = self.family, self.location, self.scale
        if f is Family.EXPONENTIAL:
            return loc + s
        if f is Family.UNIFORM:
            return loc + 0.5 * s
        return loc

    @property
    def variance(self) -> float:
        f, s = self.family, self.scale
        if f is Family.GAUSSIAN:
            return s * s
        if f is Family.LAPLACE:
            return 2.0 * s * s
        if f is Family.EXPONENTIAL:
            return s * s
        return s * s / 12.0

    # -- distribution functions ----------------------------------------------
    def cdf(self, x):
        z = (np.asarray(x, dtype=float) - self.location) / self.scale
        f = self.family
        if f is Family.GAUSSIAN:
            out = special.ndtr(z)
        elif f is Family.LAPLACE:
            neg = z < 0
            out = np.where(neg, 0.5 * np.exp(np.minimum(z, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(z, 0.0)))
        elif f is Family.EXPONENTIAL:
            out = np.where(z < 0, 0.0, -np.expm1(-np.maximum(z, 0.0)))
        else:
            out = np.clip(z, 0.0, 1.0)
        return out[()] if np.ndim(out) == 0 else out

    def quantile(self, u):
        """Generalized inverse of :meth:`cdf`.

        ``u`` must lie in ``[0, 1]``; it is clamped to ``[DELTA, 1 - DELTA]``
        so that unbounded families return finite values.
        """
        u = np.asarray(u, dtype=float)
        if np.any((u < 0.0) | (u > 1.0)) or np.any(np.isnan(u)):
            raise InvalidArgumentError("quantile argument must lie in [0, 1]")
        u = np.clip(u, DELTA, 1.0 - DELTA)
        return self._quantile_clamped(u)

    def _quantile_clamped(self, u):
        # No range checks: the Monte-Carlo hot path calls this with
        # already-clamped uniforms.
        f, loc, s = self.family, self.location, self.scale
        if f is Family.GAUSSIAN:
            out = loc + s * special.ndtri(u)
        elif f is Family.LAPLACE:
            lower = u < 0.5
            out = np.where(
                lower,
                loc + s * np.log(2.0 * np.where(lower, u, 0.5)),
                loc - s * np.log(2.0 * (1.0 - np.where(lower, 0.5, u))),
            )
        elif f is Family.EXPONENTIAL:
            out = loc - s * np.log1p(-u)
        else:
            out = loc + s * u
        return out[()] if np.ndim(out) == 0 else out

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x - self.location) / self.scale
        f, s = self.family, self.scale
        if f is Family.GAUSSIAN:
            out = np.exp(-0.5 * z * z) / (s * math.sqrt(2.0 * math.pi))
        elif f is Family.LAPLACE:
            out = 0.5 * np.exp(-np.abs(z)) / s
        elif f is Family.EXPONENTIAL:
            out = np.where(z < 0, 0.0, np.exp(-np.maximum(z, 0.0)) / s)
        else:
            out = np.where((z >= 0) & (z <= 1), 1.0 / s, 0.0)
        return out[()] if np.ndim(out) == 0 else out

    @property
    def support(self) -> tuple[float, float]:
        f, loc, s = self.family, self.location, self.scale
        if f is Family.EXPONENTIAL:
            return loc, math.inf
        if f is Family.UNIFORM:
            return loc, loc + s
        return -math.inf, math.inf

    # -- information measures ------------------------------------------------
    def entropy(self) -> float:
        """Differential entropy in nats."""
        f, s = self.family, self.scale
        if f is Family.GAUSSIAN:
            return 0.5 * math.log(_TWO_PI_E * s * s)
        if f is Family.LAPLACE:
            return 1.0 + math.log(2.0 * s)
        if f is Family.EXPONENTIAL:
            return 1.0 + math.log(s)
        return math.log(s)

    def entropy_power(self) -> float:
        return math.exp(2.0 * self.entropy()) / _TWO_PI_E

    def to_dict(self) -> dict:
        return {"family": self.family.value, "location": self.location, "scale": self.scale}


def make_standardized(family, mean: float = 0.0, variance: float = 1.0) -> MarginalDistribution:
    """Build a distribution of the given family with prescribed mean and variance.

    The exponential family is shifted so that its mean matches ``mean``;
    its support then starts at ``mean - sqrt(variance)``.
    """
    family = Family.parse(family)
    variance = float(variance)
    if not (math.isfinite(variance) and variance > 0.0):
        raise InvalidParameterError(f"variance must be positive, got {variance!r}")
    sd = math.sqrt(variance)
    if family is Family.GAUSSIAN:
        return MarginalDistribution(family, mean, sd)
    if family is Family.LAPLACE:
        return MarginalDistribution(family, mean, sd / math.sqrt(2.0))
    if family is Family.EXPONENTIAL:
        return MarginalDistribution(family, mean - sd, sd)
    width = math.sqrt(12.0 * variance)
    return MarginalDistribution(family, mean - 0.5 * width, width)


def cdf_eval(dist: MarginalDistribution, x):
    return dist.cdf(x)


def quantile_eval(dist: MarginalDistribution, u):
    return dist.quantile(u)


def differential_entropy(dist: MarginalDistribution) -> float:
    return dist.entropy()


def entropy_power(dist: MarginalDistribution) -> float:
    """``exp(2 h) / (2 pi e)``: variance of the Gaussian with equal entropy."""
    return dist.entropy_power()
