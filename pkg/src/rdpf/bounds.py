"""Closed-form Shannon lower bounds for the perfect-realism RDPF under MSE.

The scalar Gaussian perfect-realism rate is ``0.5 log(s2 / (D - D**2/(4 s2)))``
for ``0 < D <= 2 s2``. For a Gaussian vector source with covariance
eigenvalues ``lambda_i`` the rate is the minimum of the sum of scalar rates over
allocations ``sum D_i = D``. It is found by reverse water-filling, i.e. by
equalizing the slopes ``dR_i/dD_i`` across components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidParameterError, NumericalError

__all__ = [
    "SlbInstance",
    "scalar_gaussian_pr",
    "scalar_slb",
    "vector_gaussian_pr",
    "vector_slb",
    "slb_for_source",
    "gaussian_pr_slope",
]

_LOG_2PIE = math.log(2.0 * math.pi * math.e)


def _check_range(variance, D):
    if not variance > 0:
        raise DomainError(f"variance must be positive, got {variance!r}")
    if not (0 < D <= 2.0 * variance * (1 + 1e-12)):
        raise DomainError(f"distortion {D!r} outside (0, {2.0 * variance!r}]")


def scalar_gaussian_pr(variance: float, D: float) -> float:
    """Perfect-realism rate (nats) of a Gaussian source with the given variance."""
    _check_range(variance, D)
    D = min(D, 2.0 * variance)
    return max(0.0, 0.5 * math.log(variance / (D - D * D / (4.0 * variance))))


def gaussian_pr_slope(variance: float, D: float) -> float:
    """Derivative of :func:`scalar_gaussian_pr` with respect to ``D`` (<= 0)."""
    _check_range(variance, D)
    x = D / variance
    return -0.5 * (1.0 - 0.5 * x) / (variance * x * (1.0 - 0.25 * x))


def scalar_slb(entropy_power: float, variance: float, D: float) -> float:
    """Shannon lower bound ``max(0, 0.5 log(N(X) / (D - D**2/(4 s2))))``."""
    _check_range(variance, D)
    D = min(D, 2.0 * variance)
    denom = D - D * D / (4.0 * variance)
    return max(0.0, 0.5 * math.log(entropy_power / denom))


def vector_gaussian_pr(eigenvalues, D: float, max_iter: int = 200):
    """Gaussian vector PR-RDPF by reverse water-filling.

    Parameters
    ----------
    eigenvalues : sequence of float
        Covariance eigenvalues, all strictly positive.
    D : float
        Total MSE budget in ``(0, 2 * sum(eigenvalues)]``.

    Returns
    -------
    rate : float
        Minimum of ``sum_i scalar_gaussian_pr(lambda_i, D_i)``, in nats.
    allocation : ndarray
        Per-component distortions ``D_i`` summing to ``D``.
    """
    lam = np.asarray(eigenvalues, dtype=float).ravel()
    if lam.size == 0 or np.any(~np.isfinite(lam)) or np.any(lam <= 0):
        raise DomainError("eigenvalues must be finite and strictly positive")
    total = 2.0 * lam.sum()
    if not (0 < D <= total * (1 + 1e-12)):
        raise DomainError(f"distortion {D!r} outside (0, {total!r}]")
    if D >= total:
        return 0.0, 2.0 * lam

    # At common slope -k/2, D_i / lambda_i is the root in (0, 2] of
    # (k lambda_i / 4) x^2 - (k lambda_i + 1/2) x + 1 = 0, written below in
    # cancellation-free form. The sum decreases in k, so bisect on log k.
    def alloc(k):
        kl = k * lam
        return lam * 2.0 / ((kl + 0.5) + np.sqrt(kl * kl + 0.25))

    lo, hi = -60.0, 60.0
    if alloc(math.exp(hi)).sum() > D or alloc(math.exp(lo)).sum() < D:
        raise NumericalError("water level outside bracketing interval")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if alloc(math.exp(mid)).sum() > D:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4.0 * np.spacing(max(abs(lo), abs(hi), 1.0)):
            break
    else:
        raise NumericalError("reverse water-filling bisection did not converge")
    Di = alloc(math.exp(0.5 * (lo + hi)))
    Di *= D / Di.sum()
    Di = np.minimum(Di, 2.0 * lam)
    rate = sum(scalar_gaussian_pr(l, d) for l, d in zip(lam, Di))
    return float(rate), Di


@dataclass(frozen=True)
class SlbInstance:
    """Inputs of the vector Shannon lower bound."""

    entropy_nats: float
    covariance: np.ndarray
    D: float

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
            raise InvalidParameterError("covariance must be a symmetric square matrix")
        if np.linalg.eigvalsh(cov).min() < -1e-12:
            raise InvalidParameterError("covariance must be positive semi-definite")
        object.__setattr__(self, "covariance", cov)


def vector_slb(instance: SlbInstance) -> float:
    """``max(0, h(X) - h(X*) + R_G(D))`` with ``X* ~ N(0, covariance)``."""
    cov = instance.covariance
    d = cov.shape[0]
    eig = np.linalg.eigvalsh(cov)
    if eig.min() <= 1e-14 * max(eig.max(), 1.0):
        raise DomainError("singular covariance: the Gaussian entropy is -infinity")
    h_gauss = 0.5 * (d * _LOG_2PIE + float(np.sum(np.log(eig))))
    rate, _ = vector_gaussian_pr(eig, instance.D)
    return max(0.0, instance.entropy_nats - h_gauss + rate)


def slb_for_source(source, D: float) -> float:
    """Shannon lower bound of a :class:`~rdpf.copulas.SourceSpec` under MSE."""
    if source.dim == 1:
        m = source.marginals[0]
        return scalar_slb(m.entropy_power(), m.variance, D)
    return vector_slb(SlbInstance(source.entropy(), source.covariance(), D))
