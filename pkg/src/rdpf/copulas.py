"""Coupling structures, copula densities and Monte-Carlo sampling.

A source is a list of marginals glued together by a copula. Only the
independence copula and the Gaussian copula are built in; both are exposed
through :class:`CouplingSpec`, which is the extension point for other
parametric families.

Random generators are always passed in explicitly. Use
:func:`spawn_generators` to derive independent, reproducible streams from one
integer seed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import special

from .errors import InvalidArgumentError, InvalidParameterError
from .marginals import DELTA, Family, MarginalDistribution

__all__ = [
    "CouplingKind",
    "CouplingSpec",
    "SourceSpec",
    "gaussian_copula_log_density",
    "reference_log_density",
    "sample_uniform_batch",
    "sample_reference_batch",
    "spawn_generators",
    "as_generator",
]


class CouplingKind(str, enum.Enum):
    INDEPENDENCE = "independence"
    GAUSSIAN = "gaussian"

    @classmethod
    def parse(cls, name) -> "CouplingKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(name)
        except ValueError:
            raise InvalidParameterError(
                f"unknown coupling kind {name!r} (expected 'independence' or 'gaussian')"
            ) from None


def _check_correlation(corr: np.ndarray) -> np.ndarray:
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise InvalidParameterError("correlation matrix must be square")
    if not np.all(np.isfinite(corr)):
        raise InvalidParameterError("correlation matrix has non-finite entries")
    if not np.allclose(corr, corr.T, atol=1e-12):
        raise InvalidParameterError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
        raise InvalidParameterError("correlation matrix must have a unit diagonal")
    try:
        np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        raise InvalidParameterError("correlation matrix must be positive definite") from None
    return corr


def _cholesky(corr: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        raise InvalidParameterError("correlation matrix must be positive definite") from None


@dataclass(frozen=True)
class CouplingSpec:
    """Dependence structure of a d-dimensional source.

    ``correlation`` is ignored (and normalized to ``None``) for the
    independence copula.
    """

    kind: CouplingKind = CouplingKind.INDEPENDENCE
    correlation: tuple | None = None

    def __post_init__(self):
        kind = CouplingKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is CouplingKind.INDEPENDENCE:
            object.__setattr__(self, "correlation", None)
            return
        if self.correlation is None:
            raise InvalidParameterError("gaussian coupling requires a correlation matrix")
        corr = _check_correlation(np.array(self.correlation, dtype=float))
        object.__setattr__(self, "correlation", tuple(tuple(float(v) for v in row) for row in corr))

    @classmethod
    def gaussian(cls, correlation) -> "CouplingSpec":
        return cls(CouplingKind.GAUSSIAN, correlation)

    @classmethod
    def bivariate(cls, rho: float) -> "CouplingSpec":
        return cls.gaussian([[1.0, rho], [rho, 1.0]])

    @property
    def dim(self) -> int | None:
        return None if self.correlation is None else len(self.correlation)

    def matrix(self, d: int) -> np.ndarray:
        if self.correlation is None:
            return np.eye(d)
        return np.array(self.correlation)

    @property
    def is_independent(self) -> bool:
        if self.correlation is None:
            return True
        P = np.array(self.correlation)
        return bool(np.array_equal(P, np.eye(len(P))))

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value}
        if self.correlation is not None:
            out["correlation"] = [list(row) for row in self.correlation]
        return out


def gaussian_copula_log_density(corr, u) -> np.ndarray | float:
    """Log density of the Gaussian copula with correlation ``corr``.

    ``u`` has shape ``(d,)`` or ``(M, d)`` and is clamped to
    ``[DELTA, 1 - DELTA]``. With ``z = ndtri(u)``::

        log c(u) = -0.5 log det P - 0.5 z^T (P^{-1} - I) z
    """
    corr = _check_correlation(np.asarray(corr, dtype=float))
    L = _cholesky(corr)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return _gaussian_log_density(np.linalg.inv(corr) - np.eye(len(corr)), logdet, u)


def _gaussian_log_density(precision_minus_eye, logdet, u):
    u = np.asarray(u, dtype=float)
    z = special.ndtri(np.clip(u, DELTA, 1.0 - DELTA))
    quad = np.einsum("...i,ij,...j->...", z, precision_minus_eye, z)
    return -0.5 * logdet - 0.5 * quad


@dataclass(frozen=True)
class SourceSpec:
    """A d-dimensional source: d marginals plus a coupling copula."""

    marginals: tuple
    coupling: CouplingSpec = field(default_factory=CouplingSpec)

    def __post_init__(self):
        marginals = tuple(self.marginals)
        if len(marginals) < 1:
            raise InvalidParameterError("a source needs at least one marginal")
        for m in marginals:
            if not isinstance(m, MarginalDistribution):
                raise InvalidParameterError(f"expected MarginalDistribution, got {type(m).__name__}")
        object.__setattr__(self, "marginals", marginals)
        if not isinstance(self.coupling, CouplingSpec):
            raise InvalidParameterError("coupling must be a CouplingSpec")
        if self.coupling.dim is not None and self.coupling.dim != len(marginals):
            raise InvalidParameterError(
                f"coupling dimension {self.coupling.dim} does not match {len(marginals)} marginals"
            )

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @cached_property
    def _gaussian_terms(self):
        P = self.coupling.matrix(self.dim)
        L = _cholesky(P)
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        return L, np.linalg.inv(P) - np.eye(self.dim), logdet

    # -- copula space --------------------------------------------------------
    def log_copula_density(self, u) -> np.ndarray:
        """Log copula density at ``u`` of shape ``(..., d)``."""
        u = np.asarray(u, dtype=float)
        if self.coupling.is_independent:
            return np.zeros(u.shape[:-1])
        _, pm, logdet = self._gaussian_terms
        return _gaussian_log_density(pm, logdet, u)

    def quantile(self, u) -> np.ndarray:
        """Map uniforms of shape ``(..., d)`` to source space componentwise."""
        u = np.clip(np.asarray(u, dtype=float), DELTA, 1.0 - DELTA)
        cols = [m._quantile_clamped(u[..., j]) for j, m in enumerate(self.marginals)]
        return np.stack(cols, axis=-1)

    def sample_copula(self, M: int, rng) -> np.ndarray:
        """Draw ``M`` points from the coupling copula (uniform marginals)."""
        rng = as_generator(rng)
        if M < 1:
            raise InvalidArgumentError("sample size must be at least 1")
        if self.coupling.is_independent:
            return rng.random((M, self.dim))
        L = self._gaussian_terms[0]
        z = rng.standard_normal((M, self.dim)) @ L.T
        return special.ndtr(z)

    def sample(self, M: int, rng) -> np.ndarray:
        return self.quantile(self.sample_copula(M, rng))

    # -- summary statistics --------------------------------------------------
    @property
    def means(self) -> np.ndarray:
        return np.array([m.mean for m in self.marginals])

    def covariance(self, nodes: int = 120) -> np.ndarray:
        """Covariance matrix of the source.

        Off-diagonal terms under a Gaussian copula with non-Gaussian marginals
        are computed by two-dimensional Gauss-Hermite quadrature.
        """
        d = self.dim
        sd = np.sqrt([m.variance for m in self.marginals])
        P = self.coupling.matrix(d)
        cov = np.diag(sd**2)
        if self.coupling.is_independent:
            return cov
        x, w = np.polynomial.hermite_e.hermegauss(nodes)
        w = w / w.sum()
        for i in range(d):
            for j in range(i + 1, d):
                rho = P[i, j]
                mi, mj = self.marginals[i], self.marginals[j]
                if mi.family is Family.GAUSSIAN and mj.family is Family.GAUSSIAN:
                    c = rho * sd[i] * sd[j]
                else:
                    a = x[:, None]
                    b = rho * a + math.sqrt(1.0 - rho * rho) * x[None, :]
                    fa = mi._quantile_clamped(np.clip(special.ndtr(a), DELTA, 1 - DELTA)) - mi.mean
                    fb = mj._quantile_clamped(np.clip(special.ndtr(b), DELTA, 1 - DELTA)) - mj.mean
                    c = float(np.sum(w[:, None] * w[None, :] * fa * fb))
                cov[i, j] = cov[j, i] = c
        return cov

    def entropy(self) -> float:
        """Differential entropy ``sum_i h(X_i) + h(copula)`` in nats.

        For a Gaussian copula ``h(copula) = 0.5 log det P``.
        """
        h = sum(m.entropy() for m in self.marginals)
        if not self.coupling.is_independent:
            h += 0.5 * self._gaussian_terms[2]
        return h

    def to_dict(self) -> dict:
        return {"marginals": [m.to_dict() for m in self.marginals], "coupling": self.coupling.to_dict()}


def reference_log_density(problem, u) -> np.ndarray:
    """Log density of ``R = C_X (x) C_Y`` at ``u = (u_x, u_y)``.

    ``problem`` is anything with ``source`` and ``target`` attributes.
    """
    u = np.asarray(u, dtype=float)
    d = problem.source.dim
    if u.shape[-1] != 2 * d:
        raise InvalidArgumentError(f"expected {2 * d} copula coordinates, got {u.shape[-1]}")
    return problem.source.log_copula_density(u[..., :d]) + problem.target.log_copula_density(u[..., d:])


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def spawn_generators(seed, n: int) -> list[np.random.Generator]:
    """``n`` independent generators derived deterministically from ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(n)]


def sample_uniform_batch(dim: int, M: int, rng) -> np.ndarray:
    """``M x dim`` i.i.d. uniforms on ``[0, 1)``."""
    if M < 1:
        raise InvalidArgumentError("batch size must be at least 1")
    if dim < 1:
        raise InvalidArgumentError("dimension must be at least 1")
    return as_generator(rng).random((M, dim))


def sample_reference_batch(problem, M: int, rng) -> np.ndarray:
    """``M`` draws from ``R = C_X (x) C_Y`` (variance-reduced sampling)."""
    rng = as_generator(rng)
    return np.hstack([problem.source.sample_copula(M, rng), problem.target.sample_copula(M, rng)])
