"""Moment-relaxed I-projection in copula space.

The optimal copula of the relaxed problem has an exponential-family density
with respect to the product reference ``R = C_X (x) C_Y``::

    log dQ/dR(u) = mu + theta * Delta(Fx^-1(u_x), Fy^-1(u_y))
                   + sum_{i=1}^{2d} sum_{n=1}^{N} nu[i, n] * u_i**n

and the multipliers minimize the convex dual::

    f(l) = -mu - theta*D - sum_{i,n} nu[i, n] * alpha_n + (E_R[dQ/dR] - 1)

with ``alpha_n = 1/(n+1)``. At the optimum the mutual information equals
``KL(Q || R) = mu + theta*D + sum nu*alpha``, i.e. minus the dual value.

Expectations under ``R`` are Monte-Carlo estimates over a batch of points in
``[0,1]^{2d}``. A batch is either i.i.d. uniform (the reference density then
enters the importance weight) or drawn from ``R`` itself. Every estimate is
accumulated in the log domain.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.special import logsumexp

from .copulas import SourceSpec, reference_log_density
from .errors import DivergenceError, InvalidArgumentError, InvalidParameterError
from .marginals import DELTA

__all__ = [
    "DistortionKind",
    "ProjectionProblem",
    "Multipliers",
    "FeatureBatch",
    "uniform_moment",
    "distortion_eval",
    "featurize",
    "log_radon_nikodym",
    "dual_objective",
    "dual_gradient",
    "dual_hessian",
    "mutual_information",
    "plugin_expectation",
    "constraint_residuals",
    "plugin_kl",
    "legendre_reparametrization",
]

#: Largest log-weight tolerated by the Monte-Carlo accumulator.
MAX_LOG_WEIGHT = 700.0


class DistortionKind(str, enum.Enum):
    MSE = "mse"
    MAE = "mae"

    @classmethod
    def parse(cls, name) -> "DistortionKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise InvalidParameterError(f"unknown distortion kind {name!r} (expected 'mse' or 'mae')") from None


def uniform_moment(n: int) -> float:
    """n-th raw moment of the uniform law on [0, 1]."""
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"moment order must be an integer >= 1, got {n!r}")
    return 1.0 / (n + 1)


def distortion_eval(kind, x, y):
    """Sum of squared (MSE) or absolute (MAE) differences over the last axis."""
    kind = DistortionKind.parse(kind)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1:] != y.shape[-1:]:
        raise InvalidArgumentError(f"dimension mismatch: {x.shape} vs {y.shape}")
    diff = x - y
    if kind is DistortionKind.MSE:
        out = np.sum(diff * diff, axis=-1)
    else:
        out = np.sum(np.abs(diff), axis=-1)
    return out[()] if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ProjectionProblem:
    """One instance of the moment-relaxed projection."""

    source: SourceSpec
    target: SourceSpec
    distortion_kind: DistortionKind = DistortionKind.MSE
    D: float = 1.0
    N: int = 4

    def __post_init__(self):
        object.__setattr__(self, "distortion_kind", DistortionKind.parse(self.distortion_kind))
        if self.source.dim != self.target.dim:
            raise InvalidParameterError(
                f"source dimension {self.source.dim} != target dimension {self.target.dim}"
            )
        D = float(self.D)
        if not (math.isfinite(D) and D > 0):
            raise InvalidParameterError(f"distortion level must be positive, got {self.D!r}")
        object.__setattr__(self, "D", D)
        if int(self.N) != self.N or self.N < 1:
            raise InvalidParameterError(f"moment order N must be an integer >= 1, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def dim(self) -> int:
        return self.source.dim

    @property
    def n_params(self) -> int:
        return 2 + 2 * self.dim * self.N

    def with_D(self, D: float) -> "ProjectionProblem":
        return ProjectionProblem(self.source, self.target, self.distortion_kind, D, self.N)

    def constraint_targets(self) -> np.ndarray:
        """``(1, D, alpha_1..alpha_N, ..., alpha_1..alpha_N)``."""
        alpha = [uniform_moment(n) for n in range(1, self.N + 1)]
        return np.array([1.0, self.D] + alpha * (2 * self.dim))

    def distortion(self, u) -> np.ndarray:
        """Distortion of copula points mapped back through the quantiles."""
        u = np.asarray(u, dtype=float)
        d = self.dim
        x = self.source.quantile(u[..., :d])
        y = self.target.quantile(u[..., d:])
        return distortion_eval(self.distortion_kind, x, y)

    def reference_distortion(self, M: int = 2**18, seed: int = 12345) -> float:
        """Monte-Carlo estimate of ``E_R[Delta]``, the zero-rate distortion."""
        from .copulas import sample_reference_batch

        return float(np.mean(self.distortion(sample_reference_batch(self, M, seed))))


@dataclass(eq=False)
class Multipliers:
    """Dual variables ``(mu, theta, nu)`` with ``nu`` of shape ``(2d, N)``."""

    mu: float
    theta: float
    nu: np.ndarray

    def __post_init__(self):
        self.mu = float(self.mu)
        self.theta = float(self.theta)
        self.nu = np.array(self.nu, dtype=float)
        if self.nu.ndim != 2:
            raise InvalidParameterError("nu must be a (2d, N) matrix")

    @property
    def size(self) -> int:
        return 2 + self.nu.size

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.mu, self.theta], self.nu.ravel()])

    @classmethod
    def from_vector(cls, vec, d: int, N: int) -> "Multipliers":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (2 + 2 * d * N,):
            raise InvalidParameterError(f"expected {2 + 2 * d * N} multipliers, got shape {vec.shape}")
        return cls(vec[0], vec[1], vec[2:].reshape(2 * d, N))

    @classmethod
    def zeros(cls, problem: ProjectionProblem) -> "Multipliers":
        return cls(0.0, 0.0, np.zeros((2 * problem.dim, problem.N)))

    @classmethod
    def default_init(cls, problem: ProjectionProblem) -> "Multipliers":
        return cls(0.0, -1.0, np.zeros((2 * problem.dim, problem.N)))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_vector())))

    def to_dict(self) -> dict:
        return {"mu": self.mu, "theta": self.theta, "nu": self.nu.tolist()}


def _as_vector(l, problem: ProjectionProblem) -> np.ndarray:
    if isinstance(l, Multipliers):
        vec = l.to_vector()
    else:
        vec = np.asarray(l, dtype=float)
    if vec.shape != (problem.n_params,):
        raise InvalidArgumentError(f"expected {problem.n_params} multipliers, got shape {vec.shape}")
    return vec


@dataclass(eq=False)
class FeatureBatch:
    """Precomputed sufficient statistics of a batch.

    ``omega`` has columns ``(1, Delta, u_1, ..., u_1**N, ..., u_2d**N)``;
    ``log_base`` is the log reference density for uniform batches and zero
    for batches drawn from ``R``.
    """

    u: np.ndarray
    omega: np.ndarray
    log_base: np.ndarray

    @property
    def size(self) -> int:
        return self.omega.shape[0]

    @property
    def delta(self) -> np.ndarray:
        return self.omega[:, 1]


def featurize(problem: ProjectionProblem, u, from_reference: bool = False) -> FeatureBatch:
    """Evaluate the sufficient statistics of ``problem`` on a batch ``u``."""
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] != 2 * problem.dim:
        raise InvalidArgumentError(f"batch must have shape (M, {2 * problem.dim}), got {u.shape}")
    if u.shape[0] < 1:
        raise InvalidArgumentError("batch must be nonempty")
    u = np.clip(u, DELTA, 1.0 - DELTA)
    M, k = u.shape
    N = problem.N
    omega = np.empty((M, 2 + k * N))
    omega[:, 0] = 1.0
    omega[:, 1] = problem.distortion(u)
    powers = np.cumprod(np.repeat(u[:, :, None], N, axis=2), axis=2)
    omega[:, 2:] = powers.reshape(M, k * N)
    if from_reference:
        log_base = np.zeros(M)
    else:
        log_base = np.asarray(reference_log_density(problem, u), dtype=float)
    return FeatureBatch(u, omega, log_base)


def _features(problem, batch) -> FeatureBatch:
    if isinstance(batch, FeatureBatch):
        return batch
    return featurize(problem, batch)


def _log_weights(vec: np.ndarray, fb: FeatureBatch) -> np.ndarray:
    log_w = fb.omega @ vec + fb.log_base
    peak = float(np.max(log_w))
    if not math.isfinite(peak) or peak > MAX_LOG_WEIGHT:
        raise DivergenceError(
            f"log importance weight reached {peak:.4g} (> {MAX_LOG_WEIGHT}); step size is likely too large",
            max_exponent=peak,
        )
    return log_w


def log_radon_nikodym(l, u, problem: ProjectionProblem):
    """``log dQ/dR(u)`` for one point of shape ``(2d,)`` or a batch ``(M, 2d)``."""
    vec = _as_vector(l, problem)
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    fb = featurize(problem, u[None, :] if single else u, from_reference=True)
    out = fb.omega @ vec
    return float(out[0]) if single else out


def estimate_normalizer(l, problem, batch) -> float:
    """Monte-Carlo estimate of ``E_R[dQ/dR]`` (should be 1 when feasible)."""
    fb = _features(problem, batch)
    log_w = _log_weights(_as_vector(l, problem), fb)
    return math.exp(logsumexp(log_w) - math.log(fb.size))


def dual_objective(l, problem: ProjectionProblem, batch) -> float:
    """Monte-Carlo value of the dual objective, ``-1`` constant included."""
    vec = _as_vector(l, problem)
    fb = _features(problem, batch)
    log_w = _log_weights(vec, fb)
    e_hat = math.exp(logsumexp(log_w) - math.log(fb.size))
    return float(-problem.constraint_targets() @ vec + e_hat - 1.0)


def _objective_and_gradient(vec, problem, fb, targets):
    log_w = _log_weights(vec, fb)
    peak = float(np.max(log_w))
    w = np.exp(log_w - peak)
    scale = math.exp(peak) / fb.size
    e_hat = float(np.sum(w)) * scale
    grad = (fb.omega.T @ w) * scale - targets
    return float(-targets @ vec + e_hat - 1.0), grad


def dual_value_and_gradient(l, problem: ProjectionProblem, batch):
    vec = _as_vector(l, problem)
    return _objective_and_gradient(vec, problem, _features(problem, batch), problem.constraint_targets())


def dual_gradient(l, problem: ProjectionProblem, batch) -> np.ndarray:
    """Gradient of :func:`dual_objective` on the same batch.

    Components are the constraint residuals
    ``(E[w] - 1, E[Delta w] - D, E[u_i**n w] - alpha_n)``.
    """
    return dual_value_and_gradient(l, problem, batch)[1]


def dual_hessian(l, problem: ProjectionProblem, batch) -> np.ndarray:
    """Sample Hessian ``E[omega omega^T w]``."""
    vec = _as_vector(l, problem)
    fb = _features(problem, batch)
    log_w = _log_weights(vec, fb)
    peak = float(np.max(log_w))
    w = np.exp(log_w - peak)
    return (fb.omega * w[:, None]).T @ fb.omega * (math.exp(peak) / fb.size)


def mutual_information(l, problem: ProjectionProblem) -> float:
    """``KL(Q || R) = mu + theta*D + sum nu*alpha`` in nats (deterministic)."""
    return float(problem.constraint_targets() @ _as_vector(l, problem))


def plugin_expectation(l, problem: ProjectionProblem, g, batch) -> float:
    """Importance-sampled ``E_Q[g]``.

    ``g`` is either a callable on the batch uniforms ``(M, 2d) -> (M,)`` or an
    array of precomputed values.
    """
    vec = _as_vector(l, problem)
    fb = _features(problem, batch)
    values = g(fb.u) if callable(g) else np.asarray(g, dtype=float)
    values = np.broadcast_to(values, (fb.size,))
    log_w = _log_weights(vec, fb)
    peak = float(np.max(log_w))
    return float(np.mean(values * np.exp(log_w - peak)) * math.exp(peak))


def constraint_residuals(l, problem: ProjectionProblem, batch) -> np.ndarray:
    """Constraint residuals of the normalized measure ``Q``.

    The first entry is ``E[w] - 1``. The others are ratio estimates
    ``E[g w] / E[w] - target`` for ``g = Delta, u_i**n``, in which the noise
    of the normalizer cancels out.
    """
    vec = _as_vector(l, problem)
    fb = _features(problem, batch)
    log_w = _log_weights(vec, fb)
    peak = float(np.max(log_w))
    w = np.exp(log_w - peak)
    total = float(np.sum(w))
    out = (fb.omega.T @ w) / total - problem.constraint_targets()
    out[0] = total * math.exp(peak) / fb.size - 1.0
    return out


def plugin_kl(l, problem: ProjectionProblem, batch) -> float:
    """Self-normalized estimate of ``KL(Q || R)`` on a batch.

    With ``p_k = w_k / sum(w)`` the estimate is ``sum p_k log(M p_k)``
    (batches from ``R``) or its importance-weighted analogue. Unlike
    :func:`mutual_information` it does not assume the constraints hold, so
    it stays accurate when ``Q`` is close to ``R``.
    """
    vec = _as_vector(l, problem)
    fb = _features(problem, batch)
    log_w = _log_weights(vec, fb)
    log_p = log_w - logsumexp(log_w)
    # log dQ/dR at each point, normalized on the batch
    log_ratio = log_w - fb.log_base - (logsumexp(log_w) - math.log(fb.size))
    return float(np.exp(log_p) @ log_ratio)


def orthonormal_legendre(N: int) -> np.ndarray:
    """Monomial coefficients of the orthonormal shifted Legendre polynomials.

    Row ``n - 1`` holds the coefficients of ``u**0 .. u**N`` of the degree-n
    polynomial, orthonormal under the uniform law on [0, 1].
    """
    shift = np.polynomial.Polynomial([-1.0, 2.0])
    B = np.zeros((N, N + 1))
    for n in range(1, N + 1):
        c = np.zeros(n + 1)
        c[n] = 1.0
        poly = np.polynomial.Polynomial(npleg.leg2poly(c))(shift)
        B[n - 1, : n + 1] = poly.coef * math.sqrt(2 * n + 1)
    return B


def legendre_reparametrization(d: int, N: int) -> np.ndarray:
    """Matrix ``A`` with ``l = A @ beta``.

    ``beta`` indexes the same exponential family with orthonormal
    polynomial features in place of raw monomials; constants are folded
    into ``mu``.
    """
    B = orthonormal_legendre(N)
    P = 2 + 2 * d * N
    A = np.zeros((P, P))
    A[0, 0] = 1.0
    A[1, 1] = 1.0
    for i in range(2 * d):
        block = slice(2 + i * N, 2 + (i + 1) * N)
        for n in range(N):
            col = 2 + i * N + n
            A[0, col] = B[n, 0]
            A[block, col] = B[n, 1:]
    return A
