"""Exact finite-grid surrogate of the copula projection, for validation.

For scalar sources the unit square is discretized into ``G x G`` cells and
each integral becomes a sum over cell centers (midpoint rule). On this finite
problem the dual is solved exactly by damped Newton iterations and the
primal by cyclic I-projections onto one linear constraint at a time. The two
routes share no code beyond the grid itself.

Moment targets on the grid are the moments of the discrete uniform law on
the cell centers. With them, the moment-constrained sets are nested around
the full-marginal set (every bin mass equal to ``1/G``), exactly as in the
continuous problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .copulas import SourceSpec
from .errors import DomainError, InvalidParameterError, NumericalError
from .projection import (
    DistortionKind,
    Multipliers,
    distortion_eval,
    legendre_reparametrization,
    orthonormal_legendre,
)

__all__ = [
    "GridInstance",
    "build_grid",
    "grid_dual_solve",
    "grid_primal_scaling",
    "grid_full_marginal_solve",
    "grid_eot_solve",
    "relaxation_ladder",
    "Ladder",
]


@dataclass(eq=False)
class GridInstance:
    """Midpoint discretization of ``[0,1]^2`` for a scalar source/target pair."""

    G: int
    centers: np.ndarray
    u: np.ndarray
    r: np.ndarray
    delta: np.ndarray

    @property
    def size(self) -> int:
        return self.r.size

    def discrete_moment(self, n: int) -> float:
        return float(np.mean(self.centers**n))

    def moment_features(self, N: int) -> np.ndarray:
        """Columns ``(1, Delta, u**1..u**N, v**1..v**N)``."""
        cols = [np.ones(self.size), self.delta]
        for i in range(2):
            cols.extend(self.u[:, i] ** n for n in range(1, N + 1))
        return np.column_stack(cols)

    def moment_targets(self, D: float, N: int) -> np.ndarray:
        alpha = [self.discrete_moment(n) for n in range(1, N + 1)]
        return np.array([1.0, D] + alpha * 2)


def build_grid(source: SourceSpec, target: SourceSpec | None = None, kind="mse", G: int = 64) -> GridInstance:
    """Discretize a scalar projection problem on a ``G x G`` grid."""
    target = source if target is None else target
    if source.dim != 1 or target.dim != 1:
        raise InvalidParameterError("the grid oracle supports scalar sources only")
    if G < 2:
        raise InvalidParameterError("G must be at least 2")
    kind = DistortionKind.parse(kind)
    c = (np.arange(G) + 0.5) / G
    uu, vv = np.meshgrid(c, c, indexing="ij")
    u = np.column_stack([uu.ravel(), vv.ravel()])
    log_r = source.log_copula_density(u[:, :1]) + target.log_copula_density(u[:, 1:])
    r = np.exp(log_r - logsumexp(log_r))
    x = source.quantile(u[:, :1])
    y = target.quantile(u[:, 1:])
    return GridInstance(G, c, u, r, distortion_eval(kind, x, y))


def _check_distortion(instance: GridInstance, D: float):
    lo, hi = float(instance.delta.min()), float(instance.delta.max())
    if not (lo <= D <= hi):
        raise DomainError(f"distortion {D!r} outside grid range [{lo:.6g}, {hi:.6g}]")


def _newton(F, t, log_r, x0, free=None, tol=1e-10, max_iter=500):
    """Minimize ``-t.x + sum_k r_k exp(F_k.x) - 1`` by damped Newton.

    Only coordinates in ``free`` move; the rest stay at ``x0``.
    """
    x = np.array(x0, dtype=float)
    free = np.arange(x.size) if free is None else np.asarray(free)
    Ff = F[:, free]
    tf = t[free]

    def value(z):
        return float(-t @ z + math.exp(logsumexp(F @ z + log_r)) - 1.0)

    f = value(x)
    for _ in range(max_iter):
        log_q = F @ x + log_r
        if np.max(log_q) > 700:
            raise NumericalError("grid dual diverged (infeasible constraints?)")
        q = np.exp(log_q)
        g = Ff.T @ q - tf
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return x, gnorm
        H = (Ff * q[:, None]).T @ Ff
        try:
            step = np.linalg.solve(H, g)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            # Ill-conditioned Hessian: fall back to a ridge-damped step.
            step = np.linalg.solve(H + 1e-8 * np.eye(H.shape[0]) * max(np.trace(H), 1.0), g)
        a = 1.0
        if float(g @ step) < 1e-12:
            # Inside the quadratic region the decrease is below rounding of f,
            # so the line search cannot tell steps apart: take the full step.
            x = x.copy()
            x[free] -= step
            f = value(x)
            continue
        while True:
            trial = x.copy()
            trial[free] -= a * step
            try:
                ft = value(trial)
            except OverflowError:
                ft = math.inf
            if ft <= f - 1e-4 * a * float(g @ step) or a < 1e-12:
                break
            a *= 0.5
        if a < 1e-12:
            if gnorm <= 1e3 * tol:
                return x, gnorm
            raise NumericalError(f"grid Newton stalled at gradient norm {gnorm:.3g}")
        x, f = trial, ft
    raise NumericalError(f"grid Newton did not converge in {max_iter} iterations")


def grid_dual_solve(instance: GridInstance, D: float, N: int, tol: float = 1e-10):
    """Exact dual of the moment-constrained grid projection.

    Returns
    -------
    rate : float
        ``mu + theta*D + sum nu*alpha`` in nats.
    multipliers : Multipliers
        Optimal multipliers in monomial form.
    """
    _check_distortion(instance, D)
    F = instance.moment_features(N)
    t = instance.moment_targets(D, N)
    A = legendre_reparametrization(1, N)
    beta, _ = _newton(F @ A, A.T @ t, np.log(instance.r), np.zeros(F.shape[1]), tol=tol)
    lvec = A @ beta
    return float(t @ lvec), Multipliers.from_vector(lvec, 1, N)


def grid_eot_solve(instance: GridInstance, epsilon: float, N: int, tol: float = 1e-10):
    """Grid EOT with ``theta = -1/epsilon`` held fixed.

    Returns ``(D_eot, rate, achieved_distortion)``.
    """
    if not epsilon > 0:
        raise InvalidParameterError("epsilon must be positive")
    F = instance.moment_features(N)
    t = instance.moment_targets(0.0, N)
    A = legendre_reparametrization(1, N)
    x0 = np.zeros(F.shape[1])
    x0[1] = -1.0 / epsilon
    free = np.array([0] + list(range(2, F.shape[1])))
    beta, _ = _newton(F @ A, A.T @ t, np.log(instance.r), x0, free=free, tol=tol)
    q = np.exp(F @ A @ beta + np.log(instance.r))
    d_hat = float(q @ instance.delta)
    rate = float(np.sum(q * (F @ A @ beta)))
    return d_hat + epsilon * rate, rate, d_hat


def _marginal_features(instance: GridInstance):
    G = instance.G
    idx = np.rint(instance.u * G - 0.5).astype(int)
    cols = [np.ones(instance.size), instance.delta]
    for i in range(2):
        for k in range(G - 1):
            cols.append((idx[:, i] == k).astype(float))
    return np.column_stack(cols)


def grid_full_marginal_solve(instance: GridInstance, D: float, tol: float = 1e-10) -> float:
    """Projection with every marginal bin mass pinned to ``1/G``."""
    _check_distortion(instance, D)
    F = _marginal_features(instance)
    t = np.array([1.0, D] + [1.0 / instance.G] * (F.shape[1] - 2))
    x, _ = _newton(F, t, np.log(instance.r), np.zeros(F.shape[1]), tol=tol)
    return float(t @ x)


def _tilt(log_q, f, target, tol=1e-14, max_iter=200):
    """I-project ``q`` onto ``{E[f] = target}`` by exponential tilting."""
    lo, hi = -math.inf, math.inf
    s = 0.0
    for _ in range(max_iter):
        lw = log_q + s * f
        lw = lw - logsumexp(lw)
        w = np.exp(lw)
        m = float(w @ f)
        var = float(w @ (f - m) ** 2)
        err = m - target
        if abs(err) <= tol:
            break
        if err > 0:
            hi = s
        else:
            lo = s
        step = s - err / var if var > 0 else math.nan
        if not (lo < step < hi) or not math.isfinite(step):
            if math.isfinite(lo) and math.isfinite(hi):
                step = 0.5 * (lo + hi)
            else:
                step = s + (-1.0 if err > 0 else 1.0) * max(1.0, 2 * abs(s))
        s = step
    return lw


def grid_primal_scaling(
    instance: GridInstance,
    D: float | None,
    N: int,
    tol: float = 1e-9,
    max_cycles: int = 100_000,
):
    """Primal grid projection by cyclic iterative scaling.

    Each cycle tilts ``q`` onto the distortion constraint and then onto each
    marginal moment constraint in turn. ``D=None`` and ``N=0`` leave only
    normalization, so the result is ``q = r``.

    Returns
    -------
    rate : float
        ``KL(q || r)`` in nats.
    q : ndarray
        Optimal cell weights.
    """
    log_r = np.log(instance.r)
    constraints = []
    if D is not None:
        _check_distortion(instance, D)
        constraints.append((instance.delta, D))
    if N > 0:
        # Orthonormal features span the same constraint set as raw monomials
        # and make cyclic projection converge far faster.
        B = orthonormal_legendre(N)
        for i in range(2):
            powers = np.column_stack([instance.u[:, i] ** k for k in range(N + 1)])
            chist = np.column_stack([instance.centers**k for k in range(N + 1)])
            for n in range(N):
                f = powers @ B[n]
                constraints.append((f, float(np.mean(chist @ B[n]))))
    log_q = log_r.copy()
    for _ in range(max_cycles):
        for f, target in constraints:
            log_q = _tilt(log_q, f, target)
        q = np.exp(log_q)
        if all(abs(float(q @ f) - target) <= tol for f, target in constraints):
            return float(q @ (log_q - log_r)), q
    raise NumericalError(f"iterative scaling did not converge in {max_cycles} cycles")


@dataclass(frozen=True)
class Ladder:
    rates: tuple
    full_marginal_rate: float

    @property
    def orders(self) -> tuple:
        return tuple(range(1, len(self.rates) + 1))


def relaxation_ladder(instance: GridInstance, D: float, N_max: int) -> Ladder:
    """Grid rates for ``N = 1..N_max`` plus the full-marginal projection."""
    if not 1 <= N_max <= 8:
        raise InvalidParameterError("N_max must lie in 1..8 for grid conditioning")
    rates = tuple(grid_dual_solve(instance, D, N)[0] for N in range(1, N_max + 1))
    return Ladder(rates, grid_full_marginal_solve(instance, D))
