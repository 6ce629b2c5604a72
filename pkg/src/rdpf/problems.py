"""Solver entry points: OC-RDF, PR-RDPF, entropic OT and distortion sweeps."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .copulas import SourceSpec
from .errors import DomainError, InvalidParameterError, RdpfError
from .marginals import Family
from .optimizer import OptimizerConfig, SolveResult, run_estimation, validation_batch
from .projection import DistortionKind, Multipliers, ProjectionProblem, plugin_kl

__all__ = [
    "CurvePoint",
    "RDCurve",
    "EotResult",
    "gaussian_distortion_floor",
    "solve_ocrdf",
    "solve_prrdpf",
    "solve_eot",
    "sweep_curve",
]

logger = logging.getLogger(__name__)


def _all_gaussian(spec: SourceSpec) -> bool:
    return all(m.family is Family.GAUSSIAN for m in spec.marginals)


def gaussian_distortion_floor(source: SourceSpec, target: SourceSpec) -> float:
    """Smallest achievable MSE between two jointly Gaussian specs.

    This is the squared 2-Wasserstein distance
    ``|m_x - m_y|^2 + tr(Sx + Sy - 2 (Sx^1/2 Sy Sx^1/2)^1/2)``.
    """
    mx, my = source.means, target.means
    Sx, Sy = source.covariance(), target.covariance()
    rx = linalg.sqrtm(Sx)
    cross = linalg.sqrtm(rx @ Sy @ rx)
    return float(np.sum((mx - my) ** 2) + np.trace(Sx + Sy - 2.0 * np.real(cross)))


def _check_feasible(source, target, kind, D):
    if kind is DistortionKind.MSE and _all_gaussian(source) and _all_gaussian(target):
        floor = gaussian_distortion_floor(source, target)
        if D < floor * (1 - 1e-12) or (floor == 0.0 and D <= 0.0):
            raise DomainError(f"distortion {D!r} is below the Gaussian transport floor {floor:.6g}")


def solve_ocrdf(
    source: SourceSpec,
    target: SourceSpec,
    kind="mse",
    D: float = 1.0,
    N: int = 4,
    config: OptimizerConfig | None = None,
    init: Multipliers | None = None,
) -> SolveResult:
    """Output-constrained rate-distortion estimate at distortion ``D``.

    The value is the moment-relaxed rate, a lower bound that tightens as
    ``N`` grows.
    """
    kind = DistortionKind.parse(kind)
    _check_feasible(source, target, kind, D)
    problem = ProjectionProblem(source, target, kind, D, N)
    return run_estimation(problem, config, init)


def solve_prrdpf(source: SourceSpec, kind="mse", D: float = 1.0, N: int = 4, config=None, init=None) -> SolveResult:
    """Perfect-realism RDPF: the OC-RDF with the target pinned to the source."""
    return solve_ocrdf(source, source, kind, D, N, config, init)


@dataclass(eq=False)
class EotResult:
    """Entropic OT value ``D_eot = E_Q[Delta] + epsilon * I(Q)``."""

    epsilon: float
    D_eot: float
    coupling_rate_nats: float
    achieved_distortion: float
    solve: SolveResult


def solve_eot(
    source: SourceSpec,
    target: SourceSpec,
    kind="mse",
    epsilon: float = 1.0,
    N: int = 4,
    config: OptimizerConfig | None = None,
    init: Multipliers | None = None,
) -> EotResult:
    """Entropic optimal transport through the OC-RDF dual.

    The distortion multiplier is pinned at ``theta = -1/epsilon`` and only the
    normalization and marginal multipliers are optimized. The distortion and
    rate are then read off the resulting coupling on the validation batch,
    the rate as a self-normalized KL estimate.
    """
    epsilon = float(epsilon)
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise InvalidParameterError(f"epsilon must be positive, got {epsilon!r}")
    kind = DistortionKind.parse(kind)
    theta = -1.0 / epsilon
    # D only enters the pinned theta coordinate; any positive placeholder works.
    problem = ProjectionProblem(source, target, kind, 1.0, N)
    if init is None:
        init = Multipliers.zeros(problem)
    config = config or OptimizerConfig()
    res = run_estimation(problem, config, init, fixed_theta=theta)
    d_hat = res.achieved_distortion
    # mu + theta*D_hat + sum nu*alpha carries the residual normalization
    # error times 1/epsilon-sized multipliers; the self-normalized KL does not.
    rate = plugin_kl(res.multipliers, problem, validation_batch(problem, config))
    residuals = res.residuals.copy()
    residuals[1] = 0.0
    res = replace(res, mi_nats=rate, residuals=residuals, D=d_hat)
    return EotResult(epsilon, d_hat + epsilon * rate, rate, d_hat, res)


@dataclass(frozen=True)
class CurvePoint:
    D: float
    rate_nats: float
    achieved_distortion: float
    residual_max: float
    converged: bool = False
    iterations: int = 0
    error: str | None = None

    @property
    def rate_bits(self) -> float:
        return self.rate_nats / math.log(2.0)


@dataclass(eq=False)
class RDCurve:
    points: list
    metadata: dict = field(default_factory=dict)

    @property
    def D(self) -> np.ndarray:
        return np.array([p.D for p in self.points])

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate_nats for p in self.points])

    @property
    def total_iterations(self) -> int:
        return sum(p.iterations for p in self.points)


def _point(res: SolveResult) -> CurvePoint:
    return CurvePoint(
        D=res.D,
        rate_nats=res.mi_nats,
        achieved_distortion=res.achieved_distortion,
        residual_max=res.residual_max,
        converged=res.converged,
        iterations=res.iterations,
    )


def _failed(D, exc) -> CurvePoint:
    return CurvePoint(D, float("nan"), float("nan"), float("nan"), error=f"{type(exc).__name__}: {exc}")


def _solve_cold(args):
    problem, config = args
    try:
        return _point(run_estimation(problem, config))
    except RdpfError as exc:
        return _failed(problem.D, exc)


def point_seed(seed: int, index: int) -> int:
    """Independent per-point seed used by parallel sweeps."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def sweep_curve(
    template: ProjectionProblem,
    D_grid,
    config: OptimizerConfig | None = None,
    warm_start: bool = True,
    parallel: bool = False,
    max_workers: int | None = None,
) -> RDCurve:
    """Solve ``template`` at every distortion level of ``D_grid``.

    Sequential sweeps run from the largest ``D`` down and warm-start each point
    from its neighbour's multipliers; they are bit-reproducible. Parallel
    sweeps solve cold-started points concurrently, each with its own seed
    stream derived from ``config.seed``.
    """
    config = config or OptimizerConfig()
    grid = [float(D) for D in D_grid]
    if not grid:
        raise InvalidParameterError("D_grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidParameterError("D_grid must be strictly increasing")
    metadata = {
        "source": template.source.to_dict(),
        "target": template.target.to_dict(),
        "distortion": template.distortion_kind.value,
        "N": template.N,
        "M": config.batch_size,
        "T": config.iterations,
        "seed": config.seed,
        "warm_start": bool(warm_start and not parallel),
    }
    if parallel:
        jobs = [(template.with_D(D), config.replace(seed=point_seed(config.seed, i))) for i, D in enumerate(grid)]
        workers = max_workers or min(len(jobs), os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_solve_cold, jobs))
        return RDCurve(points, metadata)

    points = {}
    init = None
    for D in reversed(grid):
        problem = template.with_D(D)
        try:
            _check_feasible(problem.source, problem.target, problem.distortion_kind, D)
            res = run_estimation(problem, config, init if warm_start else None)
        except RdpfError as exc:
            logger.warning("sweep point D=%g failed: %s", D, exc)
            points[D] = _failed(D, exc)
            continue
        points[D] = _point(res)
        init = res.multipliers
    return RDCurve([points[D] for D in grid], metadata)
