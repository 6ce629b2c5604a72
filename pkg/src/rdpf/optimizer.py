"""Mini-batch stochastic gradient descent on the convex dual.

Every iteration draws a fresh batch, computes the Monte-Carlo dual objective
and gradient, and takes one step with either plain SGD or Adam-style adaptive
moments. The returned multipliers are a tail average of the iterates.

Internally the moment multipliers are optimized in the coordinates of
orthonormal shifted Legendre polynomials (``basis="legendre"``). This spans
the same exponential family, so the optimum is unchanged, but the monomials
``u, u**2, ...`` are nearly collinear and make the raw coordinates badly
conditioned. Results are always reported in monomial form.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .copulas import sample_reference_batch, sample_uniform_batch, spawn_generators
from .errors import DivergenceError, InvalidParameterError, SolverError
from .projection import (
    FeatureBatch,
    Multipliers,
    ProjectionProblem,
    _as_vector,
    _objective_and_gradient,
    constraint_residuals,
    dual_objective,
    featurize,
    legendre_reparametrization,
    mutual_information,
)

__all__ = [
    "StepRule",
    "OptimizerConfig",
    "SolveResult",
    "run_estimation",
    "validation_batch",
    "finite_difference_gradient",
    "write_trace_csv",
]

logger = logging.getLogger(__name__)


class StepRule(str, enum.Enum):
    SGD = "sgd"
    ADAM = "adam"

    @classmethod
    def parse(cls, name) -> "StepRule":
        if isinstance(name, cls):
            return name
        key = str(name).lower().replace("-", "_")
        if key in ("adaptive_moments", "adaptivemoments"):
            return cls.ADAM
        try:
            return cls(key)
        except ValueError:
            raise InvalidParameterError(f"unknown step rule {name!r} (expected 'sgd' or 'adam')") from None


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyperparameters of :func:`run_estimation`.

    The step size at iteration k is ``step_size / (1 + step_decay * k)``.
    ``sampling="reference"`` draws batches from ``R`` directly instead of
    the uniform law, which lowers the variance under strong couplings.

    Every ``check_every`` iterations the tail-averaged iterate is scored on
    the validation batch; the run stops once the gradient norm there is at
    most ``tolerance``, with the distortion component divided by ``D``.
    """

    batch_size: int = 2**14
    iterations: int = 5000
    step_rule: StepRule = StepRule.ADAM
    step_size: float = 1e-2
    step_decay: float = 1e-3
    seed: int = 0
    averaging_window: int = 2000
    tolerance: float = 1e-2
    check_every: int = 250
    validation_factor: int = 4
    sampling: str = "uniform"
    basis: str = "legendre"
    max_restarts: int = 3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "step_rule", StepRule.parse(self.step_rule))
        if int(self.batch_size) != self.batch_size or self.batch_size < 2:
            raise InvalidParameterError(f"batch_size must be an integer >= 2, got {self.batch_size!r}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise InvalidParameterError(f"iterations must be an integer >= 1, got {self.iterations!r}")
        if not (self.step_size > 0 and math.isfinite(self.step_size)):
            raise InvalidParameterError(f"step_size must be positive, got {self.step_size!r}")
        if not (0 < self.step_decay <= 1):
            raise InvalidParameterError(f"step_decay must lie in (0, 1], got {self.step_decay!r}")
        if self.averaging_window < 1:
            raise InvalidParameterError("averaging_window must be >= 1")
        if not self.tolerance > 0:
            raise InvalidParameterError("tolerance must be positive")
        if self.check_every < 1:
            raise InvalidParameterError("check_every must be >= 1")
        if self.validation_factor < 4:
            raise InvalidParameterError("validation_factor must be >= 4")
        if self.sampling not in ("uniform", "reference"):
            raise InvalidParameterError(f"sampling must be 'uniform' or 'reference', got {self.sampling!r}")
        if self.basis not in ("legendre", "monomial"):
            raise InvalidParameterError(f"basis must be 'legendre' or 'monomial', got {self.basis!r}")
        if self.max_restarts < 0:
            raise InvalidParameterError("max_restarts must be >= 0")

    def replace(self, **changes) -> "OptimizerConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["step_rule"] = self.step_rule.value
        return out


@dataclass(eq=False)
class SolveResult:
    """Outcome of one estimation run.

    ``residuals`` holds the validation-batch constraint residuals in the
    order (normalization, distortion, moments of u_1..u_2d); see
    :func:`~rdpf.projection.constraint_residuals`.
    """

    multipliers: Multipliers
    mi_nats: float
    achieved_distortion: float
    residuals: np.ndarray
    trace: list = field(default_factory=list)
    seed: int = 0
    converged: bool = False
    iterations: int = 0
    restarts: int = 0
    step_size: float = 0.0
    wall_time: float = 0.0
    D: float = float("nan")

    @property
    def rate_bits(self) -> float:
        return self.mi_nats / math.log(2.0)

    @property
    def residual_max(self) -> float:
        """Largest absolute constraint residual, distortion included."""
        return float(np.max(np.abs(self.residuals)))

    @property
    def moment_residuals(self) -> np.ndarray:
        return self.residuals[2:]

    @property
    def distortion_residual(self) -> float:
        return float(self.residuals[1])


def _draw(problem, config, rng, size) -> FeatureBatch:
    if config.sampling == "reference":
        return featurize(problem, sample_reference_batch(problem, size, rng), from_reference=True)
    return featurize(problem, sample_uniform_batch(2 * problem.dim, size, rng))


def validation_batch(problem: ProjectionProblem, config: OptimizerConfig) -> FeatureBatch:
    """The held-out batch that :func:`run_estimation` scores residuals on."""
    _, valid_rng = spawn_generators(config.seed, 2)
    return _draw(problem, config, valid_rng, config.validation_factor * config.batch_size)


def _tail_average(history, k, window):
    n = min(window, (k + 1) // 2, k)
    idx = (k - 1 - np.arange(n)) % len(history)
    return history[idx].mean(axis=0)


def _attempt(problem, config, beta0, A, step_size, fixed_theta, train_rng, valid):
    P = problem.n_params
    targets = problem.constraint_targets()
    mask = np.ones(P)
    if fixed_theta is not None:
        mask[1] = 0.0
    # The stop test reads the distortion residual relative to D.
    stop_scale = mask.copy()
    stop_scale[1] /= max(abs(problem.D), 1e-12)
    beta = beta0.copy()
    m = np.zeros(P)
    v = np.zeros(P)
    W = config.averaging_window
    history = np.empty((W, P))
    trace = []
    converged = False
    k = 0
    try:
        for k in range(1, config.iterations + 1):
            fb = _draw(problem, config, train_rng, config.batch_size)
            value, grad_l = _objective_and_gradient(A @ beta, problem, fb, targets)
            grad_l = grad_l * mask
            trace.append((k, value, float(np.linalg.norm(grad_l))))
            g = A.T @ grad_l
            lr = step_size / (1.0 + config.step_decay * k)
            if config.step_rule is StepRule.ADAM:
                m = config.beta1 * m + (1 - config.beta1) * g
                v = config.beta2 * v + (1 - config.beta2) * g * g
                m_hat = m / (1 - config.beta1**k)
                v_hat = v / (1 - config.beta2**k)
                beta = beta - lr * m_hat / (np.sqrt(v_hat) + config.eps)
            else:
                beta = beta - lr * g
            history[(k - 1) % W] = beta
            if k % config.check_every == 0 or k == config.iterations:
                avg = _tail_average(history, k, W)
                _, gv = _objective_and_gradient(A @ avg, problem, valid, targets)
                if np.linalg.norm(gv * stop_scale) <= config.tolerance:
                    converged = True
                    break
    except DivergenceError as exc:
        exc.trace = trace
        raise
    return _tail_average(history, k, W), beta, trace, converged, k


def run_estimation(
    problem: ProjectionProblem,
    config: OptimizerConfig | None = None,
    init: Multipliers | None = None,
    fixed_theta: float | None = None,
) -> SolveResult:
    """Estimate the dual multipliers of ``problem`` by stochastic gradient descent.

    Parameters
    ----------
    problem : ProjectionProblem
        Instance to solve.
    config : OptimizerConfig, optional
        Hyperparameters; defaults to ``OptimizerConfig()``.
    init : Multipliers, optional
        Starting point, by default zero except ``theta = -1``.
    fixed_theta : float, optional
        Hold ``theta`` at this value and optimize the remaining multipliers
        only (used for entropic optimal transport).

    Returns
    -------
    SolveResult
        Tail-averaged multipliers, the mutual information they imply, and
        residuals on an independent validation batch of
        ``validation_factor * batch_size`` points.

    Raises
    ------
    SolverError
        If the log-weights diverge on every attempt. Each divergence halves the
        step size and restarts from ``init``, up to ``max_restarts`` times.
    """
    config = config or OptimizerConfig()
    start = time.perf_counter()
    if init is None:
        init = Multipliers.default_init(problem)
    l0 = _as_vector(init, problem).copy()
    if not np.all(np.isfinite(l0)):
        raise InvalidParameterError("initial multipliers must be finite")
    if fixed_theta is not None:
        l0[1] = float(fixed_theta)
    d, N = problem.dim, problem.N
    A = legendre_reparametrization(d, N) if config.basis == "legendre" else np.eye(problem.n_params)
    beta0 = np.linalg.solve(A, l0)

    train_seed, _ = spawn_generators(config.seed, 2)
    valid = validation_batch(problem, config)
    train_state = train_seed.bit_generator.state

    step_size = config.step_size
    last_trace = []
    for attempt in range(config.max_restarts + 1):
        train_seed.bit_generator.state = train_state
        try:
            avg, _, trace, converged, k = _attempt(
                problem, config, beta0, A, step_size, fixed_theta, train_seed, valid
            )
        except DivergenceError as exc:
            last_trace = getattr(exc, "trace", [])
            logger.warning("divergence at step size %.3g (attempt %d): %s", step_size, attempt + 1, exc)
            step_size *= 0.5
            continue
        lvec = A @ avg
        if fixed_theta is not None:
            lvec[1] = float(fixed_theta)
        mult = Multipliers.from_vector(lvec, d, N)
        try:
            residuals = constraint_residuals(lvec, problem, valid)
        except DivergenceError as exc:
            last_trace = trace
            logger.warning("averaged iterate diverged on validation batch: %s", exc)
            step_size *= 0.5
            continue
        return SolveResult(
            multipliers=mult,
            mi_nats=mutual_information(mult, problem),
            achieved_distortion=float(residuals[1] + problem.D),
            residuals=residuals,
            trace=trace,
            seed=config.seed,
            converged=converged,
            iterations=k,
            restarts=attempt,
            step_size=step_size,
            wall_time=time.perf_counter() - start,
            D=problem.D,
        )
    raise SolverError(
        f"optimizer diverged {config.max_restarts + 1} times (final step size {step_size:.3g})",
        trace=last_trace,
    )


def finite_difference_gradient(l, problem: ProjectionProblem, batch, h: float = 1e-5) -> np.ndarray:
    """Central differences of :func:`dual_objective` on a fixed batch."""
    if not (1e-7 <= h <= 1e-3):
        raise InvalidParameterError(f"finite-difference step must lie in [1e-7, 1e-3], got {h!r}")
    vec = _as_vector(l, problem)
    fb = batch if isinstance(batch, FeatureBatch) else featurize(problem, batch)
    grad = np.empty_like(vec)
    for j in range(vec.size):
        e = np.zeros_like(vec)
        e[j] = h
        grad[j] = (dual_objective(vec + e, problem, fb) - dual_objective(vec - e, problem, fb)) / (2 * h)
    return grad


def write_trace_csv(result, path) -> None:
    """Write a trace (or a :class:`SolveResult`'s trace) as CSV."""
    trace = result.trace if isinstance(result, SolveResult) else result
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "objective", "gradient_norm"])
        for it, obj, gn in trace:
            writer.writerow([it, repr(float(obj)), repr(float(gn))])
