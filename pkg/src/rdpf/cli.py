"""Command-line front end.

Usage::

    rdpf <command> --config <path> [--out <path>] [--sequential] [--figure <path>]

Commands are ``point``, ``sweep``, ``slb``, ``eot`` and ``oracle-check``. The
config is a JSON object; see the README for the full schema. Every run writes
a CSV (columns ``D, rate_nats, rate_bits, achieved_distortion, residual_max``,
plus command-specific extras) and a ``<out>.meta.json`` sidecar holding the
config echo and run metadata. The sidecar is itself a valid config.

Exit status: 0 on success, 2 on a config or domain error, 3 on solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

from . import __version__
from .bounds import slb_for_source
from .copulas import CouplingSpec, SourceSpec
from .errors import DomainError, InvalidParameterError, RdpfError
from .marginals import Family, MarginalDistribution, make_standardized
from .optimizer import OptimizerConfig, write_trace_csv
from .problems import solve_eot, solve_ocrdf, sweep_curve
from .projection import DistortionKind, ProjectionProblem

COMMANDS = ("point", "sweep", "slb", "eot", "oracle-check")
BASE_COLUMNS = ["D", "rate_nats", "rate_bits", "achieved_distortion", "residual_max"]
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

_LN2 = math.log(2.0)

# config key -> OptimizerConfig field
_OPTIMIZER_KEYS = {
    "M": "batch_size",
    "T": "iterations",
    "step_rule": "step_rule",
    "step_size": "step_size",
    "step_decay": "step_decay",
    "seed": "seed",
    "averaging_window": "averaging_window",
    "tolerance": "tolerance",
    "check_every": "check_every",
    "validation_factor": "validation_factor",
    "sampling": "sampling",
    "basis": "basis",
    "max_restarts": "max_restarts",
}

_TOP_KEYS = {
    "command", "source", "target", "distortion", "D", "D_grid", "epsilon",
    "N", "G", "optimizer", "output", "run_metadata",
}

# level fields each command needs (one of)
_REQUIRED = {
    "point": ("D",),
    "sweep": ("D_grid",),
    "slb": ("D", "D_grid"),
    "eot": ("epsilon",),
    "oracle-check": ("D", "D_grid"),
}


class ConfigError(Exception):
    """Invalid config; ``field`` is a dotted path to the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


@dataclass
class RunConfig:
    command: str
    source: SourceSpec
    target: SourceSpec
    distortion: DistortionKind
    levels: list
    N: int
    G: int
    optimizer: OptimizerConfig
    output: str | None
    raw: dict = field(default_factory=dict)
    pr: bool = True


# -- parsing ------------------------------------------------------------------


def _number(value, path, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(path, f"expected a finite number, got {value!r}")
    return int(value) if integer else float(value)


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ConfigError(path, f"expected an object, got {type(obj).__name__}")
    for key in obj:
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            raise ConfigError(where, "unknown field")


def _parse_marginal(obj, path) -> MarginalDistribution:
    _check_keys(obj, {"family", "location", "scale", "mean", "variance"}, path)
    if "family" not in obj:
        raise ConfigError(f"{path}.family", "missing")
    name = obj["family"]
    if not isinstance(name, str) or name not in {f.value for f in Family}:
        valid = ", ".join(f.value for f in Family)
        raise ConfigError(f"{path}.family", f"unknown distribution {name!r} (expected one of: {valid})")
    standardized = "mean" in obj or "variance" in obj
    if standardized and ("location" in obj or "scale" in obj):
        raise ConfigError(path, "give either mean/variance or location/scale, not both")
    try:
        if standardized:
            mean = _number(obj.get("mean", 0.0), f"{path}.mean")
            var = _number(obj.get("variance", 1.0), f"{path}.variance")
            return make_standardized(name, mean, var)
        loc = _number(obj.get("location", 0.0), f"{path}.location")
        scale = _number(obj.get("scale", 1.0), f"{path}.scale")
        return MarginalDistribution(name, loc, scale)
    except InvalidParameterError as exc:
        raise ConfigError(path, str(exc)) from None


def _parse_source(obj, path) -> SourceSpec:
    _check_keys(obj, {"marginals", "coupling"}, path)
    margs = obj.get("marginals")
    if not isinstance(margs, list) or not margs:
        raise ConfigError(f"{path}.marginals", "expected a non-empty list")
    marginals = tuple(_parse_marginal(m, f"{path}.marginals[{i}]") for i, m in enumerate(margs))
    cobj = obj.get("coupling", {"kind": "independence"})
    _check_keys(cobj, {"kind", "correlation"}, f"{path}.coupling")
    kind = cobj.get("kind", "independence")
    if kind not in ("independence", "gaussian"):
        raise ConfigError(f"{path}.coupling.kind", f"unknown coupling {kind!r} (expected 'independence' or 'gaussian')")
    try:
        coupling = CouplingSpec(kind, cobj.get("correlation"))
        return SourceSpec(marginals, coupling)
    except (InvalidParameterError, ValueError) as exc:
        raise ConfigError(f"{path}.coupling", str(exc)) from None


def _parse_optimizer(obj, path="optimizer") -> OptimizerConfig:
    obj = {} if obj is None else obj
    _check_keys(obj, set(_OPTIMIZER_KEYS), path)
    kwargs = {}
    for key, value in obj.items():
        name = _OPTIMIZER_KEYS[key]
        if key in ("step_rule", "sampling", "basis"):
            if not isinstance(value, str):
                raise ConfigError(f"{path}.{key}", f"expected a string, got {value!r}")
            kwargs[name] = value
        else:
            integer = key not in ("step_size", "step_decay", "tolerance")
            kwargs[name] = _number(value, f"{path}.{key}", integer=integer)
    env_seed = os.environ.get("RDPF_SEED")
    if env_seed is not None and env_seed.strip():
        try:
            kwargs["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError("RDPF_SEED", f"expected an integer, got {env_seed!r}") from None
    try:
        return OptimizerConfig(**kwargs)
    except InvalidParameterError as exc:
        raise ConfigError(path, str(exc)) from None


def parse_config(raw: dict, command: str | None = None, out: str | None = None) -> RunConfig:
    """Validate a decoded JSON config and build a :class:`RunConfig`.

    ``command`` (from the command line) must agree with ``raw["command"]``
    when both are present. ``out`` overrides ``raw["output"]["path"]``.
    """
    _check_keys(raw, _TOP_KEYS, "")
    cmd = raw.get("command", command)
    if command is not None and cmd != command:
        raise ConfigError("command", f"config says {cmd!r} but {command!r} was requested")
    if cmd not in COMMANDS:
        raise ConfigError("command", f"unknown command {cmd!r} (expected one of: {', '.join(COMMANDS)})")
    if "source" not in raw:
        raise ConfigError("source", "missing")
    source = _parse_source(raw["source"], "source")
    pr = "target" not in raw
    target = source if pr else _parse_source(raw["target"], "target")
    if target.dim != source.dim:
        raise ConfigError("target", f"dimension {target.dim} does not match source dimension {source.dim}")

    kind = raw.get("distortion", "mse")
    if kind not in ("mse", "mae"):
        raise ConfigError("distortion", f"unknown distortion {kind!r} (expected 'mse' or 'mae')")
    kind = DistortionKind.parse(kind)

    needed = _REQUIRED[cmd]
    present = [k for k in ("D", "D_grid", "epsilon") if k in raw]
    if len(present) != 1 or present[0] not in needed:
        raise ConfigError(needed[0], f"command {cmd!r} needs exactly one of {', '.join(needed)}")
    key = present[0]
    if key == "D_grid":
        grid = raw["D_grid"]
        if not isinstance(grid, list) or not grid:
            raise ConfigError("D_grid", "expected a non-empty list")
        levels = [_number(v, f"D_grid[{i}]") for i, v in enumerate(grid)]
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ConfigError("D_grid", "must be strictly increasing")
    else:
        levels = [_number(raw[key], key)]
    if any(v <= 0 for v in levels):
        raise ConfigError(key, "values must be positive")

    N = _number(raw.get("N", 4), "N", integer=True)
    if N < 1:
        raise ConfigError("N", "must be >= 1")
    G = _number(raw.get("G", 64), "G", integer=True)
    if G < 2:
        raise ConfigError("G", "must be >= 2")

    if cmd == "slb":
        if kind is not DistortionKind.MSE:
            raise ConfigError("distortion", "the Shannon lower bound is available for 'mse' only")
        if not pr:
            raise ConfigError("target", "the Shannon lower bound applies to perfect-realism runs only")
    if cmd == "oracle-check" and source.dim != 1:
        raise ConfigError("source.marginals", "oracle-check supports scalar sources only")
    if cmd == "oracle-check" and N > 8:
        raise ConfigError("N", "oracle-check supports N <= 8")

    optimizer = _parse_optimizer(raw.get("optimizer"))
    oobj = raw.get("output", {})
    _check_keys(oobj, {"path", "format"}, "output")
    if oobj.get("format", "csv") != "csv":
        raise ConfigError("output.format", f"unsupported format {oobj['format']!r} (expected 'csv')")
    path = out if out is not None else oobj.get("path")
    if path is not None and not isinstance(path, str):
        raise ConfigError("output.path", "expected a string")
    return RunConfig(cmd, source, target, kind, levels, N, G, optimizer, path, raw, pr)


def load_config(path, command=None, out=None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}", exc.msg) from None
    return parse_config(raw, command, out)


# -- execution ------------------------------------------------------------------


class SolverFailure(Exception):
    def __init__(self, message, trace_path=None):
        super().__init__(message)
        self.trace_path = trace_path


def _row(D, rate, achieved, residual, **extra):
    row = {"D": D, "rate_nats": rate, "rate_bits": rate / _LN2, "achieved_distortion": achieved, "residual_max": residual}
    row.update(extra)
    return row


def _trace_path(cfg):
    return (cfg.output or f"rdpf_{cfg.command}.csv") + ".trace.csv"


def _solve_point(cfg, D):
    res = solve_ocrdf(cfg.source, cfg.target, cfg.distortion, D, cfg.N, cfg.optimizer)
    return res, _row(D, res.mi_nats, res.achieved_distortion, res.residual_max)


def _run_point(cfg, sequential):
    res, row = _solve_point(cfg, cfg.levels[0])
    return [row], BASE_COLUMNS, {"converged": res.converged, "iterations": res.iterations}


def _run_sweep(cfg, sequential):
    template = ProjectionProblem(cfg.source, cfg.target, cfg.distortion, cfg.levels[-1], cfg.N)
    curve = sweep_curve(template, cfg.levels, cfg.optimizer, parallel=not sequential)
    rows = [_row(p.D, p.rate_nats, p.achieved_distortion, p.residual_max) for p in curve.points]
    errors = {repr(p.D): p.error for p in curve.points if p.error}
    info = {"total_iterations": curve.total_iterations, "point_errors": errors, "parallel": not sequential}
    return rows, BASE_COLUMNS, info


def _run_slb(cfg, sequential):
    rows = [_row(D, slb_for_source(cfg.source, D), D, 0.0) for D in cfg.levels]
    return rows, BASE_COLUMNS, {}


def _run_eot(cfg, sequential):
    eps = cfg.levels[0]
    res = solve_eot(cfg.source, cfg.target, cfg.distortion, eps, cfg.N, cfg.optimizer)
    row = _row(
        res.achieved_distortion,
        res.coupling_rate_nats,
        res.achieved_distortion,
        res.solve.residual_max,
        epsilon=eps,
        D_eot=res.D_eot,
    )
    return [row], BASE_COLUMNS + ["epsilon", "D_eot"], {"converged": res.solve.converged}


def _run_oracle_check(cfg, sequential):
    from .oracle import build_grid, grid_dual_solve, grid_primal_scaling

    grid = build_grid(cfg.source, cfg.target, cfg.distortion, cfg.G)
    rows = []
    for D in cfg.levels:
        dual, _ = grid_dual_solve(grid, D, cfg.N)
        primal, _ = grid_primal_scaling(grid, D, cfg.N)
        res, row = _solve_point(cfg, D)
        row.update(grid_dual_nats=dual, grid_primal_nats=primal)
        rows.append(row)
    return rows, BASE_COLUMNS + ["grid_dual_nats", "grid_primal_nats"], {"G": cfg.G}


_RUNNERS = {
    "point": _run_point,
    "sweep": _run_sweep,
    "slb": _run_slb,
    "eot": _run_eot,
    "oracle-check": _run_oracle_check,
}


def format_csv(rows, columns) -> str:
    """CSV text with ``repr`` floats, '.' decimals and LF line endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(float(row[c])) for c in columns])
    return buf.getvalue()


def _config_echo(cfg) -> dict:
    echo = {k: v for k, v in cfg.raw.items() if k != "run_metadata"}
    echo["command"] = cfg.command
    # Record the effective seed so the sidecar replays without RDPF_SEED.
    opt = dict(echo.get("optimizer") or {})
    opt["seed"] = cfg.optimizer.seed
    echo["optimizer"] = opt
    return echo


def run_command(cfg: RunConfig, sequential: bool = False, figure: str | None = None) -> int:
    """Execute a parsed config, write outputs and return the exit status."""
    start = time.perf_counter()
    out = cfg.output or f"rdpf_{cfg.command}.csv"
    try:
        rows, columns, info = _RUNNERS[cfg.command](cfg, sequential)
    except (DomainError, InvalidParameterError) as exc:
        print(f"rdpf: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RdpfError as exc:
        trace = getattr(exc, "trace", None) or []
        path = _trace_path(cfg)
        write_trace_csv(trace, path)
        print(f"rdpf: solver failure: {exc} (trace written to {path})", file=sys.stderr)
        return EXIT_SOLVER

    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_csv(rows, columns))
    meta = _config_echo(cfg)
    meta["run_metadata"] = {
        "library_version": __version__,
        "seed": cfg.optimizer.seed,
        "wall_time_s": time.perf_counter() - start,
        "sequential": bool(sequential),
        "optimizer_config": cfg.optimizer.to_dict(),
        **info,
    }
    with open(out + ".meta.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if figure:
        from .plotting import plot_rate_curve

        bounds = None
        if cfg.command == "sweep" and cfg.pr and cfg.distortion is DistortionKind.MSE:
            bounds = [(D, slb_for_source(cfg.source, D)) for D in cfg.levels]
        plot_rate_curve(rows, figure, title=cfg.command, bounds=bounds)

    errors = info.get("point_errors")
    if errors:
        print(f"rdpf: {len(errors)} sweep point(s) failed; see {out}.meta.json", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rdpf", description="Copula-based rate-distortion estimation.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", help="output CSV path (overrides output.path)")
    p.add_argument("--sequential", action="store_true", help="solve sweep points in order (bit-reproducible)")
    p.add_argument("--figure", help="also render the curve to this image file")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.command, args.out)
    except ConfigError as exc:
        print(f"rdpf: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run_command(cfg, sequential=args.sequential, figure=args.figure)


if __name__ == "__main__":
    sys.exit(main())
