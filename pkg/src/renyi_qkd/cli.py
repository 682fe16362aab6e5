"""Command-line entry point for certified key-rate sweeps.

Subcommands map one-to-one onto the published result files: `rate` for a
single point, `sweep-alpha` for the noise-gain curve, `heatmap` for the
optimal-noise surface, `rate-vs-m` for block-length curves, and `max-qber`
for tolerable-QBER thresholds.  Outputs are plain CSV with one header line
and 9-significant-digit floats; every output carries a `<name>.manifest`
sidecar with the resolved configuration, version, timestamps, and
per-point certificate diagnostics.  Reruns with the same configuration and
seed produce byte-identical CSV files.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Sequence

from numpy.linalg import LinAlgError

from . import __version__
from .cache import ResultCache, default_cache_path
from .divergence import DivergenceError
from .keyrate import (
    DEFAULT_ALPHA_GRID,
    KeyrateError,
    RatePoint,
    divergence_bound,
    max_tolerable_qber,
    optimize_alpha_at_q,
    optimize_alpha_q,
    optimize_q,
    set_file_cache,
)
from .optimizer import OptimizerError
from .protocol import ProtocolError

__all__ = ["RunConfig", "ResultRecord", "main", "build_config", "ConfigError"]

COMMANDS = ("rate", "sweep-alpha", "heatmap", "rate-vs-m", "max-qber")

# Asymptotic stand-in for m -> infinity: the finite-size term is < 1e-11.
ASYMPTOTIC_M = 1.0e15

DEFAULT_P_GRID: tuple[float, ...] = tuple(
    round(0.02 + 0.005 * k, 3) for k in range(21)
)

# Three points per decade from 1e3 to 1e15.
DEFAULT_M_GRID: tuple[int, ...] = tuple(
    int(round(10.0 ** (3.0 + k / 3.0))) for k in range(37)
)

_NUMERICAL_FAILURES = (
    KeyrateError,
    OptimizerError,
    DivergenceError,
    ProtocolError,
    LinAlgError,
    FloatingPointError,
)

_CONFIG_KEYS = (
    "epsilon", "p", "m", "alpha_grid", "p_grid", "m_grid",
    "tol", "max_iter", "jobs", "out", "cache", "seed",
)


class ConfigError(ValueError):
    """Raised on malformed configuration; maps to exit code 2."""


@dataclass
class RunConfig:
    """Fully resolved run parameters for one subcommand invocation."""

    command: str
    epsilon: float = 1e-10
    p: float | None = None
    m: float | None = None
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    p_grid: tuple[float, ...] = DEFAULT_P_GRID
    m_grid: tuple[int, ...] = DEFAULT_M_GRID
    tol: float = 1e-6
    max_iter: int = 2000
    jobs: int = 1
    output_path: str = "results.csv"
    cache_path: str | None = None
    seed: int = 0


@dataclass
class ResultRecord:
    """One evaluated sweep point plus its certificate diagnostics."""

    params: tuple
    rate: float
    q_star: float
    alpha_star: float
    certificate_gap: float
    wall_time: float
    iterations: int


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _parse_float_list(text: str, name: str) -> tuple[float, ...]:
    try:
        values = tuple(float(tok) for tok in text.replace(" ", "").split(",") if tok)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    if not values:
        raise ConfigError(f"{name} must be a non-empty comma-separated list")
    return values


def _parse_int_list(text: str, name: str) -> tuple[int, ...]:
    floats = _parse_float_list(text, name)
    return tuple(int(round(v)) for v in floats)


def _parse_config_file(path: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected KEY=VALUE, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().lower().replace("-", "_")
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        entries[key] = value.strip()
    return entries


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge config file < command-line flags < hard defaults into RunConfig."""
    merged: dict[str, str] = {}
    if args.config:
        merged.update(_parse_config_file(args.config))
    for key in _CONFIG_KEYS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value

    cfg = RunConfig(command=args.command)
    try:
        if "epsilon" in merged:
            cfg.epsilon = float(merged["epsilon"])
        if "p" in merged:
            cfg.p = float(merged["p"])
        if "m" in merged:
            cfg.m = float(merged["m"])
        if "tol" in merged:
            cfg.tol = float(merged["tol"])
        if "max_iter" in merged:
            cfg.max_iter = int(merged["max_iter"])
        if "jobs" in merged:
            cfg.jobs = int(merged["jobs"])
        if "seed" in merged:
            cfg.seed = int(merged["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if "alpha_grid" in merged:
        cfg.alpha_grid = _parse_float_list(merged["alpha_grid"], "alpha-grid")
    if "p_grid" in merged:
        cfg.p_grid = _parse_float_list(merged["p_grid"], "p-grid")
    if "m_grid" in merged:
        cfg.m_grid = _parse_int_list(merged["m_grid"], "m-grid")
    if "out" in merged:
        cfg.output_path = merged["out"]
    if "cache" in merged:
        cfg.cache_path = merged["cache"] or None
    elif default_cache_path():
        cfg.cache_path = default_cache_path()

    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.command not in COMMANDS:
        raise ConfigError(f"unknown command {cfg.command!r}")
    if not 0.0 < cfg.epsilon < 1.0:
        raise ConfigError(f"epsilon must lie in (0, 1), got {cfg.epsilon}")
    if cfg.tol <= 0.0:
        raise ConfigError(f"tol must be positive, got {cfg.tol}")
    if cfg.max_iter < 1:
        raise ConfigError(f"max-iter must be >= 1, got {cfg.max_iter}")
    if cfg.jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {cfg.jobs}")
    if not cfg.alpha_grid:
        raise ConfigError("alpha-grid must be non-empty")
    for a in cfg.alpha_grid:
        if not 1.0 < a <= 2.0:
            raise ConfigError(f"alpha-grid entries must lie in (1, 2], got {a}")
    if cfg.p is not None and not 0.0 <= cfg.p <= 0.5:
        raise ConfigError(f"p must lie in [0, 1/2], got {cfg.p}")
    if cfg.m is not None and cfg.m < 1.0:
        raise ConfigError(f"m must be >= 1, got {cfg.m}")

    if cfg.command == "rate":
        if cfg.p is None or cfg.m is None:
            raise ConfigError("rate requires both --p and --m")
    elif cfg.command in ("sweep-alpha", "heatmap"):
        if not cfg.p_grid:
            raise ConfigError(f"{cfg.command} requires a non-empty p-grid")
        for p in cfg.p_grid:
            if not 0.0 <= p <= 0.5:
                raise ConfigError(f"p-grid entries must lie in [0, 1/2], got {p}")
    elif cfg.command == "rate-vs-m":
        if cfg.p is None:
            raise ConfigError("rate-vs-m requires --p")
        if not cfg.m_grid:
            raise ConfigError("rate-vs-m requires a non-empty m-grid")
    elif cfg.command == "max-qber":
        if not cfg.m_grid:
            raise ConfigError("max-qber requires a non-empty m-grid")
    if cfg.command in ("rate-vs-m", "max-qber"):
        for m in cfg.m_grid:
            if m < 1:
                raise ConfigError(f"m-grid entries must be >= 1, got {m}")


def _solver_kwargs(cfg: RunConfig) -> dict:
    return dict(tol=cfg.tol, max_iter=cfg.max_iter, seed=cfg.seed)


def _pool_map(jobs: int, fn: Callable, items: Sequence) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_csv(path: str, header: str, rows: Iterable[Sequence[str]]) -> None:
    lines = [header]
    lines.extend(",".join(row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_manifest(
    cfg: RunConfig,
    gaps: Sequence[float],
    wall_time: float,
    extra: dict[str, str] | None = None,
) -> None:
    lines = [
        f"command={cfg.command}",
        f"version=renyi-qkd/{__version__}",
        f"created={datetime.now(timezone.utc).isoformat()}",
        f"wall_time_seconds={wall_time:.3f}",
        f"epsilon={_fmt(cfg.epsilon)}",
        f"tol={_fmt(cfg.tol)}",
        f"max_iter={cfg.max_iter}",
        f"jobs={cfg.jobs}",
        f"seed={cfg.seed}",
        f"out={cfg.output_path}",
        f"cache={cfg.cache_path or ''}",
        f"alpha_grid={','.join(_fmt(a) for a in cfg.alpha_grid)}",
    ]
    if cfg.p is not None:
        lines.append(f"p={_fmt(cfg.p)}")
    if cfg.m is not None:
        lines.append(f"m={_fmt(cfg.m)}")
    if cfg.command in ("sweep-alpha", "heatmap"):
        lines.append(f"p_grid={','.join(_fmt(p) for p in cfg.p_grid)}")
    if cfg.command in ("rate-vs-m", "max-qber"):
        lines.append(f"m_grid={','.join(str(m) for m in cfg.m_grid)}")
    for key, value in (extra or {}).items():
        lines.append(f"{key}={value}")
    lines.append(f"rows={len(gaps)}")
    lines.extend(f"gap.{i}={_fmt(g)}" for i, g in enumerate(gaps))
    Path(cfg.output_path + ".manifest").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _record_from_point(point: RatePoint, wall_time: float) -> ResultRecord:
    pp = point.params
    return ResultRecord(
        params=(pp.p, pp.q, pp.alpha, pp.epsilon, pp.m),
        rate=point.rate,
        q_star=point.q_star,
        alpha_star=point.alpha_star,
        certificate_gap=point.certificate_gap,
        wall_time=wall_time,
        iterations=point.iterations,
    )


def run_rate(cfg: RunConfig) -> int:
    start = time.perf_counter()
    point = optimize_alpha_q(
        cfg.m, cfg.p, cfg.alpha_grid, epsilon=cfg.epsilon, **_solver_kwargs(cfg)
    )
    record = _record_from_point(point, time.perf_counter() - start)
    header = "p,m,rate,q_star,alpha_star,certificate_gap,iterations"
    row = (
        _fmt(cfg.p), _fmt(cfg.m), _fmt(record.rate), _fmt(record.q_star),
        _fmt(record.alpha_star), _fmt(record.certificate_gap),
        str(record.iterations),
    )
    _write_csv(cfg.output_path, header, [row])
    _write_manifest(cfg, [record.certificate_gap], record.wall_time)
    print(
        f"p={_fmt(cfg.p)} m={_fmt(cfg.m)} rate={_fmt(record.rate)} "
        f"q_star={_fmt(record.q_star)} alpha_star={_fmt(record.alpha_star)} "
        f"certificate_gap={_fmt(record.certificate_gap)}"
    )
    return 0


def run_sweep_alpha(cfg: RunConfig) -> int:
    start = time.perf_counter()
    solver = _solver_kwargs(cfg)
    alphas = sorted(cfg.alpha_grid)

    def eval_alpha(alpha: float) -> tuple[float, float, float, float]:
        from .keyrate import delta_r

        delta, p_at_max = delta_r(alpha, cfg.p_grid, **solver)
        gap = divergence_bound(p_at_max, 0.0, alpha, **solver).gap
        return alpha, delta, p_at_max, gap

    results = sorted(_pool_map(cfg.jobs, eval_alpha, alphas))
    rows = [(_fmt(a), _fmt(d), _fmt(pm)) for a, d, pm, _ in results]
    _write_csv(cfg.output_path, "alpha,delta_r,p_at_max", rows)
    _write_manifest(cfg, [g for _, _, _, g in results], time.perf_counter() - start)
    return 0


def run_heatmap(cfg: RunConfig) -> int:
    start = time.perf_counter()
    solver = _solver_kwargs(cfg)
    m_proxy = cfg.m if cfg.m is not None else ASYMPTOTIC_M
    cells = [(a, p) for a in sorted(cfg.alpha_grid) for p in sorted(cfg.p_grid)]

    def eval_cell(cell: tuple[float, float]):
        alpha, p = cell
        q_star, rate = optimize_q(m_proxy, alpha, p, epsilon=cfg.epsilon, **solver)
        gap = divergence_bound(p, q_star, alpha, **solver).gap
        return alpha, p, q_star, rate, gap

    results = sorted(_pool_map(cfg.jobs, eval_cell, cells), key=lambda r: (r[0], r[1]))
    rows = []
    for alpha, p, q_star, rate, _ in results:
        forbidden = rate <= 0.0
        rows.append((
            _fmt(alpha), _fmt(p),
            "" if forbidden else _fmt(q_star),
            _fmt(max(rate, 0.0)),
            "1" if forbidden else "0",
        ))
    _write_csv(cfg.output_path, "alpha,p,q_star,rate,forbidden", rows)
    _write_manifest(
        cfg, [g for *_, g in results], time.perf_counter() - start,
        extra={"m_proxy": _fmt(m_proxy)},
    )
    return 0


def run_rate_vs_m(cfg: RunConfig) -> int:
    start = time.perf_counter()
    solver = _solver_kwargs(cfg)
    ms = sorted(set(cfg.m_grid))

    def eval_m(m: int):
        tuned = optimize_alpha_q(float(m), cfg.p, cfg.alpha_grid,
                                 epsilon=cfg.epsilon, **solver)
        plain = optimize_alpha_at_q(float(m), cfg.p, 0.0, cfg.alpha_grid,
                                    epsilon=cfg.epsilon, **solver)
        return m, plain.rate, tuned, plain

    results = sorted(_pool_map(cfg.jobs, eval_m, ms))
    rows = []
    gaps = []
    for m, rate_q0, tuned, _ in results:
        rows.append((
            str(m),
            _fmt(max(rate_q0, 0.0)),
            _fmt(max(tuned.rate, 0.0)),
            _fmt(tuned.q_star),
            _fmt(tuned.alpha_star),
        ))
        gaps.append(tuned.certificate_gap)
    _write_csv(cfg.output_path, "m,rate_q0,rate_qstar,q_star,alpha_star", rows)
    _write_manifest(cfg, gaps, time.perf_counter() - start)
    return 0


def run_max_qber(cfg: RunConfig) -> int:
    start = time.perf_counter()
    solver = _solver_kwargs(cfg)
    ms = sorted(set(cfg.m_grid))
    p_tol = 1e-3

    def eval_m(m: int):
        plain = max_tolerable_qber(float(m), with_noise=False,
                                   alpha_grid=cfg.alpha_grid,
                                   epsilon=cfg.epsilon, p_tol=p_tol, **solver)
        tuned = max_tolerable_qber(float(m), with_noise=True,
                                   alpha_grid=cfg.alpha_grid,
                                   epsilon=cfg.epsilon, p_tol=p_tol, **solver)
        return m, plain.pmax, tuned.pmax

    results = sorted(_pool_map(cfg.jobs, eval_m, ms))
    # Rates only improve with block size, so both threshold columns must be
    # non-decreasing; a violation indicates a solver failure, not data.
    for (m_prev, q0_prev, qs_prev), (m_next, q0_next, qs_next) in zip(results, results[1:]):
        if q0_next < q0_prev - 1e-9 or qs_next < qs_prev - 1e-9:
            raise KeyrateError(
                f"threshold decreased between m={m_prev} and m={m_next}"
            )
    rows = [(str(m), _fmt(q0), _fmt(qs)) for m, q0, qs in results]
    _write_csv(cfg.output_path, "m,pmax_q0,pmax_qstar", rows)
    _write_manifest(cfg, [p_tol] * len(results), time.perf_counter() - start,
                    extra={"p_tol": _fmt(p_tol)})
    return 0


_RUNNERS = {
    "rate": run_rate,
    "sweep-alpha": run_sweep_alpha,
    "heatmap": run_heatmap,
    "rate-vs-m": run_rate_vs_m,
    "max-qber": run_max_qber,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="renyi-qkd",
        description="Certified finite-size key rates for BB84 with trusted noise.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name, help=f"run the {name} sweep")
        cmd.add_argument("--config", help="KEY=VALUE config file; flags override")
        cmd.add_argument("--epsilon", help="secrecy parameter in (0, 1)")
        cmd.add_argument("--p", help="QBER in [0, 1/2]")
        cmd.add_argument("--m", help="sifted block size")
        cmd.add_argument("--alpha-grid", dest="alpha_grid",
                         help="comma-separated Renyi orders in (1, 2]")
        cmd.add_argument("--p-grid", dest="p_grid",
                         help="comma-separated QBER values")
        cmd.add_argument("--m-grid", dest="m_grid",
                         help="comma-separated block sizes")
        cmd.add_argument("--tol", help="duality-gap tolerance")
        cmd.add_argument("--max-iter", dest="max_iter", help="iteration cap")
        cmd.add_argument("--jobs", help="worker threads for sweep points")
        cmd.add_argument("--out", help="output CSV path")
        cmd.add_argument("--cache", help="results cache directory")
        cmd.add_argument("--seed", help="restart seed")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; normalize other codes
        return 0 if exc.code in (0, None) else 2
    try:
        cfg = build_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    set_file_cache(ResultCache(cfg.cache_path) if cfg.cache_path else None)
    try:
        return _RUNNERS[cfg.command](cfg)
    except _NUMERICAL_FAILURES as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    finally:
        set_file_cache(None)


if __name__ == "__main__":
    sys.exit(main())
