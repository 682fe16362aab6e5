"""Key-rate assembly on top of the certified divergence solver.

Combines the certified divergence lower bound with the reconciliation leak
and the finite-size correction, optimizes the trusted-noise level q and the
Renyi order alpha, locates QBER thresholds, and provides the closed-form
min-entropy benchmark rate with its derivatives.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from scipy.optimize import minimize_scalar

from .cache import ResultCache
from .optimizer import frank_wolfe
from .protocol import ProtocolParams, binary_entropy, effective_qber

__all__ = [
    "DEFAULT_ALPHA_GRID",
    "POSITIVE_RATE_TOL",
    "KeyrateError",
    "RatePoint",
    "MinEntropyParams",
    "QberThreshold",
    "DivergenceBound",
    "finite_size_correction",
    "divergence_bound",
    "clear_divergence_cache",
    "set_file_cache",
    "key_rate",
    "optimize_q",
    "optimize_alpha_q",
    "optimize_alpha_at_q",
    "delta_r",
    "max_tolerable_qber",
    "guessing_probability",
    "min_entropy_rate",
    "min_entropy_derivatives",
]

LN2 = math.log(2.0)

# Coarse-by-design order grid; floored at 1.0005 because the divergence
# evaluation grows ill-conditioned as alpha approaches 1.
DEFAULT_ALPHA_GRID: tuple[float, ...] = (
    1.0005, 1.001, 1.002, 1.005, 1.01, 1.02, 1.05,
    1.1, 1.15, 1.2, 1.3, 1.4, 1.5, 1.75, 2.0,
)

# Certified lower bound must clear this to count as a positive rate.
POSITIVE_RATE_TOL = 1e-6

# q optimization: coarse hedge scan before the bounded refinement.
_Q_COARSE = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
_Q_TOL = 1e-4
_Q_TIE_TOL = 1e-6


class KeyrateError(Exception):
    """Raised for invalid key-rate queries."""


@dataclass(frozen=True)
class RatePoint:
    """Certified rate at one parameter point.

    ``rate`` always uses the optimizer's certified lower bound, never the
    upper value; it is reported signed (callers clamp at zero for "no key"
    semantics).
    """

    params: ProtocolParams
    rate: float
    q_star: float
    alpha_star: float
    certificate_gap: float
    divergence_lower: float
    divergence_upper: float
    iterations: int


@dataclass(frozen=True)
class MinEntropyParams:
    """Inputs for the min-entropy benchmark rate."""

    p: float
    q: float
    gamma: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 0.5:
            raise KeyrateError(f"p must lie in [0, 1/2], got {self.p}")
        if not 0.0 <= self.q <= 0.5:
            raise KeyrateError(f"q must lie in [0, 1/2], got {self.q}")
        if self.gamma < 1.0:
            raise KeyrateError(f"gamma must be >= 1, got {self.gamma}")


class QberThreshold(NamedTuple):
    pmax: float
    positive_found: bool


class DivergenceBound(NamedTuple):
    lower: float
    upper: float
    gap: float
    iterations: int
    converged: bool


def finite_size_correction(alpha: float, epsilon: float) -> float:
    """Finite-size penalty g(alpha, epsilon) in bits; diverges as alpha -> 1."""
    if alpha <= 1.0:
        raise KeyrateError(f"alpha must exceed 1, got {alpha}")
    if not 0.0 < epsilon <= 1.0:
        raise KeyrateError(f"epsilon must lie in (0, 1], got {epsilon}")
    return alpha / (alpha - 1.0) * math.log2(1.0 / epsilon) - 2.0


_DIV_CACHE: dict[tuple, DivergenceBound] = {}
_DIV_CACHE_LOCK = threading.Lock()
_FILE_CACHE: ResultCache | None = None


def clear_divergence_cache() -> None:
    with _DIV_CACHE_LOCK:
        _DIV_CACHE.clear()


def set_file_cache(cache: ResultCache | None) -> None:
    """Layer a persistent cache under the in-process memo (None disables)."""
    global _FILE_CACHE
    _FILE_CACHE = cache


def _file_cache_get(key: tuple) -> DivergenceBound | None:
    if _FILE_CACHE is None:
        return None
    record = _FILE_CACHE.lookup(("div",) + key)
    if record is None:
        return None
    try:
        return DivergenceBound(
            lower=float(record["lower"]),
            upper=float(record["upper"]),
            gap=float(record["gap"]),
            iterations=int(record["iterations"]),
            converged=bool(record["converged"]),
        )
    except (KeyError, TypeError, ValueError):
        return None


def _file_cache_put(key: tuple, bound: DivergenceBound) -> None:
    if _FILE_CACHE is None:
        return
    _FILE_CACHE.store(("div",) + key, bound._asdict())


def divergence_bound(
    p: float,
    q: float,
    alpha: float,
    tol: float = 1e-6,
    max_iter: int = 2000,
    restarts: int = 0,
    seed: int = 0,
    stop_lower_above: float | None = None,
    stop_upper_below: float | None = None,
) -> DivergenceBound:
    """Certified two-sided bound on the minimized divergence at (p, q, alpha).

    Results are memoized per process; runs cut short by a stop threshold are
    never cached because their bounds depend on the threshold.
    """
    key = (p, q, alpha, tol, max_iter, restarts, seed)
    stoppable = stop_lower_above is not None or stop_upper_below is not None
    if not stoppable:
        with _DIV_CACHE_LOCK:
            hit = _DIV_CACHE.get(key)
        if hit is not None:
            return hit
        hit = _file_cache_get(key)
        if hit is not None:
            with _DIV_CACHE_LOCK:
                _DIV_CACHE[key] = hit
            return hit
    params = ProtocolParams(p=p, q=q, alpha=alpha)
    res = frank_wolfe(
        params,
        tol=tol,
        max_iter=max_iter,
        restarts=restarts,
        seed=seed,
        stop_lower_above=stop_lower_above,
        stop_upper_below=stop_upper_below,
    )
    out = DivergenceBound(
        lower=res.lower_bound,
        upper=res.upper_value,
        gap=res.gap,
        iterations=res.iterations,
        converged=res.converged,
    )
    if not (stoppable and res.stopped_early):
        with _DIV_CACHE_LOCK:
            _DIV_CACHE[key] = out
        _file_cache_put(key, out)
    return out


def _assemble_rate(div_lower: float, p: float, q: float, alpha: float,
                   epsilon: float, m: float) -> float:
    s = effective_qber(p, q)
    return div_lower - binary_entropy(s) - finite_size_correction(alpha, epsilon) / m


def key_rate(
    params: ProtocolParams,
    tol: float = 1e-6,
    max_iter: int = 2000,
    restarts: int = 0,
    seed: int = 0,
) -> RatePoint:
    """Certified rate at fixed (p, q, alpha, epsilon, m); no outer search."""
    div = divergence_bound(
        params.p, params.q, params.alpha, tol=tol, max_iter=max_iter,
        restarts=restarts, seed=seed,
    )
    rate = _assemble_rate(div.lower, params.p, params.q, params.alpha,
                          params.epsilon, params.m)
    return RatePoint(
        params=params,
        rate=rate,
        q_star=params.q,
        alpha_star=params.alpha,
        certificate_gap=div.gap,
        divergence_lower=div.lower,
        divergence_upper=div.upper,
        iterations=div.iterations,
    )


def _noise_gain(p: float, q: float, alpha: float, **solver) -> float:
    """Rate with the m-independent terms only: divergence minus leak.

    The finite-size correction does not depend on q, so maximizing this
    surrogate over q is equivalent to maximizing the full rate at any m.
    """
    div = divergence_bound(p, q, alpha, **solver)
    return div.lower - binary_entropy(effective_qber(p, q))


def optimize_q(
    m: float,
    alpha: float,
    p: float,
    epsilon: float = 1e-10,
    tol: float = 1e-6,
    max_iter: int = 2000,
    restarts: int = 0,
    seed: int = 0,
) -> tuple[float, float]:
    """Maximize the certified rate over q in [0, 1/2].

    A six-point coarse scan hedges against plateaus, then a bounded scalar
    minimization refines to 1e-4 in q.  Flat landscapes tie-break to q = 0.
    Returns (q_star, certified rate at q_star).
    """
    solver = dict(tol=tol, max_iter=max_iter, restarts=restarts, seed=seed)

    def gain(q: float) -> float:
        return _noise_gain(p, float(q), alpha, **solver)

    coarse = [(gain(q), -q) for q in _Q_COARSE]
    best_gain, neg_q = max(coarse)
    q0 = -neg_q
    lo = max(0.0, q0 - 0.1)
    hi = min(0.5, q0 + 0.1)
    res = minimize_scalar(
        lambda q: -gain(q), bounds=(lo, hi), method="bounded",
        options={"xatol": _Q_TOL},
    )
    q_star, g_star = float(res.x), -float(res.fun)
    if best_gain > g_star:
        q_star, g_star = q0, best_gain
    # Tie-break: prefer no trusted noise when it buys nothing measurable.
    if g_star <= gain(0.0) + _Q_TIE_TOL:
        q_star, g_star = 0.0, gain(0.0)
    rate = g_star - finite_size_correction(alpha, epsilon) / m
    return q_star, rate


def optimize_alpha_q(
    m: float,
    p: float,
    alpha_grid: Sequence[float] | None = None,
    epsilon: float = 1e-10,
    tol: float = 1e-6,
    max_iter: int = 2000,
    restarts: int = 0,
    seed: int = 0,
) -> RatePoint:
    """Best certified rate over the alpha grid with nested q optimization."""
    grid = tuple(alpha_grid) if alpha_grid is not None else DEFAULT_ALPHA_GRID
    if not grid:
        raise KeyrateError("alpha grid must be non-empty")
    best: tuple[float, float, float] | None = None
    for alpha in grid:
        # Even a noiseless, leak-free channel yields at most 1 bit per sifted
        # bit, so orders whose finite-size penalty exceeds that cannot win.
        if best is not None and 1.0 - finite_size_correction(alpha, epsilon) / m <= best[0]:
            continue
        q_star, rate = optimize_q(
            m, alpha, p, epsilon=epsilon, tol=tol, max_iter=max_iter,
            restarts=restarts, seed=seed,
        )
        if best is None or rate > best[0]:
            best = (rate, q_star, alpha)
    if best is None:
        raise KeyrateError("every grid order was pruned; grid or m invalid")
    rate, q_star, alpha_star = best
    div = divergence_bound(p, q_star, alpha_star, tol=tol, max_iter=max_iter,
                           restarts=restarts, seed=seed)
    params = ProtocolParams(p=p, q=q_star, alpha=alpha_star, epsilon=epsilon, m=m)
    return RatePoint(
        params=params,
        rate=rate,
        q_star=q_star,
        alpha_star=alpha_star,
        certificate_gap=div.gap,
        divergence_lower=div.lower,
        divergence_upper=div.upper,
        iterations=div.iterations,
    )


def optimize_alpha_at_q(
    m: float,
    p: float,
    q: float,
    alpha_grid: Sequence[float] | None = None,
    epsilon: float = 1e-10,
    tol: float = 1e-6,
    max_iter: int = 2000,
    restarts: int = 0,
    seed: int = 0,
) -> RatePoint:
    """Best certified rate over the alpha grid with q held fixed."""
    grid = tuple(alpha_grid) if alpha_grid is not None else DEFAULT_ALPHA_GRID
    if not grid:
        raise KeyrateError("alpha grid must be non-empty")
    solver = dict(tol=tol, max_iter=max_iter, restarts=restarts, seed=seed)
    best: tuple[float, float] | None = None
    for alpha in grid:
        if best is not None and 1.0 - finite_size_correction(alpha, epsilon) / m <= best[0]:
            continue
        rate = _noise_gain(p, q, alpha, **solver) - finite_size_correction(alpha, epsilon) / m
        if best is None or rate > best[0]:
            best = (rate, alpha)
    if best is None:
        raise KeyrateError("every grid order was pruned; grid or m invalid")
    rate, alpha_star = best
    div = divergence_bound(p, q, alpha_star, **solver)
    params = ProtocolParams(p=p, q=q, alpha=alpha_star, epsilon=epsilon, m=m)
    return RatePoint(
        params=params,
        rate=rate,
        q_star=q,
        alpha_star=alpha_star,
        certificate_gap=div.gap,
        divergence_lower=div.lower,
        divergence_upper=div.upper,
        iterations=div.iterations,
    )


def delta_r(
    alpha: float,
    p_grid: Sequence[float],
    tol: float = 1e-6,
    max_iter: int = 2000,
    restarts: int = 0,
    seed: int = 0,
) -> tuple[float, float]:
    """Largest gain from trusted noise over a QBER grid, and where it peaks.

    The finite-size terms cancel in the difference, so the comparison uses
    the m-free rates.  Negative rates mean "no key" and are clamped to zero
    before differencing, which is what makes the gain vanish once both
    settings are keyless.
    """
    if not p_grid:
        raise KeyrateError("p grid must be non-empty")
    solver = dict(tol=tol, max_iter=max_iter, restarts=restarts, seed=seed)
    best_delta = 0.0
    p_at_max = float(p_grid[0])
    for p in p_grid:
        p = float(p)
        q_star, _ = optimize_q(1.0, alpha, p, epsilon=1.0, **solver)
        with_noise = max(_noise_gain(p, q_star, alpha, **solver), 0.0)
        without = max(_noise_gain(p, 0.0, alpha, **solver), 0.0)
        d = abs(with_noise - without)
        if d > best_delta:
            best_delta = d
            p_at_max = p
    return best_delta, p_at_max


def _certifies_positive(
    m: float,
    p: float,
    with_noise: bool,
    alpha_grid: Sequence[float],
    epsilon: float,
    tol: float,
    max_iter: int,
    seed: int,
) -> bool:
    """True when some (alpha, q) choice certifies a rate above the floor.

    Each candidate runs with two early exits: the solver stops as soon as its
    certified lower bound clears the required divergence (positive decided),
    or as soon as its upper value sinks below it (the candidate can never
    certify, since certificates cannot exceed the true minimum).  Because the
    divergence decreases in alpha, an upper bound observed at one order also
    rules out every larger order whose finite-size penalty is not smaller
    enough to compensate.
    """
    q_candidates = (0.0,) if not with_noise else (
        0.1, 0.05, 0.15, 0.02, 0.12, 0.08, 0.2, 0.25, 0.3, 0.35, 0.0, 0.4,
    )
    grid = sorted(alpha_grid)
    for q in q_candidates:
        leak = binary_entropy(effective_qber(p, q))
        div_upper_min = math.inf
        for alpha in grid:
            g_over_m = finite_size_correction(alpha, epsilon) / m
            if g_over_m >= 1.0:
                continue
            needed = POSITIVE_RATE_TOL + leak + g_over_m
            if div_upper_min <= needed:
                continue
            div = divergence_bound(
                p, q, alpha, tol=tol, max_iter=max_iter, restarts=0,
                seed=seed, stop_lower_above=needed, stop_upper_below=needed,
            )
            if div.lower > needed:
                return True
            div_upper_min = min(div_upper_min, div.upper)
    return False


def max_tolerable_qber(
    m: float,
    with_noise: bool,
    alpha_grid: Sequence[float] | None = None,
    epsilon: float = 1e-10,
    tol: float = 1e-6,
    max_iter: int = 2000,
    seed: int = 0,
    p_tol: float = 1e-3,
) -> QberThreshold:
    """Largest QBER with a certified positive rate, by bisection to p_tol.

    ``with_noise`` optimizes q; otherwise q is pinned to 0.  When no positive
    rate exists anywhere the threshold is reported as 0 with the flag down.
    """
    grid = tuple(alpha_grid) if alpha_grid is not None else DEFAULT_ALPHA_GRID
    if not grid:
        raise KeyrateError("alpha grid must be non-empty")

    def positive(p: float) -> bool:
        return _certifies_positive(m, p, with_noise, grid, epsilon, tol,
                                   max_iter, seed)

    lo = 0.01
    if not positive(lo):
        lo = 0.001
        if not positive(lo):
            return QberThreshold(0.0, False)
    hi = 0.25
    while positive(hi):
        hi = min(0.5, hi + 0.05)
        if hi >= 0.5:
            return QberThreshold(0.5, True)
    while hi - lo > p_tol:
        mid = 0.5 * (lo + hi)
        if positive(mid):
            lo = mid
        else:
            hi = mid
    return QberThreshold(lo, True)


def guessing_probability(p: float, q: float) -> float:
    """Eavesdropper guessing probability for the flipped key bit."""
    if not 0.0 <= p <= 0.5:
        raise KeyrateError(f"p must lie in [0, 1/2], got {p}")
    if not 0.0 <= q <= 0.5:
        raise KeyrateError(f"q must lie in [0, 1/2], got {q}")
    return 0.5 + (1.0 - 2.0 * q) * math.sqrt(p * (1.0 - p))


def min_entropy_rate(mp: MinEntropyParams) -> float:
    """Min-entropy benchmark rate with error-correction efficiency gamma."""
    s = effective_qber(mp.p, mp.q)
    return -math.log2(guessing_probability(mp.p, mp.q)) - mp.gamma * binary_entropy(s)


def min_entropy_derivatives(mp: MinEntropyParams) -> tuple[float, float]:
    """Closed-form first and second q-derivatives of the benchmark rate.

    Rejected where the leak derivative is singular (effective error exactly
    0, which on the valid domain means p = q = 0).
    """
    s = effective_qber(mp.p, mp.q)
    if s <= 0.0 or s >= 1.0:
        raise KeyrateError(
            f"effective error {s} is on the entropy boundary; derivatives diverge"
        )
    u = math.sqrt(mp.p * (1.0 - mp.p))
    pg = 0.5 + (1.0 - 2.0 * mp.q) * u
    one_minus_2p = 1.0 - 2.0 * mp.p
    first = 2.0 * u / (pg * LN2) - mp.gamma * one_minus_2p * math.log2((1.0 - s) / s)
    second = (4.0 * u * u / (pg * pg * LN2)
              + mp.gamma * one_minus_2p * one_minus_2p / (LN2 * s * (1.0 - s)))
    return first, second
