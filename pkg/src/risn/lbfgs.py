"""Limited-memory BFGS with a strong-Wolfe line search.

Two-loop recursion over an m-pair curvature history; the line search brackets
and zooms (cubic interpolation with bisection fallback) until both the
sufficient-decrease and strong curvature conditions hold.  The first
iteration's trial step is the configured learning rate; later iterations try
the unit step first.  Objective evaluations that raise a domain error or
return non-finite values are treated as infinitely bad trial points, which
the bracketing phase then backs away from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import AutodiffDomainError

_CURVATURE_EPS = 1e-12


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    grad_norm: float
    step: float
    ls_evals: int
    wolfe_ok: bool


@dataclass
class LbfgsResult:
    x: np.ndarray
    loss: float
    converged: bool
    status: str
    iterations: int
    history: list[IterationRecord] = field(default_factory=list)


class _Objective:
    """Wraps the raw objective: counts evaluations, maps failures to +inf."""

    def __init__(self, fun: Callable[[np.ndarray], tuple[float, np.ndarray]]):
        self.fun = fun
        self.evals = 0

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray | None]:
        self.evals += 1
        try:
            f, g = self.fun(x)
        except AutodiffDomainError:
            return math.inf, None
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return math.inf, None
        return float(f), np.asarray(g, dtype=np.float64)


def _cubic_min(a, fa, dfa, b, fb, dfb):
    """Minimizer of the cubic interpolant on [a, b]; NaN if degenerate."""
    d1 = dfa + dfb - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - dfa * dfb
    if disc < 0:
        return math.nan
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = dfb - dfa + 2 * d2
    if denom == 0:
        return math.nan
    return b - (b - a) * (dfb + d2 - d1) / denom


class _Budget:
    def __init__(self, n: int):
        self.left = n

    def take(self) -> bool:
        if self.left <= 0:
            return False
        self.left -= 1
        return True


def _zoom(phi, lo, hi, f0, df0, c1, c2, budget: _Budget):
    """Nocedal-Wright zoom: shrink [lo, hi] keeping the Wolfe invariants.

    lo/hi are (alpha, f, df) triples; df at hi may be NaN (unknown or from an
    infeasible point).  Interpolation: cubic when both ends carry derivatives,
    quadratic when only the low end does, and a strong shrink toward the good
    end when the high end is infeasible -- the latter matters when the trial
    step overshoots by many orders of magnitude.
    """
    a_lo, f_lo, df_lo = lo
    a_hi, f_hi, df_hi = hi
    while budget.take():
        span = a_hi - a_lo
        if math.isfinite(f_hi) and math.isfinite(df_hi):
            trial = _cubic_min(a_lo, f_lo, df_lo, a_hi, f_hi, df_hi)
        elif math.isfinite(f_hi):
            denom = f_hi - f_lo - df_lo * span
            trial = a_lo - 0.5 * df_lo * span * span / denom if denom != 0 else math.nan
        else:
            trial = a_lo + 0.1 * span
        width = abs(span)
        low, high = min(a_lo, a_hi), max(a_lo, a_hi)
        margin = 1e-3 * width
        if math.isnan(trial) or not low + margin <= trial <= high - margin:
            trial = 0.5 * (a_lo + a_hi)
        f_t, df_t = phi(trial)
        if f_t > f0 + c1 * trial * df0 or f_t >= f_lo:
            a_hi, f_hi, df_hi = trial, f_t, df_t
        else:
            if abs(df_t) <= -c2 * df0:
                return trial, f_t, df_t
            if df_t * (a_hi - a_lo) >= 0:
                a_hi, f_hi, df_hi = a_lo, f_lo, df_lo
            a_lo, f_lo, df_lo = trial, f_t, df_t
        if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
            break
    return None


def _line_search(obj, x, f0, g0, p, first_step, c1, c2, max_evals):
    """Strong Wolfe search along p. Returns (alpha, f, g, evals, wolfe_ok)."""
    df0 = float(g0 @ p)
    budget = _Budget(max_evals)
    cache = {}

    def phi(alpha):
        if alpha not in cache:
            f, g = obj(x + alpha * p)
            df = float(g @ p) if g is not None else math.nan
            cache[alpha] = (f, df, g)
        f, df, _ = cache[alpha]
        return f, df

    a_prev, f_prev, df_prev = 0.0, f0, df0
    alpha = first_step
    accepted = None
    while budget.take():
        f_a, df_a = phi(alpha)
        if f_a > f0 + c1 * alpha * df0 or (f_a >= f_prev and a_prev > 0.0):
            accepted = _zoom(
                phi, (a_prev, f_prev, df_prev), (alpha, f_a, df_a),
                f0, df0, c1, c2, budget,
            )
            break
        if abs(df_a) <= -c2 * df0:
            accepted = (alpha, f_a, df_a)
            break
        if df_a >= 0:
            accepted = _zoom(
                phi, (alpha, f_a, df_a), (a_prev, f_prev, df_prev),
                f0, df0, c1, c2, budget,
            )
            break
        a_prev, f_prev, df_prev = alpha, f_a, df_a
        alpha = 2.0 * alpha
    if accepted is None:
        return None
    a, f_a, df_a = accepted
    g_a = cache[a][2]
    if g_a is None:
        return None
    wolfe_ok = f_a <= f0 + c1 * a * df0 + 1e-12 and abs(df_a) <= -c2 * df0 + 1e-12
    return a, f_a, g_a, max_evals - budget.left, wolfe_ok


def lbfgs_minimize(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    *,
    history_size: int = 10,
    learning_rate: float = 0.01,
    max_iters: int = 500,
    grad_tol: float = 1e-9,
    c1: float = 1e-4,
    c2: float = 0.9,
    max_line_search: int = 25,
    plateau_window: int = 10,
    plateau_rel_tol: float = 1e-12,
    callback: Callable[[IterationRecord], None] | None = None,
) -> LbfgsResult:
    """Minimize fun(x) -> (loss, grad). Returns the best parameters seen."""
    if not 0.0 < c1 < c2 < 1.0:
        raise ValueError(f"need 0 < c1 < c2 < 1, got c1={c1}, c2={c2}")
    obj = _Objective(fun)
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = obj(x)
    if g is None:
        raise AutodiffDomainError("objective is non-finite at the initial point")
    best_x, best_f = x.copy(), f
    history: list[IterationRecord] = []
    best_trace: list[float] = []
    pairs: list[tuple[np.ndarray, np.ndarray]] = []
    status = "max_iters"
    converged = False

    for iteration in range(1, max_iters + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= grad_tol:
            status, converged = "grad_tol", True
            break

        # Two-loop recursion.
        q = g.copy()
        alphas = []
        for s, y in reversed(pairs):
            rho = 1.0 / float(y @ s)
            a = rho * float(s @ q)
            alphas.append((a, rho, s, y))
            q -= a * y
        if pairs:
            s, y = pairs[-1]
            q *= float(s @ y) / float(y @ y)
        for a, rho, s, y in reversed(alphas):
            beta = rho * float(y @ q)
            q += (a - beta) * s
        p = -q
        if float(g @ p) >= 0:
            pairs.clear()
            p = -g

        first_step = learning_rate if iteration == 1 else 1.0
        found = _line_search(obj, x, f, g, p, first_step, c1, c2, max_line_search)
        if found is None:
            status = "line_search_failed"
            break
        step, f_new, g_new, ls_evals, wolfe_ok = found

        s = step * p
        y = g_new - g
        sy = float(s @ y)
        if sy > _CURVATURE_EPS * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            pairs.append((s, y))
            if len(pairs) > history_size:
                pairs.pop(0)

        x = x + s
        f, g = f_new, g_new
        if f < best_f:
            best_f, best_x = f, x.copy()
        record = IterationRecord(
            iteration, f, float(np.linalg.norm(g)), step, ls_evals, wolfe_ok
        )
        history.append(record)
        if callback is not None:
            callback(record)

        best_trace.append(best_f)
        if len(best_trace) > plateau_window:
            ref = best_trace[-plateau_window - 1]
            if ref - best_f <= plateau_rel_tol * abs(best_f):
                status, converged = "plateau", True
                break

    # Only a failed line search counts as non-convergence; hitting max_iters
    # is a normal stop.
    converged = status != "line_search_failed"

    return LbfgsResult(
        x=best_x, loss=best_f, converged=converged, status=status,
        iterations=len(history), history=history,
    )
