"""Gauss-Legendre quadrature rules and the interval mappings used by the solver.

Rules are generated on [-1, 1] by Newton iteration on the Legendre recurrence
and then mapped to fixed intervals (Fredholm terms), to per-collocation-point
intervals [0, x_i] (Volterra terms), or tensorized across axes for
multi-dimensional integrals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_ORDER = 512

_NEWTON_TOL = 1e-15
_NEWTON_MAX_ITERS = 100


class QuadratureError(Exception):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """An n-point rule on [-1, 1]: exact for polynomials of degree <= 2n-1."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class MappedRule:
    """Quadrature points mapped onto target interval(s).

    For a fixed interval, ``points``/``weights`` are 1-D of length n.  For a
    Volterra map onto [0, x_i] they are (N, n): row i integrates over [0, x_i].
    Tensor products carry points of shape (p, d) or (N, p, d) with matching
    weights (p,) or (N, p).
    """

    points: np.ndarray
    weights: np.ndarray


def _legendre_and_derivative(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate P_n and P_n' by the three-term recurrence."""
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(1, n):
        p_prev, p = p, ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
    dp = n * (x * p - p_prev) / (x * x - 1.0)
    return p, dp


@lru_cache(maxsize=None)
def _gauss_legendre_cached(n: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    if n == 1:
        return (0.0,), (2.0,)
    k = np.arange(1, n + 1)
    x = np.cos(np.pi * (k - 0.25) / (n + 0.5))
    for _ in range(_NEWTON_MAX_ITERS):
        p, dp = _legendre_and_derivative(n, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) < _NEWTON_TOL:
            break
    else:
        worst = int(np.argmax(np.abs(dx)))
        raise QuadratureError(
            f"Newton iteration for Gauss-Legendre nodes did not converge "
            f"(order {n}, node index {worst})"
        )
    _, dp = _legendre_and_derivative(n, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    # Chebyshev starting values come out descending; flip to ascending and
    # symmetrize so node_k == -node_{n+1-k} holds exactly.
    x = x[::-1]
    w = w[::-1]
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return tuple(x.tolist()), tuple(w.tolist())


def gauss_legendre(n: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule on [-1, 1]."""
    if not 1 <= n <= MAX_ORDER:
        raise QuadratureError(f"quadrature order must be in [1, {MAX_ORDER}], got {n}")
    nodes, weights = _gauss_legendre_cached(int(n))
    return QuadratureRule(int(n), np.array(nodes), np.array(weights))


def map_affine(rule: QuadratureRule, a: float, b: float) -> MappedRule:
    """Map a rule onto [a, b]: integrates f over [a, b] as sum(w * f(points))."""
    if not a < b:
        raise QuadratureError(f"invalid interval [{a}, {b}]: need a < b")
    half = 0.5 * (b - a)
    return MappedRule(half * rule.nodes + 0.5 * (a + b), half * rule.weights)


def map_volterra(rule: QuadratureRule, x: np.ndarray) -> MappedRule:
    """Per-collocation-point map onto [0, x_i]; row i of the result integrates
    over [0, x_i].  x_i == 0 yields an all-zero row (empty integral)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if np.any(x < 0):
        raise QuadratureError("Volterra upper limits must be non-negative")
    half = 0.5 * x[:, None]
    return MappedRule(half * (rule.nodes + 1.0)[None, :], half * rule.weights[None, :])


def tensor_product(rules: list[MappedRule]) -> MappedRule:
    """Cartesian product of per-axis mapped rules.

    Axes may mix shared rules (1-D points) and per-collocation Volterra blocks
    (2-D points); any per-collocation axis makes the result per-collocation.
    """
    if not 1 <= len(rules) <= 3:
        raise QuadratureError(f"tensor products support 1-3 axes, got {len(rules)}")
    blocked = any(r.points.ndim == 2 for r in rules)
    if not blocked:
        grids = np.meshgrid(*[r.points for r in rules], indexing="ij")
        wgrids = np.meshgrid(*[r.weights for r in rules], indexing="ij")
        points = np.stack([g.reshape(-1) for g in grids], axis=-1)
        weights = np.ones_like(wgrids[0])
        for w in wgrids:
            weights = weights * w
        return MappedRule(points, weights.reshape(-1))
    n_rows = max(r.points.shape[0] for r in rules if r.points.ndim == 2)
    pts2 = []
    wts2 = []
    for r in rules:
        p = r.points if r.points.ndim == 2 else np.broadcast_to(r.points, (n_rows, r.points.size))
        w = r.weights if r.weights.ndim == 2 else np.broadcast_to(r.weights, (n_rows, r.weights.size))
        if p.shape[0] != n_rows:
            raise QuadratureError("per-collocation axes disagree on row count")
        pts2.append(p)
        wts2.append(w)
    counts = [p.shape[1] for p in pts2]
    total = int(np.prod(counts))
    d = len(rules)
    points = np.empty((n_rows, total, d))
    weights = np.ones((n_rows, total))
    for axis in range(d):
        rep_inner = int(np.prod(counts[axis + 1:])) if axis + 1 < d else 1
        rep_outer = total // (counts[axis] * rep_inner)
        idx = np.tile(np.repeat(np.arange(counts[axis]), rep_inner), rep_outer)
        points[:, :, axis] = pts2[axis][:, idx]
        weights *= wts2[axis][:, idx]
    return MappedRule(points, weights)


def gamma(x: float) -> float:
    """Gamma function; raises at the poles (non-positive integers)."""
    if x <= 0 and float(x) == int(x):
        raise ValueError(f"gamma pole at non-positive integer {x}")
    return math.gamma(x)
