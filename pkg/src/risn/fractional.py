"""Caputo fractional derivative of order alpha in (0, 1] as an operational matrix.

The operator maps function values at collocation points to approximate Caputo
derivative values at the same points.  Construction: interpolate in a shifted
Legendre basis (values via the stable three-term recurrence) and differentiate
each basis function analytically through its monomial expansion, using

    D^a x^k = Gamma(k+1) / Gamma(k+1-a) * x^(k-a)   (k >= 1),   D^a 1 = 0.

The monomial expansion of high-degree Legendre polynomials cancels
catastrophically in float64, so the derivative table is assembled in extended
precision (mpmath) and rounded once at the end.  The matrix itself is a plain
float64 constant; applying it to tape tensors keeps gradients flowing.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import gamma as _gamma

import mpmath as mp
import numpy as np

from . import autodiff as ad

MAX_CONDITION = 1e12
_ORIGIN_EPS = 1e-10


class FractionalError(Exception):
    pass


@dataclass(frozen=True)
class CaputoOperator:
    alpha: float
    points: np.ndarray
    matrix: np.ndarray
    basis_degree: int


def _shifted_legendre_values(points: np.ndarray, degree: int, b: float) -> np.ndarray:
    """Values of shifted Legendre P_k(2x/b - 1), k = 0..degree, at the points."""
    t = 2.0 * points / b - 1.0
    v = np.empty((points.size, degree + 1))
    v[:, 0] = 1.0
    if degree >= 1:
        v[:, 1] = t
    for k in range(1, degree):
        v[:, k + 1] = ((2 * k + 1) * t * v[:, k] - k * v[:, k - 1]) / (k + 1)
    return v


@lru_cache(maxsize=None)
def _legendre_monomial_coeffs(degree: int) -> tuple[tuple[int, ...], ...]:
    """Exact integer coefficients of shifted Legendre on [0,1] in powers of x:
    P_k(2x-1) = sum_j (-1)^(k+j) C(k,j) C(k+j,j) x^j."""
    from math import comb

    rows = []
    for k in range(degree + 1):
        rows.append(tuple((-1) ** (k + j) * comb(k, j) * comb(k + j, j) for j in range(k + 1)))
    return tuple(rows)


def _caputo_basis_table(points: np.ndarray, degree: int, alpha: float, b: float) -> np.ndarray:
    """D holds D^alpha of each shifted-Legendre basis function at each point.

    Computed with 60-digit arithmetic: the alternating monomial coefficients
    reach ~1e21 by degree 30 and float64 loses every significant digit.
    """
    coeffs = _legendre_monomial_coeffs(degree)
    n = points.size
    table = np.zeros((n, degree + 1))
    with mp.workdps(60):
        alpha_mp = mp.mpf(repr(alpha))
        b_mp = mp.mpf(repr(float(b)))
        # j = 0 never contributes (Caputo of a constant is zero); avoid the
        # Gamma(0) pole it would hit at alpha = 1.
        gamma_ratio = [mp.mpf(0)] + [
            mp.gamma(j + 1) / mp.gamma(j + 1 - alpha_mp) for j in range(1, degree + 1)
        ]
        for i, x in enumerate(points):
            x_mp = mp.mpf(repr(float(x)))
            # Powers x^(j - alpha); exponent 0 at x=0 means the constant limit 1.
            powers = []
            for j in range(1, degree + 1):
                expo = j - alpha_mp
                if x < _ORIGIN_EPS:
                    powers.append(mp.mpf(1) if expo == 0 else mp.mpf(0))
                else:
                    powers.append(x_mp ** expo)
            for k in range(degree + 1):
                # basis on [0,b]: scale monomial j by b^-j
                acc = mp.mpf(0)
                for j in range(1, k + 1):
                    acc += coeffs[k][j] * gamma_ratio[j] * powers[j - 1] / b_mp ** j
                table[i, k] = float(acc)
    return table


def build_caputo(alpha: float, points: np.ndarray, basis_degree: int | None = None) -> CaputoOperator:
    """Operational matrix for D^alpha on the given sorted collocation points."""
    if not 0.0 < alpha <= 1.0:
        raise FractionalError(f"alpha must be in (0, 1], got {alpha}")
    points = np.asarray(points, dtype=np.float64).reshape(-1)
    n = points.size
    if n < 2:
        raise FractionalError("need at least two collocation points")
    if np.any(points < 0):
        raise FractionalError("collocation points must be non-negative")
    if np.any(np.diff(points) <= 0):
        if np.unique(points).size != n:
            raise FractionalError("collocation points must be distinct")
        raise FractionalError("collocation points must be sorted ascending")
    if basis_degree is None:
        basis_degree = min(n - 1, 30)
    if not 1 <= basis_degree <= n - 1:
        raise FractionalError(f"basis_degree must be in [1, {n - 1}], got {basis_degree}")

    b = float(points[-1]) if points[-1] > 0 else 1.0
    v = _shifted_legendre_values(points, basis_degree, b)
    cond = np.linalg.cond(v)
    if cond > MAX_CONDITION:
        raise FractionalError(
            f"interpolation matrix condition {cond:.2e} exceeds {MAX_CONDITION:.0e}; "
            "lower basis_degree"
        )
    d = _caputo_basis_table(points, basis_degree, alpha, b)
    # matrix @ u = D @ (least-squares coefficients of u in the basis)
    proj = np.linalg.lstsq(v, np.eye(n), rcond=None)[0]
    return CaputoOperator(float(alpha), points, d @ proj, int(basis_degree))


def apply(op: CaputoOperator, u_values) -> ad.Tensor:
    """Matrix-vector product on the tape; the matrix is constant, u carries grads."""
    mat = ad.Tensor(op.matrix)
    if isinstance(u_values, np.ndarray):
        u_values = ad.Tensor(u_values.reshape(-1, 1))
    if isinstance(u_values, ad.Tensor) and u_values.data.ndim == 1:
        u_values = ad.reshape(u_values, (-1, 1))
    if u_values.data.shape[0] != op.points.size:
        raise FractionalError(
            f"expected {op.points.size} values, got {u_values.data.shape[0]}"
        )
    return ad.matmul(mat, u_values)


def caputo_monomial(alpha: float, k: int, x: np.ndarray) -> np.ndarray:
    """Reference: D^alpha x^k = Gamma(k+1)/Gamma(k+1-alpha) x^(k-alpha), k >= 1."""
    x = np.asarray(x, dtype=np.float64)
    return _gamma(k + 1) / _gamma(k + 1 - alpha) * np.power(x, k - alpha)
