"""Equation data model and the built-in benchmark registry.

A problem is either a single :class:`EquationSpec` or a :class:`SystemSpec` of
coupled equations.  The general single-equation shape is

    kappa * L[u](x) + c(x) * u(x) = S(x) + sum_k  I_k[u](x)

with L one of: identity, d^v/dx^v, a Caputo derivative of order alpha, or the
first time partial for two-variable problems; c(x) an optional coefficient on
the undifferentiated unknown; and each integral term

    I_k[u](x) = integral  K_k(x, t) * zeta(u(t), u'(t)) dt

over fixed limits (Fredholm), per-point limits [0, x] (Volterra), or a mix
across axes.  The registry P01-P20 plus HELM covers linear and nonlinear
Volterra/Fredholm equations, Abel equations, multi-dimensional equations,
systems, ordinary/partial/fractional integro-differential equations, and a
Helmholtz-kernel equation whose reference solution is tabulated numerically.

Every registry entry with an exact solution is validated by
:func:`residual_of_exact`, a deliberately plain quadrature evaluator kept
independent of the training-time residual assembler.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import quadrature as quad
from .expressions import Expr, eval_expression, free_variables, parse_expression, to_string
from .fractional import build_caputo

ZETA_KINDS = ("u", "u2", "u3", "du", "u2+du", "one")
LHS_KINDS = ("identity", "derivative", "caputo", "partial_t")
CONDITION_KINDS = ("ic", "bc", "data")

DEFAULT_VARS = ("x", "y", "z")
INTEGRATION_VARS = ("t", "s", "r")


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class AxisLimit:
    """How one domain axis enters an integral term.

    kind 'fixed' integrates the axis over [a, b]; 'upper_x' integrates over
    [0, x_axis] where x_axis is the collocation coordinate; 'none' leaves the
    axis un-integrated (the integrand sees the collocation coordinate).
    """

    kind: str
    a: float = 0.0
    b: float = 0.0
    var: str = ""

    def __post_init__(self):
        if self.kind not in ("fixed", "upper_x", "none"):
            raise ProblemError(f"unknown axis limit kind {self.kind!r}")
        if self.kind == "fixed" and not self.a < self.b:
            raise ProblemError(f"fixed limits need a < b, got [{self.a}, {self.b}]")
        if self.kind != "none" and not self.var:
            raise ProblemError("integrated axes need an integration variable name")


def fredholm(a: float, b: float, var: str = "t") -> AxisLimit:
    return AxisLimit("fixed", a=a, b=b, var=var)


def volterra(var: str = "t") -> AxisLimit:
    return AxisLimit("upper_x", var=var)


def no_integration() -> AxisLimit:
    return AxisLimit("none")


@dataclass(frozen=True)
class IntegralTerm:
    limits: tuple[AxisLimit, ...]
    kernel: Expr
    zeta: str = "u"
    unknown: int = 0

    def __post_init__(self):
        if self.zeta not in ZETA_KINDS:
            raise ProblemError(f"unknown integrand form {self.zeta!r}")
        if not any(lim.kind != "none" for lim in self.limits):
            raise ProblemError("integral term must integrate at least one axis")


@dataclass(frozen=True)
class Condition:
    kind: str
    point: tuple[float, ...]
    value: float

    def __post_init__(self):
        if self.kind not in CONDITION_KINDS:
            raise ProblemError(f"unknown condition kind {self.kind!r}")


@dataclass(frozen=True)
class Lhs:
    kind: str = "identity"
    order: int = 0
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in LHS_KINDS:
            raise ProblemError(f"unknown operator kind {self.kind!r}")
        if self.kind == "derivative" and self.order not in (1, 2):
            raise ProblemError(f"derivative order must be 1 or 2, got {self.order}")
        if self.kind == "caputo" and not 0.0 < self.alpha <= 1.0:
            raise ProblemError(f"Caputo order must be in (0, 1], got {self.alpha}")


@dataclass(frozen=True)
class EquationSpec:
    name: str
    description: str
    kappa: float
    lhs: Lhs
    integrals: tuple[IntegralTerm, ...]
    source: Expr
    domain: tuple[tuple[float, float], ...]
    var_names: tuple[str, ...]
    u_coeff: Expr | None = None
    conditions: tuple[Condition, ...] = ()
    exact: Expr | None = None
    lambda_ic: float = 1.0
    lambda_bc: float = 1.0
    lambda_data: float = 1.0
    exclude_origin: bool = False
    check_tol: float = 1e-6
    reference: dict | None = None

    def __post_init__(self):
        d = len(self.domain)
        if d != len(self.var_names):
            raise ProblemError("domain and variable names disagree on dimension")
        for lo, hi in self.domain:
            if not lo < hi:
                raise ProblemError(f"empty domain interval [{lo}, {hi}]")
        for term in self.integrals:
            if len(term.limits) != d:
                raise ProblemError("integral term does not cover every axis")
            allowed = set(self.var_names) | {
                lim.var for lim in term.limits if lim.kind != "none"
            }
            extra = free_variables(term.kernel) - allowed
            if extra:
                raise ProblemError(f"kernel references unbound variables {sorted(extra)}")
        if free_variables(self.source) - set(self.var_names):
            raise ProblemError("source references unknown variables")
        if self.exact is not None and free_variables(self.exact) - set(self.var_names):
            raise ProblemError("exact solution references unknown variables")
        n_cond = len(self.conditions)
        if self.lhs.kind == "derivative" and n_cond < self.lhs.order:
            raise ProblemError(
                f"operator of order {self.lhs.order} needs at least "
                f"{self.lhs.order} conditions, got {n_cond}"
            )
        for cond in self.conditions:
            if len(cond.point) != d:
                raise ProblemError("condition point dimension mismatch")

    @property
    def dim(self) -> int:
        return len(self.domain)


@dataclass(frozen=True)
class SystemSpec:
    name: str
    description: str
    equations: tuple[EquationSpec, ...]

    def __post_init__(self):
        if len(self.equations) < 2:
            raise ProblemError("a system needs at least two equations")
        domains = {eq.domain for eq in self.equations}
        if len(domains) != 1:
            raise ProblemError("system equations must share one domain")
        m = len(self.equations)
        for eq in self.equations:
            for term in eq.integrals:
                if not 0 <= term.unknown < m:
                    raise ProblemError(
                        f"integral term references unknown {term.unknown + 1}, "
                        f"but the system has {m} unknowns"
                    )

    @property
    def domain(self):
        return self.equations[0].domain

    @property
    def var_names(self):
        return self.equations[0].var_names

    @property
    def dim(self) -> int:
        return len(self.domain)

    @property
    def n_unknowns(self) -> int:
        return len(self.equations)


ProblemSpec = EquationSpec | SystemSpec


def equations_of(spec: ProblemSpec) -> tuple[EquationSpec, ...]:
    return spec.equations if isinstance(spec, SystemSpec) else (spec,)


# ---------------------------------------------------------------------------
# Independent residual check: plain per-point quadrature over the exact
# solution, used to validate registry transcriptions and user problem files.
# ---------------------------------------------------------------------------


def _eval(expr: Expr, bindings: dict) -> np.ndarray:
    out = eval_expression(expr, bindings)
    return np.asarray(out.data if hasattr(out, "data") else out, dtype=np.float64)


def _exact_value(eq: EquationSpec, pts: np.ndarray) -> np.ndarray:
    bind = {v: pts[:, j] for j, v in enumerate(eq.var_names)}
    return np.broadcast_to(_eval(eq.exact, bind), (pts.shape[0],)).copy()


def _exact_derivative(eq: EquationSpec, pts: np.ndarray, axis: int, order: int) -> np.ndarray:
    h = 1e-5 if order == 1 else 1e-4
    shift = np.zeros(pts.shape[1])
    shift[axis] = h
    if order == 1:
        return (_exact_value(eq, pts + shift) - _exact_value(eq, pts - shift)) / (2 * h)
    return (
        _exact_value(eq, pts + shift)
        - 2 * _exact_value(eq, pts)
        + _exact_value(eq, pts - shift)
    ) / h**2


def _zeta_of_exact(eq: EquationSpec, kind: str, pts: np.ndarray) -> np.ndarray:
    if kind == "one":
        return np.ones(pts.shape[0])
    u = _exact_value(eq, pts)
    if kind == "u":
        return u
    if kind == "u2":
        return u * u
    if kind == "u3":
        return u**3
    du = _exact_derivative(eq, pts, 0, 1)
    if kind == "du":
        return du
    return u * u + du  # u2+du


def _term_value_at(
    eq: EquationSpec,
    term: IntegralTerm,
    x: np.ndarray,
    rule: quad.QuadratureRule,
    exacts: tuple[EquationSpec, ...],
) -> float:
    axis_rules = []
    int_axes = []
    for axis, lim in enumerate(term.limits):
        if lim.kind == "none":
            continue
        hi = lim.b if lim.kind == "fixed" else float(x[axis])
        lo = lim.a if lim.kind == "fixed" else 0.0
        if hi <= lo:
            return 0.0
        axis_rules.append(quad.map_affine(rule, lo, hi))
        int_axes.append(axis)
    prod = quad.tensor_product(axis_rules)
    nodes = prod.points if prod.points.ndim == 2 else prod.points[:, None]
    n_nodes = nodes.shape[0]
    eval_pts = np.tile(x, (n_nodes, 1))
    bindings = {v: np.full(n_nodes, x[j]) for j, v in enumerate(eq.var_names)}
    for column, axis in enumerate(int_axes):
        eval_pts[:, axis] = nodes[:, column]
        bindings[term.limits[axis].var] = nodes[:, column]
    kernel = np.broadcast_to(_eval(term.kernel, bindings), (n_nodes,))
    zeta = _zeta_of_exact(exacts[term.unknown], term.zeta, eval_pts)
    return float(np.sum(prod.weights * kernel * zeta))


def residual_of_exact(
    spec: ProblemSpec, points: np.ndarray, order: int = 100
) -> np.ndarray:
    """|residual| of the exact solution at the given points, one row per equation.

    Plain scalar quadrature; shares nothing with the solver's tape-based
    assembler so transcription errors and assembler bugs cannot mask each
    other.
    """
    eqs = equations_of(spec)
    if any(eq.exact is None for eq in eqs):
        raise ProblemError(f"problem {eqs[0].name!r} has no exact solution to check")
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    rule = quad.gauss_legendre(order)
    caputo_ops = {}
    out = np.empty((len(eqs), points.shape[0]))
    for row, eq in enumerate(eqs):
        bind = {v: points[:, j] for j, v in enumerate(eq.var_names)}
        if eq.lhs.kind == "identity":
            lhs = eq.kappa * _exact_value(eq, points)
        elif eq.lhs.kind == "derivative":
            lhs = eq.kappa * _exact_derivative(eq, points, 0, eq.lhs.order)
        elif eq.lhs.kind == "partial_t":
            lhs = eq.kappa * _exact_derivative(eq, points, 1, 1)
        else:  # caputo: exact values at sorted points through the matrix
            xs = points[:, 0]
            key = (eq.lhs.alpha, row)
            if key not in caputo_ops:
                idx = np.argsort(xs)
                op = build_caputo(
                    eq.lhs.alpha, xs[idx], basis_degree=min(len(xs) - 1, 12)
                )
                caputo_ops[key] = (op, idx)
            op, idx = caputo_ops[key]
            vals = np.empty_like(xs)
            vals[idx] = (op.matrix @ _exact_value(eq, points)[idx, None]).reshape(-1)
            lhs = eq.kappa * vals
        if eq.u_coeff is not None:
            lhs = lhs + np.broadcast_to(_eval(eq.u_coeff, bind), lhs.shape) * _exact_value(eq, points)
        total = lhs - np.broadcast_to(_eval(eq.source, bind), lhs.shape)
        for term in eq.integrals:
            for i in range(points.shape[0]):
                total[i] -= _term_value_at(eq, term, points[i], rule, eqs)
        out[row] = total
    return np.abs(out)


def check_registry_problem(spec: ProblemSpec, n_points: int = 10, order: int = 100,
                           seed: int = 0) -> float:
    """Max |residual| of the exact solution at random interior points."""
    rng = np.random.default_rng(seed)
    eqs = equations_of(spec)
    lo = np.array([a for a, _ in eqs[0].domain])
    hi = np.array([b for _, b in eqs[0].domain])
    span = hi - lo
    pts = lo + span * rng.uniform(0.05, 0.95, size=(n_points, len(lo)))
    worst = float(np.max(residual_of_exact(spec, pts, order=order)))
    tol = max(eq.check_tol for eq in eqs)
    if worst > tol:
        raise ProblemError(
            f"problem {eqs[0].name!r} fails its transcription self-check: "
            f"max residual {worst:.3e} > {tol:.0e}"
        )
    return worst


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


def _expr(text: str, variables: tuple[str, ...]) -> Expr:
    return parse_expression(text, set(variables))


def _one_dim(
    name: str,
    description: str,
    *,
    kappa: float,
    zeta: str,
    kernels: list[tuple[str, str]],  # (limit kind 'fredholm'|'volterra', kernel text)
    source: str,
    exact: str | None,
    lhs: Lhs = Lhs("identity"),
    u_coeff: str | None = None,
    domain: tuple[float, float] = (0.0, 1.0),
    conditions: tuple[Condition, ...] = (),
    exclude_origin: bool = False,
    check_tol: float = 1e-6,
) -> EquationSpec:
    variables = ("x",)
    both = ("x", "t")
    terms = []
    for limit_kind, kernel in kernels:
        lim = fredholm(domain[0], domain[1]) if limit_kind == "fredholm" else volterra()
        terms.append(IntegralTerm((lim,), _expr(kernel, both), zeta=zeta))
    return EquationSpec(
        name=name,
        description=description,
        kappa=kappa,
        lhs=lhs,
        integrals=tuple(terms),
        source=_expr(source, variables),
        domain=(domain,),
        var_names=variables,
        u_coeff=_expr(u_coeff, variables) if u_coeff else None,
        conditions=conditions,
        exact=_expr(exact, variables) if exact else None,
        exclude_origin=exclude_origin,
        check_tol=check_tol,
    )


def _build_p01() -> EquationSpec:
    return _one_dim(
        "P01", "1D second-kind linear Volterra integral equation",
        kappa=1.0, zeta="u", kernels=[("volterra", "t - x")],
        source="2*exp(x) - 1 + x^3/6", exact="x + exp(x)",
    )


def _build_p02() -> EquationSpec:
    return _one_dim(
        "P02", "1D second-kind nonlinear Volterra integral equation",
        kappa=1.0, zeta="u2", kernels=[("volterra", "1")],
        source="exp(x) - (exp(2*x) - 1)/2", exact="exp(x)",
    )


def _build_p03() -> EquationSpec:
    return _one_dim(
        "P03", "1D second-kind Volterra-Fredholm integral equation",
        kappa=1.0, zeta="u",
        kernels=[("fredholm", "t - x"), ("volterra", "t - x")],
        source="2*exp(x) - x/2 - 7/3 + x^3/6 + x*e", exact="x + exp(x)",
    )


def _build_p04() -> EquationSpec:
    return _one_dim(
        "P04", "1D second-kind Volterra-Fredholm integral equation",
        kappa=1.0, zeta="u",
        kernels=[("fredholm", "x"), ("volterra", "1")],
        source="exp(x) - 1 - x", exact="x*exp(x)",
    )


def _build_p05() -> EquationSpec:
    return _one_dim(
        "P05", "1D linear Abel integral equation",
        kappa=0.0, zeta="u", kernels=[("volterra", "-1/sqrt(x - t)")],
        source="(4/3)*x^(3/2)", exact="x",
        exclude_origin=True, check_tol=1e-2,
    )


def _build_p06() -> EquationSpec:
    return _one_dim(
        "P06", "1D nonlinear Abel integral equation",
        kappa=0.0, zeta="u3", kernels=[("volterra", "-1/sqrt(x - t)")],
        source="(32/35)*x^(7/2)", exact="x",
        exclude_origin=True, check_tol=1e-2,
    )


def _build_p07() -> EquationSpec:
    variables = ("x", "y")
    kernel_vars = ("x", "y", "s", "t")
    term = IntegralTerm(
        (fredholm(0.0, 1.0, "s"), fredholm(0.0, 2.0, "t")),
        _expr("-x*t/2", kernel_vars),
    )
    return EquationSpec(
        name="P07", description="2D second-kind Fredholm integral equation",
        kappa=1.0, lhs=Lhs("identity"), integrals=(term,),
        source=_expr("x^2*y + 4*x/9", variables),
        domain=((0.0, 1.0), (0.0, 2.0)), var_names=variables,
        exact=_expr("x^2*y", variables),
    )


def _build_p08() -> EquationSpec:
    variables = ("x", "y")
    kernel_vars = ("x", "y", "s", "t")
    term = IntegralTerm(
        (volterra("s"), volterra("t")),
        _expr("-exp(x + y + s + t)", kernel_vars),
    )
    source = (
        "(x + y - 2)*exp(2*x + 2*y) + (2 - y)*exp(x + 2*y)"
        " + (2 - x)*exp(2*x + y) + x + y - 2*exp(x + y)"
    )
    return EquationSpec(
        name="P08", description="2D second-kind Volterra integral equation",
        kappa=1.0, lhs=Lhs("identity"), integrals=(term,),
        source=_expr(source, variables),
        domain=((0.0, 1.0), (0.0, 2.0)), var_names=variables,
        exact=_expr("x + y", variables),
    )


def _system_equation(
    name: str, description: str, *, kappa: float, lhs: Lhs, kernels: list[str],
    limit_kind: str, domain: tuple[float, float], source: str, exact: str,
    conditions: tuple[Condition, ...] = (),
) -> EquationSpec:
    variables = ("x",)
    both = ("x", "t")
    terms = []
    for unknown, kernel in enumerate(kernels):
        lim = fredholm(domain[0], domain[1]) if limit_kind == "fredholm" else volterra()
        terms.append(IntegralTerm((lim,), _expr(kernel, both), zeta="u", unknown=unknown))
    return EquationSpec(
        name=name, description=description, kappa=kappa, lhs=lhs,
        integrals=tuple(terms), source=_expr(source, variables),
        domain=(domain,), var_names=variables, conditions=conditions,
        exact=_expr(exact, variables),
    )


def _build_p09() -> SystemSpec:
    desc = "System of second-kind Fredholm integral equations"
    domain = (0.0, math.pi)
    eq1 = _system_equation(
        "P09", desc, kappa=1.0, lhs=Lhs("identity"), limit_kind="fredholm",
        domain=domain, kernels=["x", "x"],
        source="sin(x) + cos(x) - 4*x", exact="sin(x) + cos(x)",
    )
    eq2 = _system_equation(
        "P09", desc, kappa=1.0, lhs=Lhs("identity"), limit_kind="fredholm",
        domain=domain, kernels=["1", "-1"],
        source="sin(x) - cos(x)", exact="sin(x) - cos(x)",
    )
    return SystemSpec("P09", desc, (eq1, eq2))


def _build_p10() -> SystemSpec:
    desc = "System of second-kind Volterra integral equations"
    eq1 = _system_equation(
        "P10", desc, kappa=1.0, lhs=Lhs("identity"), limit_kind="volterra",
        domain=(0.0, 1.0), kernels=["(x - t)^2", "x - t"],
        source="x - x^4/6", exact="x",
    )
    eq2 = _system_equation(
        "P10", desc, kappa=1.0, lhs=Lhs("identity"), limit_kind="volterra",
        domain=(0.0, 1.0), kernels=["(x - t)^3", "(x - t)^2"],
        source="x^2 - x^5/12", exact="x^2",
    )
    return SystemSpec("P10", desc, (eq1, eq2))


def _build_p11() -> SystemSpec:
    desc = "System of first-kind Volterra integral equations"
    eq1 = _system_equation(
        "P11", desc, kappa=0.0, lhs=Lhs("identity"), limit_kind="volterra",
        domain=(0.0, 1.0), kernels=["-(x - t - 1)", "-(x - t + 1)"],
        source="x^2/2 + x^3/2 + x^4/12", exact="1 + x",
    )
    eq2 = _system_equation(
        "P11", desc, kappa=0.0, lhs=Lhs("identity"), limit_kind="volterra",
        domain=(0.0, 1.0), kernels=["-(x - t + 1)", "-(x - t - 1)"],
        source="3*x^2/2 - x^3/6 + x^4/12", exact="1 + x^2",
    )
    return SystemSpec("P11", desc, (eq1, eq2))


def _build_p12() -> EquationSpec:
    return _one_dim(
        "P12", "Second-kind Fredholm ordinary integro-differential equation",
        kappa=1.0, lhs=Lhs("derivative", order=2), zeta="u",
        kernels=[("fredholm", "1")],
        source="1 - e + exp(x)", exact="exp(x)",
        conditions=(
            Condition("bc", (0.0,), 1.0),
            Condition("bc", (1.0,), math.e),
        ),
    )


def _build_p13() -> EquationSpec:
    return _one_dim(
        "P13", "Second-kind Fredholm ordinary integro-differential equation",
        kappa=1.0, lhs=Lhs("derivative", order=2), zeta="u",
        kernels=[("fredholm", "1")],
        source="1/2 - e + exp(x)", exact="exp(x) + x",
        conditions=(
            Condition("bc", (0.0,), 1.0),
            Condition("bc", (1.0,), math.e + 1.0),
        ),
    )


def _build_p14() -> EquationSpec:
    return _one_dim(
        "P14", "First-kind Volterra ordinary integro-differential equation",
        kappa=0.0, zeta="du", kernels=[("volterra", "-(x - t + 1)")],
        source="exp(x) + x^2/2 - 1", exact="cosh(x) + x",
        conditions=(
            Condition("bc", (0.0,), 1.0),
            Condition("bc", (1.0,), math.cosh(1.0) + 1.0),
        ),
    )


def _build_p15() -> EquationSpec:
    return _one_dim(
        "P15", "First-kind Volterra ordinary integro-differential equation",
        kappa=0.0, zeta="u2+du", kernels=[("volterra", "-(x - t)")],
        source="7/8 + x^2/4 - cos(x) + cos(2*x)/8", exact="sin(x)",
        conditions=(
            Condition("bc", (0.0,), 0.0),
            Condition("bc", (1.0,), math.sin(1.0)),
        ),
    )


def _pide(name: str, description: str, *, zeta: str, kernel: str, source: str,
          exclude_origin: bool = False) -> EquationSpec:
    variables = ("x", "t")
    kernel_vars = ("x", "t", "s")
    term = IntegralTerm(
        (no_integration(), fredholm(0.0, 1.0, "s")),
        _expr(kernel, kernel_vars), zeta=zeta,
    )
    # Initial data along t = 0 sampled from the exact solution.
    ic = tuple(
        Condition("ic", (float(xv), 0.0), 0.0) for xv in np.linspace(0.0, 1.0, 9)
    )
    return EquationSpec(
        name=name, description=description, kappa=1.0, lhs=Lhs("partial_t"),
        integrals=(term,), source=_expr(source, variables),
        domain=((0.0, 1.0), (0.0, 1.0)), var_names=variables,
        conditions=ic, exact=_expr("sin(x*t)", variables),
        exclude_origin=exclude_origin,
    )


def _build_p16() -> EquationSpec:
    return _pide(
        "P16", "Fredholm partial integro-differential equation",
        zeta="u", kernel="1",
        source="x*cos(t*x) + (cos(x) - 1)/x", exclude_origin=True,
    )


def _build_p17() -> EquationSpec:
    return _pide(
        "P17", "Fredholm partial integro-differential equation",
        zeta="u", kernel="x^2*sin(t)",
        source="x*cos(t*x) - x*sin(t) + x*sin(t)*cos(x)",
    )


def _build_p18() -> EquationSpec:
    return _pide(
        "P18", "Nonlinear Fredholm partial integro-differential equation",
        zeta="u2", kernel="1",
        source="x*cos(t*x) + (cos(x)*sin(x) - x)/(2*x)", exclude_origin=True,
    )


def _build_p19() -> SystemSpec:
    desc = "System of Volterra integro-differential equations"
    eq1 = _system_equation(
        "P19", desc, kappa=1.0, lhs=Lhs("derivative", order=1), limit_kind="volterra",
        domain=(0.0, 1.0), kernels=["x - t", "x - t + 1"],
        source="1 + x - x^2/2 + x^3/3", exact="1 + x + x^2",
        conditions=(Condition("ic", (0.0,), 1.0),),
    )
    eq2 = _system_equation(
        "P19", desc, kappa=1.0, lhs=Lhs("derivative", order=1), limit_kind="volterra",
        domain=(0.0, 1.0), kernels=["x - t + 1", "x - t"],
        source="-1 - 3*x - 3*x^2/2 - x^3/3", exact="1 - x - x^2",
        conditions=(Condition("ic", (0.0,), 1.0),),
    )
    return SystemSpec("P19", desc, (eq1, eq2))


def _build_p20() -> EquationSpec:
    return _one_dim(
        "P20", "Fractional integro-differential equation",
        kappa=1.0, lhs=Lhs("caputo", alpha=0.75), zeta="u",
        kernels=[("volterra", "exp(x)*t")],
        u_coeff="exp(x)*x^2/5",
        source="6*x^2.25/gamma(3.25)", exact="x^3",
        conditions=(Condition("ic", (0.0,), 0.0),),
    )


def _build_helm() -> EquationSpec:
    variables = ("x",)
    both = ("x", "t")
    k = 5.0
    term = IntegralTerm(
        (fredholm(0.0, 1.0),),
        _expr("exp(-5*abs(x - t))*sin(pi*t)/10", both),
        zeta="one",
    )
    return EquationSpec(
        name="HELM",
        description="Helmholtz-kernel Fredholm integral equation",
        kappa=1.0, lhs=Lhs("identity"), integrals=(term,),
        source=_expr("0", variables),
        domain=((0.0, 1.0),), var_names=variables,
        reference={"kind": "helmholtz", "k": k, "f": "sin(pi*t)", "grid_step": 1e-3},
    )


_BUILDERS = {
    "P01": _build_p01, "P02": _build_p02, "P03": _build_p03, "P04": _build_p04,
    "P05": _build_p05, "P06": _build_p06, "P07": _build_p07, "P08": _build_p08,
    "P09": _build_p09, "P10": _build_p10, "P11": _build_p11, "P12": _build_p12,
    "P13": _build_p13, "P14": _build_p14, "P15": _build_p15, "P16": _build_p16,
    "P17": _build_p17, "P18": _build_p18, "P19": _build_p19, "P20": _build_p20,
    "HELM": _build_helm,
}

TABLE_GROUPS = {
    1: ["P01", "P02", "P03", "P04", "P05", "P06"],
    2: ["P07", "P08"],
    3: ["P09", "P10", "P11"],
    4: ["P12", "P13", "P14", "P15"],
    5: ["P16", "P17", "P18"],
    6: [f"P{i:02d}" for i in range(1, 21)],
}

_CACHE: dict[str, ProblemSpec] = {}


def list_problems() -> list[str]:
    return list(_BUILDERS)


def get_problem(problem_id: str) -> ProblemSpec:
    try:
        builder = _BUILDERS[problem_id]
    except KeyError:
        raise ProblemError(
            f"unknown problem {problem_id!r}; available: {', '.join(_BUILDERS)}"
        ) from None
    if problem_id not in _CACHE:
        _CACHE[problem_id] = builder()
    return _CACHE[problem_id]


# ---------------------------------------------------------------------------
# Problem config files
# ---------------------------------------------------------------------------


def _limit_to_dict(lim: AxisLimit) -> dict:
    if lim.kind == "fixed":
        return {"kind": "fixed", "a": lim.a, "b": lim.b, "var": lim.var}
    if lim.kind == "upper_x":
        return {"kind": "upper_x", "var": lim.var}
    return {"kind": "none"}


def _equation_to_dict(eq: EquationSpec, in_system: bool) -> dict:
    out: dict = {
        "kappa": eq.kappa,
        "lhs": {"op": eq.lhs.kind},
        "integrals": [
            {
                "limits": [_limit_to_dict(lim) for lim in term.limits],
                "kernel": to_string(term.kernel),
                "zeta": term.zeta,
                **({"unknown": term.unknown + 1} if in_system else {}),
            }
            for term in eq.integrals
        ],
        "source": to_string(eq.source),
        "conditions": [
            {"kind": c.kind, "point": list(c.point), "value": c.value}
            for c in eq.conditions
        ],
        "lambda": {"ic": eq.lambda_ic, "bc": eq.lambda_bc, "data": eq.lambda_data},
    }
    if eq.lhs.kind == "derivative":
        out["lhs"]["order"] = eq.lhs.order
    if eq.lhs.kind == "caputo":
        out["lhs"]["alpha"] = eq.lhs.alpha
    if eq.u_coeff is not None:
        out["u_coeff"] = to_string(eq.u_coeff)
    if eq.exact is not None:
        out["exact"] = to_string(eq.exact)
    if not in_system:
        out["kind"] = "equation"
        out["name"] = eq.name
        out["description"] = eq.description
        out["domain"] = [list(iv) for iv in eq.domain]
        out["vars"] = list(eq.var_names)
        if eq.exclude_origin:
            out["exclude_origin"] = True
    return out


def problem_to_dict(spec: ProblemSpec) -> dict:
    if isinstance(spec, EquationSpec):
        return _equation_to_dict(spec, in_system=False)
    head = equations_of(spec)[0]
    return {
        "kind": "system",
        "name": spec.name,
        "description": spec.description,
        "domain": [list(iv) for iv in head.domain],
        "vars": list(head.var_names),
        **({"exclude_origin": True} if head.exclude_origin else {}),
        "equations": [_equation_to_dict(eq, in_system=True) for eq in spec.equations],
    }


def _require(payload: dict, key: str, path: str):
    if key not in payload:
        raise ProblemError(f"missing required field '{path}{key}'")
    return payload[key]


def _limit_from_dict(payload: dict, path: str) -> AxisLimit:
    kind = _require(payload, "kind", path)
    if kind == "fixed":
        return fredholm(
            float(_require(payload, "a", path)),
            float(_require(payload, "b", path)),
            str(payload.get("var", "t")),
        )
    if kind == "upper_x":
        return volterra(str(payload.get("var", "t")))
    if kind == "none":
        return no_integration()
    raise ProblemError(f"unknown limit kind {kind!r} at '{path}kind'")


def _equation_from_dict(
    payload: dict, *, name: str, description: str,
    domain: tuple, variables: tuple, exclude_origin: bool, path: str,
) -> EquationSpec:
    lhs_payload = _require(payload, "lhs", path)
    op = _require(lhs_payload, "op", path + "lhs.")
    if op == "derivative":
        lhs = Lhs("derivative", order=int(_require(lhs_payload, "order", path + "lhs.")))
    elif op == "caputo":
        lhs = Lhs("caputo", alpha=float(_require(lhs_payload, "alpha", path + "lhs.")))
    else:
        lhs = Lhs(op)
    terms = []
    for i, term in enumerate(_require(payload, "integrals", path)):
        tpath = f"{path}integrals[{i}]."
        limits = tuple(
            _limit_from_dict(lim, f"{tpath}limits[{j}].")
            for j, lim in enumerate(_require(term, "limits", tpath))
        )
        int_vars = tuple(lim.var for lim in limits if lim.kind != "none")
        try:
            kernel = parse_expression(
                _require(term, "kernel", tpath), set(variables) | set(int_vars)
            )
        except ValueError as exc:
            raise ProblemError(f"bad kernel at '{tpath}kernel': {exc}") from exc
        terms.append(
            IntegralTerm(
                limits, kernel,
                zeta=str(term.get("zeta", "u")),
                unknown=int(term.get("unknown", 1)) - 1,
            )
        )
    lambdas = payload.get("lambda", {})

    def expr_field(key: str, variables_: tuple) -> Expr | None:
        if key not in payload or payload[key] is None:
            return None
        try:
            return parse_expression(payload[key], set(variables_))
        except ValueError as exc:
            raise ProblemError(f"bad expression at '{path}{key}': {exc}") from exc

    source = expr_field("source", variables)
    if source is None:
        raise ProblemError(f"missing required field '{path}source'")
    return EquationSpec(
        name=name, description=description,
        kappa=float(_require(payload, "kappa", path)),
        lhs=lhs, integrals=tuple(terms), source=source,
        domain=domain, var_names=variables,
        u_coeff=expr_field("u_coeff", variables),
        conditions=tuple(
            Condition(
                str(_require(c, "kind", f"{path}conditions[{i}].")),
                tuple(float(v) for v in _require(c, "point", f"{path}conditions[{i}].")),
                float(_require(c, "value", f"{path}conditions[{i}].")),
            )
            for i, c in enumerate(payload.get("conditions", []))
        ),
        exact=expr_field("exact", variables),
        lambda_ic=float(lambdas.get("ic", 1.0)),
        lambda_bc=float(lambdas.get("bc", 1.0)),
        lambda_data=float(lambdas.get("data", 1.0)),
        exclude_origin=exclude_origin,
    )


def problem_from_dict(payload: dict) -> ProblemSpec:
    kind = _require(payload, "kind", "")
    if kind not in ("equation", "system"):
        raise ProblemError(f"unknown problem kind {kind!r} at 'kind'")
    domain = tuple(
        (float(lo), float(hi)) for lo, hi in _require(payload, "domain", "")
    )
    variables = tuple(payload.get("vars", DEFAULT_VARS[: len(domain)]))
    name = str(payload.get("name", "user"))
    description = str(payload.get("description", "user-defined problem"))
    exclude = bool(payload.get("exclude_origin", False))
    if kind == "equation":
        return _equation_from_dict(
            payload, name=name, description=description, domain=domain,
            variables=variables, exclude_origin=exclude, path="",
        )
    eqs = tuple(
        _equation_from_dict(
            eq, name=name, description=description, domain=domain,
            variables=variables, exclude_origin=exclude, path=f"equations[{i}].",
        )
        for i, eq in enumerate(_require(payload, "equations", ""))
    )
    return SystemSpec(name, description, eqs)


def load_problem_file(path) -> ProblemSpec:
    """Parse and validate a problem config file (JSON; schema in the README).

    Problems that declare an exact solution get the same quadrature
    self-check as registry entries.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ProblemError(f"{path}: not valid JSON: {exc}") from exc
    spec = problem_from_dict(payload)
    if all(eq.exact is not None for eq in equations_of(spec)):
        check_registry_problem(spec)
    return spec


def self_check_all(order: int = 100) -> dict[str, float]:
    """Residual of the exact solution for every registry problem that has one."""
    out = {}
    for pid in list_problems():
        spec = get_problem(pid)
        if all(eq.exact is not None for eq in equations_of(spec)):
            out[pid] = check_registry_problem(spec, order=order)
    return out
