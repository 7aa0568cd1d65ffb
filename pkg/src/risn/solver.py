"""Residual assembly, loss, training, and evaluation.

Training minimizes the mean squared equation residual at collocation points
plus weighted mean squared condition mismatches.  All quantities that do not
depend on the network parameters (collocation grids, quadrature node blocks,
kernel-times-weight matrices, source samples, Caputo matrices, condition
point sets) are precomputed once per problem; each optimizer step only runs
tape operations.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from . import network as nn
from . import quadrature as quad
from .expressions import eval_expression, parse_expression
from .fractional import build_caputo
from .lbfgs import IterationRecord, LbfgsResult, lbfgs_minimize
from .problems import (
    EquationSpec,
    ProblemSpec,
    SystemSpec,
    equations_of,
    get_problem,
)


@dataclass(frozen=True)
class TrainConfig:
    hidden_width: int = 20
    hidden_layers: int = 7
    activation: str = "tanh"
    n_train: int = 50
    quad_order: int = 50
    learning_rate: float = 0.01
    max_iters: int = 500
    history_size: int = 10
    grad_tol: float = 1e-9
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 25
    plateau_window: int = 10
    plateau_rel_tol: float = 1e-12
    seed: int = 0
    n_test: int | None = None

    def __post_init__(self):
        if self.n_train < 2:
            raise ValueError("n_train must be at least 2")
        if self.quad_order < 1:
            raise ValueError("quad_order must be at least 1")
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError("need 0 < c1 < c2 < 1")


@dataclass
class BenchmarkResult:
    problem: str
    model: str
    seed: int
    final_loss: float
    mae: list[float]
    iterations: int
    wall_ms: float
    converged: bool
    status: str
    n_train: int
    quad_order: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


MODEL_KINDS = ("risn", "pinn")


def collocation_points(spec: ProblemSpec, n: int) -> np.ndarray:
    """Uniform training grid: n points in 1-D, ceil(n^(1/d)) per axis beyond.

    Problems flagged ``exclude_origin`` (singular kernels or sources at the
    lower endpoint) drop the first grid point of each axis.
    """
    if n < 2:
        raise ValueError("need at least two collocation points")
    head = equations_of(spec)[0]
    d = head.dim
    per_axis = n if d == 1 else math.ceil(round(n ** (1.0 / d), 9))
    axes = []
    for lo, hi in head.domain:
        if head.exclude_origin:
            axes.append(np.linspace(lo, hi, per_axis + 1)[1:])
        else:
            axes.append(np.linspace(lo, hi, per_axis))
    if d == 1:
        return axes[0][:, None]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=-1)


@dataclass
class _TermPlan:
    unknown: int
    zeta: str
    pointset: int                 # index into CollocationProblem.pointsets; -1 if constant
    kw: np.ndarray | None         # (N, P) kernel * weights (per-collocation path)
    kw_shared: np.ndarray | None  # (N, P) for the shared-nodes matmul path
    const_value: np.ndarray | None


@dataclass
class _ConditionPlan:
    kind: str
    points: np.ndarray  # (C, d)
    values: np.ndarray  # (C, 1)
    weight: float


@dataclass
class _EquationPlan:
    eq: EquationSpec
    source: np.ndarray             # (N, 1)
    u_coeff: np.ndarray | None     # (N, 1)
    caputo: np.ndarray | None      # (N, N)
    terms: list[_TermPlan] = field(default_factory=list)
    conditions: list[_ConditionPlan] = field(default_factory=list)


class CollocationProblem:
    """One problem discretized and frozen: residuals/loss are tape-only."""

    def __init__(self, spec: ProblemSpec, n_train: int = 50, quad_order: int = 50):
        self.spec = spec
        self.eqs = equations_of(spec)
        self.n_unknowns = len(self.eqs)
        self.x = collocation_points(spec, n_train)
        self.n_points = self.x.shape[0]
        self.dim = self.x.shape[1]
        self.quad_order = quad_order
        rule = quad.gauss_legendre(quad_order)

        # Evaluation point sets shared across terms; index 0 is the
        # collocation grid itself.
        self.pointsets: list[np.ndarray] = [self.x]
        self._pointset_keys: dict[bytes, int] = {self.x.tobytes(): 0}
        self.plans = [self._plan_equation(eq, rule) for eq in self.eqs]

    def _intern_pointset(self, pts: np.ndarray) -> int:
        key = pts.tobytes()
        if key not in self._pointset_keys:
            self._pointset_keys[key] = len(self.pointsets)
            self.pointsets.append(pts)
        return self._pointset_keys[key]

    def _plan_equation(self, eq: EquationSpec, rule: quad.QuadratureRule) -> _EquationPlan:
        n = self.n_points
        bind_x = {v: self.x[:, j:j + 1] for j, v in enumerate(eq.var_names)}
        source = np.broadcast_to(_as_np(eval_expression(eq.source, bind_x)), (n, 1)).copy()
        u_coeff = None
        if eq.u_coeff is not None:
            u_coeff = np.broadcast_to(_as_np(eval_expression(eq.u_coeff, bind_x)), (n, 1)).copy()
        caputo = None
        if eq.lhs.kind == "caputo":
            xs = self.x[:, 0]
            if np.any(np.diff(xs) <= 0):
                raise ValueError("Caputo problems need sorted 1-D collocation points")
            caputo = build_caputo(eq.lhs.alpha, xs).matrix
        plan = _EquationPlan(eq=eq, source=source, u_coeff=u_coeff, caputo=caputo)
        for term in eq.integrals:
            plan.terms.append(self._plan_term(eq, term, rule))
        for cond in eq.conditions:
            plan.conditions.append(self._plan_condition(eq, cond))
        # merge same-kind conditions into one block per kind
        merged: dict[str, _ConditionPlan] = {}
        for c in plan.conditions:
            if c.kind in merged:
                prev = merged[c.kind]
                merged[c.kind] = _ConditionPlan(
                    c.kind,
                    np.vstack([prev.points, c.points]),
                    np.vstack([prev.values, c.values]),
                    c.weight,
                )
            else:
                merged[c.kind] = c
        plan.conditions = list(merged.values())
        return plan

    def _plan_condition(self, eq: EquationSpec, cond) -> _ConditionPlan:
        weight = {"ic": eq.lambda_ic, "bc": eq.lambda_bc, "data": eq.lambda_data}[cond.kind]
        return _ConditionPlan(
            cond.kind,
            np.asarray(cond.point, dtype=np.float64)[None, :],
            np.array([[cond.value]]),
            weight,
        )

    def _plan_term(self, eq: EquationSpec, term, rule: quad.QuadratureRule) -> _TermPlan:
        n = self.n_points
        int_axes = [i for i, lim in enumerate(term.limits) if lim.kind != "none"]
        shared = all(term.limits[i].kind == "fixed" for i in int_axes) and all(
            lim.kind != "none" for lim in term.limits
        )
        axis_rules = []
        for axis in int_axes:
            lim = term.limits[axis]
            if lim.kind == "fixed":
                axis_rules.append(quad.map_affine(rule, lim.a, lim.b))
            else:
                axis_rules.append(quad.map_volterra(rule, self.x[:, axis]))
        prod = quad.tensor_product(axis_rules)

        if shared:
            nodes = prod.points if prod.points.ndim == 2 else prod.points[:, None]
            p = nodes.shape[0]
            eval_pts = nodes  # (P, d); every axis integrated here
            weights = prod.weights[None, :]  # (1, P)
            bindings = dict()
            for j, v in enumerate(eq.var_names):
                bindings[v] = self.x[:, j:j + 1]  # (N, 1)
            for col, axis in enumerate(int_axes):
                bindings[term.limits[axis].var] = nodes[:, col][None, :]  # (1, P)
            kernel = np.broadcast_to(_as_np(eval_expression(term.kernel, bindings)), (n, p))
            kw = (kernel * weights).astype(np.float64)
            if term.zeta == "one":
                return _TermPlan(term.unknown, term.zeta, -1, None, None,
                                 kw.sum(axis=1, keepdims=True))
            ps = self._intern_pointset(np.ascontiguousarray(eval_pts))
            return _TermPlan(term.unknown, term.zeta, ps, None, kw, None)

        # Per-collocation path: nodes differ by row (Volterra and/or 'none' axes).
        if prod.points.ndim == 2:  # shared fixed-axis nodes alongside 'none' axes
            p_count, k = prod.points.shape
            nodes = np.broadcast_to(prod.points[None], (n, p_count, k))
            weights = np.broadcast_to(prod.weights[None, :], (n, p_count))
        else:
            nodes, weights = prod.points, prod.weights  # (N, P, k), (N, P)
        p = nodes.shape[1]
        eval_pts = np.empty((n, p, self.dim))
        bindings = {}
        for j, v in enumerate(eq.var_names):
            bindings[v] = self.x[:, j:j + 1]  # (N, 1)
            eval_pts[:, :, j] = self.x[:, j:j + 1]
        for col, axis in enumerate(int_axes):
            eval_pts[:, :, axis] = nodes[:, :, col]
            bindings[term.limits[axis].var] = nodes[:, :, col]
        kernel = np.broadcast_to(_as_np(eval_expression(term.kernel, bindings)), (n, p))
        kw = (kernel * np.asarray(weights)).astype(np.float64)
        if term.zeta == "one":
            return _TermPlan(term.unknown, term.zeta, -1, None, None,
                             kw.sum(axis=1, keepdims=True))
        flat = np.ascontiguousarray(eval_pts.reshape(n * p, self.dim))
        ps = self._intern_pointset(flat)
        return _TermPlan(term.unknown, term.zeta, ps, kw, None, None)

    # -- tape-side evaluation ------------------------------------------------

    def _zeta(self, cache: dict, nets, unknown: int, zeta: str, pointset: int):
        net = nets[unknown]

        def apply(z):
            return nn.forward(net, z)

        def value():
            key = (unknown, pointset, 0)
            if key not in cache:
                cache[key] = nn.forward(net, ad.Tensor(self.pointsets[pointset]))
            return cache[key]

        def derivative():
            key = (unknown, pointset, 1)
            if key not in cache:
                cache[key] = ad.input_derivative(
                    apply, ad.Tensor(self.pointsets[pointset]), 0, 1
                )
            return cache[key]

        if zeta == "u":
            return value()
        if zeta == "u2":
            u = value()
            return ad.mul(u, u)
        if zeta == "u3":
            u = value()
            return ad.mul(ad.mul(u, u), u)
        if zeta == "du":
            return derivative()
        if zeta == "u2+du":
            u = value()
            return ad.add(ad.mul(u, u), derivative())
        raise ValueError(f"unsupported integrand form {zeta!r}")

    def residuals(self, nets: list[nn.MlpParams]) -> list[ad.Tensor]:
        """One (N, 1) residual column per equation, connected to the tape."""
        if len(nets) != self.n_unknowns:
            raise ValueError(f"expected {self.n_unknowns} networks, got {len(nets)}")
        cache: dict = {}
        x_t = ad.Tensor(self.x)
        out = []
        for idx, plan in enumerate(self.plans):
            eq = plan.eq
            net = nets[idx]

            def apply(z, net=net):
                return nn.forward(net, z)

            def u_at_x(net_index=idx):
                key = (net_index, 0, 0)
                if key not in cache:
                    cache[key] = nn.forward(nets[net_index], x_t)
                return cache[key]

            if eq.lhs.kind == "identity":
                lhs = ad.mul(eq.kappa, u_at_x()) if eq.kappa != 0.0 else None
            elif eq.lhs.kind == "derivative":
                d = ad.input_derivative(apply, x_t, 0, eq.lhs.order)
                lhs = ad.mul(eq.kappa, d) if eq.kappa != 1.0 else d
            elif eq.lhs.kind == "partial_t":
                d = ad.input_derivative(apply, x_t, 1, 1)
                lhs = ad.mul(eq.kappa, d) if eq.kappa != 1.0 else d
            else:  # caputo
                d = ad.matmul(ad.Tensor(plan.caputo), u_at_x())
                lhs = ad.mul(eq.kappa, d) if eq.kappa != 1.0 else d

            r = ad.Tensor(-plan.source) if lhs is None else ad.sub(lhs, plan.source)
            if plan.u_coeff is not None:
                r = ad.add(r, ad.mul(plan.u_coeff, u_at_x()))
            for term in plan.terms:
                if term.const_value is not None:
                    r = ad.sub(r, term.const_value)
                    continue
                zeta = self._zeta(cache, nets, term.unknown, term.zeta, term.pointset)
                if term.kw_shared is not None:
                    contribution = ad.matmul(ad.Tensor(term.kw_shared), zeta)
                else:
                    n, p = term.kw.shape
                    zmat = ad.reshape(zeta, (n, p))
                    contribution = ad.tsum(ad.mul(term.kw, zmat), axis=1, keepdims=True)
                r = ad.sub(r, contribution)
            out.append(r)
        return out

    def loss(self, nets: list[nn.MlpParams]) -> ad.Tensor:
        """Mean squared residual (system-normalized) plus condition penalties."""
        residuals = self.residuals(nets)
        m = self.n_unknowns
        total = None
        for r in residuals:
            sq = ad.tsum(ad.mul(r, r))
            total = sq if total is None else ad.add(total, sq)
        total = ad.mul(1.0 / (self.n_points * m), total)
        for idx, plan in enumerate(self.plans):
            for cond in plan.conditions:
                pred = nn.forward(nets[idx], ad.Tensor(cond.points))
                diff = ad.sub(pred, cond.values)
                total = ad.add(total, ad.mul(cond.weight, ad.tmean(ad.mul(diff, diff))))
        return total


def _as_np(value) -> np.ndarray:
    return np.asarray(value.data if hasattr(value, "data") else value, dtype=np.float64)


def build_networks(spec: ProblemSpec, config: TrainConfig, model: str) -> list[nn.MlpParams]:
    if model not in MODEL_KINDS:
        raise ValueError(f"model must be one of {MODEL_KINDS}, got {model!r}")
    head = equations_of(spec)[0]
    cfg = nn.MlpConfig(
        input_dim=head.dim,
        hidden_width=config.hidden_width,
        hidden_layers=config.hidden_layers,
        activation=config.activation,
        residual=(model == "risn"),
    )
    nets = []
    for i in range(len(equations_of(spec))):
        seed = int(np.random.default_rng([config.seed, i]).integers(0, 2**31 - 1))
        nets.append(nn.init_params(cfg, seed))
    return nets


def train(
    spec: ProblemSpec | str,
    config: TrainConfig | None = None,
    model: str = "risn",
    trace: list | None = None,
) -> tuple[list[nn.MlpParams], BenchmarkResult]:
    """Train one model on one problem; deterministic for a fixed config/seed.

    ``trace``, if given, collects per-iteration (iteration, loss, grad_norm)
    tuples.
    """
    if isinstance(spec, str):
        spec = get_problem(spec)
    config = config or TrainConfig()
    started = time.perf_counter()
    problem = CollocationProblem(spec, config.n_train, config.quad_order)
    nets = build_networks(spec, config, model)

    def objective(vec: np.ndarray) -> tuple[float, np.ndarray]:
        candidate = nn.unflatten_params(vec, nets)
        loss = problem.loss(candidate)
        leaves = [t for net in candidate for t in net.leaves()]
        grads = ad.backward(loss, leaves)
        flat = np.concatenate([grads[t].reshape(-1) for t in leaves])
        return loss.item(), flat

    callback = None
    if trace is not None:
        callback = lambda rec: trace.append((rec.iteration, rec.loss, rec.grad_norm))

    result = lbfgs_minimize(
        objective,
        nn.flatten_params(nets),
        history_size=config.history_size,
        learning_rate=config.learning_rate,
        max_iters=config.max_iters,
        grad_tol=config.grad_tol,
        c1=config.c1,
        c2=config.c2,
        max_line_search=config.max_line_search,
        plateau_window=config.plateau_window,
        plateau_rel_tol=config.plateau_rel_tol,
        callback=callback,
    )
    best = nn.unflatten_params(result.x, nets)
    mae = evaluate_mae(best, spec, config.n_test)
    wall_ms = (time.perf_counter() - started) * 1000.0
    head = equations_of(spec)[0]
    bench = BenchmarkResult(
        problem=head.name,
        model=model,
        seed=config.seed,
        final_loss=result.loss,
        mae=mae,
        iterations=result.iterations,
        wall_ms=wall_ms,
        converged=result.converged,
        status=result.status,
        n_train=config.n_train,
        quad_order=config.quad_order,
    )
    return best, bench


def predict(nets: list[nn.MlpParams], points: np.ndarray) -> np.ndarray:
    """Network outputs at the given points, one column per unknown."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    cols = [nn.forward(net, ad.Tensor(points)).data for net in nets]
    return np.concatenate(cols, axis=1)


def test_grid(spec: ProblemSpec, n_test: int | None = None) -> np.ndarray:
    """Cell-centered evaluation grid, disjoint from the training grid."""
    head = equations_of(spec)[0]
    d = head.dim
    per_axis = n_test or (200 if d == 1 else 50)
    axes = []
    for lo, hi in head.domain:
        h = (hi - lo) / per_axis
        axes.append(lo + h * (np.arange(per_axis) + 0.5))
    if d == 1:
        return axes[0][:, None]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=-1)


def reference_values(spec: ProblemSpec, points: np.ndarray) -> np.ndarray:
    """Exact (or tabulated-reference) solution values, one column per unknown."""
    eqs = equations_of(spec)
    cols = []
    for eq in eqs:
        if eq.exact is not None:
            bind = {v: points[:, j:j + 1] for j, v in enumerate(eq.var_names)}
            cols.append(np.broadcast_to(_as_np(eval_expression(eq.exact, bind)),
                                        (points.shape[0], 1)).copy())
        elif eq.reference is not None and eq.reference.get("kind") == "helmholtz":
            ref = eq.reference
            xs, us = helmholtz_reference(ref["k"], ref["f"], ref["grid_step"])
            cols.append(np.interp(points[:, 0], xs, us)[:, None])
        else:
            raise ValueError(
                f"problem {eq.name!r} has neither an exact solution nor a reference"
            )
    return np.concatenate(cols, axis=1)


def evaluate_mae(nets: list[nn.MlpParams], spec: ProblemSpec,
                 n_test: int | None = None) -> list[float]:
    """Mean absolute error per unknown on the offset test grid."""
    grid = test_grid(spec, n_test)
    ref = reference_values(spec, grid)
    pred = predict(nets, grid)
    return [float(np.mean(np.abs(pred[:, j] - ref[:, j]))) for j in range(ref.shape[1])]


@lru_cache(maxsize=8)
def helmholtz_reference(k: float, f_text: str, grid_step: float = 1e-3
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Tabulated u(x) = integral_0^1 exp(-k|x - t|)/(2k) f(t) dt on [0, 1].

    Composite trapezoid on a grid of the given step; evaluation abscissae
    coincide with integration nodes so the kernel's kink always sits on a
    node.  Interpolate linearly between grid points.
    """
    if grid_step > 0.01:
        raise ValueError("reference grid step must be at most 0.01")
    n = int(round(1.0 / grid_step))
    xs = np.linspace(0.0, 1.0, n + 1)
    f_expr = parse_expression(f_text, {"t"})
    f_vals = np.broadcast_to(_as_np(eval_expression(f_expr, {"t": xs})), xs.shape)
    w = np.full(n + 1, grid_step)
    w[0] = w[-1] = 0.5 * grid_step
    kernel = np.exp(-k * np.abs(xs[:, None] - xs[None, :])) / (2.0 * k)
    return xs, kernel @ (w * f_vals)


def sensitivity_sweep(
    problem: ProblemSpec | str,
    depths: list[int],
    learning_rates: list[float],
    seeds: list[int],
    base_config: TrainConfig | None = None,
) -> list[dict]:
    """Train both models for every (depth, lr, seed); failures become rows too."""
    if not depths or not learning_rates or not seeds:
        raise ValueError("depths, learning_rates, and seeds must be non-empty")
    if isinstance(problem, str):
        problem = get_problem(problem)
    base = base_config or TrainConfig()
    rows = []
    for depth in depths:
        for lr in learning_rates:
            for seed in seeds:
                for model in MODEL_KINDS:
                    cfg = replace(base, hidden_layers=depth, learning_rate=lr, seed=seed)
                    trace: list = []
                    row = {
                        "depth": depth, "lr": lr, "seed": seed, "model": model,
                        "mae": None, "final_loss": None, "iterations": 0,
                        "converged": False, "error": "", "trace": trace,
                    }
                    try:
                        _, bench = train(problem, cfg, model, trace=trace)
                        row.update(
                            mae=max(bench.mae), final_loss=bench.final_loss,
                            iterations=bench.iterations, converged=bench.converged,
                        )
                    except Exception as exc:  # record and continue the sweep
                        row["error"] = str(exc)
                    rows.append(row)
    return rows
