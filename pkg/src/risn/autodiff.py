"""Reverse-mode automatic differentiation over dense float64 tensors.

A ``Tensor`` is a tape node: it carries its value, its parents, and a closure
computing vector-Jacobian products into those parents.  Creation order gives a
topological order, so a backward sweep visits nodes in reverse creation order
exactly once.  Forward-mode directional derivatives are provided by ``Dual``
pairs whose components are themselves tape tensors, so derivatives of a
network with respect to its inputs stay differentiable with respect to the
network parameters.  Nesting ``Dual`` inside ``Dual`` yields second
derivatives; see :func:`input_derivative`.

Every primitive checks its output for NaN/Inf and raises ``AutodiffDomainError``
instead of propagating, so optimizers receive a clean failure signal.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError):
    pass


class AutodiffDomainError(AutodiffError):
    """A primitive produced or would produce non-finite values."""


_node_counter = itertools.count()


class Tensor:
    """Dense float64 array recorded on the autodiff tape.

    Constants (``requires_grad=False`` and no parents) do not extend the tape;
    an operation records parents only when gradients can flow through it.
    """

    __slots__ = ("data", "parents", "vjp", "requires_grad", "node_id")

    def __init__(self, data, requires_grad=False, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents = parents
        self.vjp = vjp
        self.node_id = next(_node_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic operators delegate to the generic primitives so that code
    # written against Tensor also works on Dual.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)


class Dual:
    """Forward-mode pair (primal, tangent) over Tensor-valued components.

    Components may themselves be Dual, giving higher-order directional
    derivatives.  Mixing a Dual with a plain Tensor or array treats the latter
    as constant (zero tangent) without materializing the zeros.
    """

    __slots__ = ("primal", "tangent")

    def __init__(self, primal, tangent):
        self.primal = primal
        self.tangent = tangent

    def __repr__(self):
        return f"Dual({self.primal!r})"

    __add__ = Tensor.__add__
    __radd__ = Tensor.__radd__
    __sub__ = Tensor.__sub__
    __rsub__ = Tensor.__rsub__
    __mul__ = Tensor.__mul__
    __rmul__ = Tensor.__rmul__
    __truediv__ = Tensor.__truediv__
    __rtruediv__ = Tensor.__rtruediv__
    __neg__ = Tensor.__neg__
    __pow__ = Tensor.__pow__
    __matmul__ = Tensor.__matmul__


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(value) -> Tensor:
    """Leaf tensor that receives gradients from backward()."""
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def _as_array(x):
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _check_finite(op: str, data: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(data)):
        raise AutodiffDomainError(f"non-finite result in '{op}'")
    return data


def _check_broadcast(op: str, sa: tuple, sb: tuple) -> None:
    if sa == sb or sa == () or sb == ():
        return
    if len(sa) != len(sb):
        raise ShapeError(f"'{op}': rank mismatch {sa} vs {sb}")
    for da, db in zip(sa, sb):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"'{op}': shapes {sa} and {sb} do not broadcast")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient contributions over axes that were broadcast."""
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.array(grad.sum())
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _record(op, data, parents, vjp) -> Tensor:
    _check_finite(op, data)
    tracked = [p for p in parents if isinstance(p, Tensor) and p.requires_grad]
    if tracked:
        parent_tensors = tuple(p if isinstance(p, Tensor) else Tensor(p) for p in parents)
        return Tensor(data, requires_grad=True, parents=parent_tensors, vjp=vjp)
    return Tensor(data)


# ---------------------------------------------------------------------------
# Generic dispatch: Dual > Tensor/raw.
# ---------------------------------------------------------------------------


def _is_dual(x) -> bool:
    return isinstance(x, Dual)


def _binary(a, b, tensor_rule, dual_rule):
    if _is_dual(a) or _is_dual(b):
        ap, at = (a.primal, a.tangent) if _is_dual(a) else (a, None)
        bp, bt = (b.primal, b.tangent) if _is_dual(b) else (b, None)
        return dual_rule(ap, at, bp, bt)
    return tensor_rule(a, b)


def add(a, b):
    def tensor_rule(a, b):
        da, db = _as_array(a), _as_array(b)
        _check_broadcast("add", da.shape, db.shape)
        out = da + db

        def vjp(g):
            return _unbroadcast(g, da.shape), _unbroadcast(g, db.shape)

        return _record("add", out, (a, b), vjp)

    def dual_rule(ap, at, bp, bt):
        p = add(ap, bp)
        if at is None:
            return Dual(p, bt)
        if bt is None:
            return Dual(p, at)
        return Dual(p, add(at, bt))

    return _binary(a, b, tensor_rule, dual_rule)


def sub(a, b):
    def tensor_rule(a, b):
        da, db = _as_array(a), _as_array(b)
        _check_broadcast("sub", da.shape, db.shape)
        out = da - db

        def vjp(g):
            return _unbroadcast(g, da.shape), _unbroadcast(-g, db.shape)

        return _record("sub", out, (a, b), vjp)

    def dual_rule(ap, at, bp, bt):
        p = sub(ap, bp)
        if at is None:
            return Dual(p, neg(bt))
        if bt is None:
            return Dual(p, at)
        return Dual(p, sub(at, bt))

    return _binary(a, b, tensor_rule, dual_rule)


def mul(a, b):
    def tensor_rule(a, b):
        da, db = _as_array(a), _as_array(b)
        _check_broadcast("mul", da.shape, db.shape)
        out = da * db

        def vjp(g):
            return _unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape)

        return _record("mul", out, (a, b), vjp)

    def dual_rule(ap, at, bp, bt):
        p = mul(ap, bp)
        terms = []
        if at is not None:
            terms.append(mul(at, bp))
        if bt is not None:
            terms.append(mul(ap, bt))
        t = terms[0] if len(terms) == 1 else add(terms[0], terms[1])
        return Dual(p, t)

    return _binary(a, b, tensor_rule, dual_rule)


def div(a, b):
    def tensor_rule(a, b):
        da, db = _as_array(a), _as_array(b)
        _check_broadcast("div", da.shape, db.shape)
        if np.any(db == 0.0):
            raise AutodiffDomainError("division by zero in 'div'")
        out = da / db

        def vjp(g):
            return (
                _unbroadcast(g / db, da.shape),
                _unbroadcast(-g * da / (db * db), db.shape),
            )

        return _record("div", out, (a, b), vjp)

    def dual_rule(ap, at, bp, bt):
        p = div(ap, bp)
        if bt is None:
            return Dual(p, div(at, bp))
        # d(a/b) = (da - (a/b) db) / b
        num = neg(mul(p, bt)) if at is None else sub(at, mul(p, bt))
        return Dual(p, div(num, bp))

    return _binary(a, b, tensor_rule, dual_rule)


def matmul(a, b):
    def tensor_rule(a, b):
        da, db = _as_array(a), _as_array(b)
        if da.ndim != 2 or db.ndim != 2 or da.shape[1] != db.shape[0]:
            raise ShapeError(f"'matmul': incompatible shapes {da.shape} and {db.shape}")
        out = da @ db

        def vjp(g):
            return g @ db.T, da.T @ g

        return _record("matmul", out, (a, b), vjp)

    def dual_rule(ap, at, bp, bt):
        p = matmul(ap, bp)
        terms = []
        if at is not None:
            terms.append(matmul(at, bp))
        if bt is not None:
            terms.append(matmul(ap, bt))
        t = terms[0] if len(terms) == 1 else add(terms[0], terms[1])
        return Dual(p, t)

    return _binary(a, b, tensor_rule, dual_rule)


def neg(a):
    if _is_dual(a):
        return Dual(neg(a.primal), neg(a.tangent))
    da = _as_array(a)

    def vjp(g):
        return (-g,)

    return _record("neg", -da, (a,), vjp)


def _unary(op, a, fwd, dfwd_from_out, *, domain_check=None):
    """Unary elementwise primitive; dfwd_from_out(x, y) is dy/dx given y=f(x)."""
    if _is_dual(a):
        p = _unary(op, a.primal, fwd, dfwd_from_out, domain_check=domain_check)
        deriv = dfwd_from_out(a.primal, p)
        return Dual(p, mul(deriv, a.tangent))
    da = _as_array(a)
    if domain_check is not None:
        domain_check(da)
    out = fwd(da)

    def vjp(g):
        return (g * dfwd_from_out(da, Tensor(out)).data,)

    # dfwd_from_out may build tape constants when called on arrays; evaluate
    # it eagerly on data for the reverse rule.
    return _record(op, out, (a,), vjp)


def exp(a):
    return _unary("exp", a, np.exp, lambda x, y: y)


def log(a):
    def check(d):
        if np.any(d <= 0.0):
            raise AutodiffDomainError("'log' of non-positive value")

    return _unary("log", a, np.log, lambda x, y: div(1.0, x), domain_check=check)


def sqrt(a):
    def check(d):
        if np.any(d < 0.0):
            raise AutodiffDomainError("'sqrt' of negative value")

    return _unary("sqrt", a, np.sqrt, lambda x, y: div(0.5, y), domain_check=check)


def absolute(a):
    return _unary("abs", a, np.abs, lambda x, y: sign(x))


def sign(a):
    if _is_dual(a):
        return Dual(sign(a.primal), mul(0.0, a.tangent))
    return Tensor(np.sign(_as_array(a)))


def sin(a):
    return _unary("sin", a, np.sin, lambda x, y: cos(x))


def cos(a):
    return _unary("cos", a, np.cos, lambda x, y: neg(sin(x)))


def tan(a):
    return _unary("tan", a, np.tan, lambda x, y: add(1.0, mul(y, y)))


def sinh(a):
    return _unary("sinh", a, np.sinh, lambda x, y: cosh(x))


def cosh(a):
    return _unary("cosh", a, np.cosh, lambda x, y: sinh(x))


def tanh(a):
    return _unary("tanh", a, np.tanh, lambda x, y: sub(1.0, mul(y, y)))


def pow_const(a, p):
    if isinstance(p, Tensor) and p.data.size == 1 and not p.requires_grad:
        p = float(p.data)
    if not isinstance(p, (int, float)):
        raise AutodiffError("pow exponent must be a constant scalar")
    p = float(p)
    if p == 1.0:
        return a if isinstance(a, (Tensor, Dual)) else constant(a)

    def check(d):
        if p != int(p) and np.any(d < 0.0):
            raise AutodiffDomainError(f"'pow' of negative base with exponent {p}")
        if p < 0 and np.any(d == 0.0):
            raise AutodiffDomainError(f"'pow' of zero base with negative exponent {p}")

    return _unary(
        f"pow[{p}]",
        a,
        lambda d: np.power(d, p),
        lambda x, y: mul(p, pow_const(x, p - 1.0)),
        domain_check=check,
    )


def gamma_fn(a):
    """Elementwise gamma; defined for constant (non-differentiated) inputs only."""
    if _is_dual(a) or (isinstance(a, Tensor) and a.requires_grad):
        raise AutodiffError("'gamma' supports constant arguments only")
    da = _as_array(a)
    if np.any((da <= 0.0) & (da == np.round(da))):
        raise AutodiffDomainError("'gamma' pole at non-positive integer")
    out = np.vectorize(math.gamma, otypes=[np.float64])(da)
    return _record("gamma", np.asarray(out), (), None)


def _reduce(op, a, np_fun, axis, keepdims, spread):
    if _is_dual(a):
        p = _reduce(op, a.primal, np_fun, axis, keepdims, spread)
        t = _reduce(op, a.tangent, np_fun, axis, keepdims, spread)
        return Dual(p, t)
    da = _as_array(a)
    out = np_fun(da, axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, da.shape) * spread(da),)

    return _record(op, np.asarray(out), (a,), vjp)


def tsum(a, axis=None, keepdims=False):
    return _reduce("sum", a, np.sum, axis, keepdims, lambda d: 1.0)


def tmean(a, axis=None, keepdims=False):
    def spread(d):
        n = d.size if axis is None else d.shape[axis]
        return 1.0 / n

    return _reduce("mean", a, np.mean, axis, keepdims, spread)


def reshape(a, shape):
    if _is_dual(a):
        return Dual(reshape(a.primal, shape), reshape(a.tangent, shape))
    da = _as_array(a)
    out = da.reshape(shape)

    def vjp(g):
        return (np.asarray(g).reshape(da.shape),)

    return _record("reshape", out, (a,), vjp)


def concat_columns(parts):
    """Stack column tensors (N,1) or (N,k) side by side into (N, sum k)."""
    if any(_is_dual(p) for p in parts):
        primals = [p.primal if _is_dual(p) else p for p in parts]
        tangents = [
            p.tangent if _is_dual(p) else Tensor(np.zeros_like(_as_array(p)))
            for p in parts
        ]
        return Dual(concat_columns(primals), concat_columns(tangents))
    arrays = [_as_array(p) for p in parts]
    if any(a.ndim != 2 for a in arrays):
        raise ShapeError("'concat_columns' expects 2-D operands")
    widths = [a.shape[1] for a in arrays]
    out = np.concatenate(arrays, axis=1)
    offsets = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(arrays)))

    return _record("concat_columns", out, tuple(parts), vjp)


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor, wrt: list[Tensor]) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar loss with respect to the given leaf tensors.

    Contributions accumulate additively across multiple uses; leaves that do
    not participate in the loss get zero gradients.  The pass is pure: it can
    be re-run on the same graph.
    """
    if loss.data.size != 1:
        raise AutodiffError(f"backward() root must be scalar, got shape {loss.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise AutodiffDomainError("backward() root is non-finite")

    # Reachable differentiable subgraph, then reverse-creation-order sweep.
    visited: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node.node_id in visited or not node.requires_grad:
            continue
        visited[node.node_id] = node
        stack.extend(node.parents)

    wanted = {w.node_id for w in wrt}
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node_id in sorted(visited, reverse=True):
        node = visited[node_id]
        g = grads.get(node_id)
        if g is None:
            continue
        if node_id not in wanted:
            del grads[node_id]
        if node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(parent.node_id)
            grads[parent.node_id] = pg if acc is None else acc + pg

    out = {}
    for w in wrt:
        g = grads.get(w.node_id)
        if g is None:
            g = np.zeros_like(w.data)
        if not np.all(np.isfinite(g)):
            raise AutodiffDomainError("non-finite gradient in backward()")
        out[w] = np.broadcast_to(g, w.data.shape).astype(np.float64, copy=False)
    return out


def input_derivative(net_apply, x: Tensor, dim: int, order: int = 1) -> Tensor:
    """Column of d^order u / d x_dim^order at each row of x.

    ``net_apply`` must be built from the primitives in this module.  The
    result stays on the parameter tape, so losses that use it remain
    differentiable with respect to network parameters.
    """
    if order not in (1, 2):
        raise AutodiffError(f"input_derivative supports order 1 or 2, got {order}")
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if data.ndim != 2:
        raise ShapeError("input_derivative expects inputs of shape (N, d)")
    if not 0 <= dim < data.shape[1]:
        raise ShapeError(f"axis {dim} out of range for input of width {data.shape[1]}")
    seed_arr = np.zeros_like(data)
    seed_arr[:, dim] = 1.0
    seed = Tensor(seed_arr)
    x_t = x if isinstance(x, Tensor) else Tensor(data)
    if order == 1:
        out = net_apply(Dual(x_t, seed))
        if not _is_dual(out):
            return Tensor(np.zeros((data.shape[0], 1)))
        return out.tangent
    out = net_apply(Dual(Dual(x_t, seed), seed))
    if not _is_dual(out):
        return Tensor(np.zeros((data.shape[0], 1)))
    inner = out.tangent
    if not _is_dual(inner):
        return Tensor(np.zeros((data.shape[0], 1)))
    return inner.tangent
