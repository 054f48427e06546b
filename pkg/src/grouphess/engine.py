"""Expression graphs with exact nested differentiation.

A loss is represented as an immutable DAG of tensor-valued nodes (``Expr``)
over named variable leaves, typically a single flat parameter vector named
``"theta"``.  Differentiation is a graph-to-graph transformation: the
reverse-mode adjoint of every primitive is itself built from primitives, so
the gradient of an expression is again an expression that can be evaluated,
composed, and differentiated to arbitrary order.  That property is what the
higher-order machinery in :mod:`grouphess.summaries` relies on.

All arithmetic is 64-bit; evaluation is deterministic (same inputs give
bit-identical outputs).  Only smooth primitives are provided: tanh, softplus,
sigmoid, exp, log, powers, and the usual arithmetic/affine/reduction ops.
Piecewise-linear primitives (relu, max, abs) are deliberately absent because
second and third derivatives are consumed downstream.

A process-wide :class:`PassCounter` tracks evaluation cost:

* ``forward``  - number of graph evaluations of any kind;
* ``backward`` - total differentiation depth of evaluated derivative graphs
  (one gradient = one forward + one backward sweep);
* ``passes``   - number of derivative-graph evaluations ("gradient-equivalent
  passes": one gradient, or one Hessian-vector product, each count once).
"""

from __future__ import annotations

import itertools
import threading
import weakref
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "EvaluationError",
    "Expr",
    "ParamVector",
    "PassCounts",
    "PassCounter",
    "counter",
    "const",
    "var",
    "add",
    "mul",
    "matmul",
    "transpose",
    "reshape",
    "segment",
    "embed",
    "reduce_sum",
    "reduce_mean",
    "dot",
    "neg",
    "exp",
    "log",
    "tanh",
    "softplus",
    "sigmoid",
    "power",
    "param_tensors",
    "substitute",
    "evaluate",
    "gradient",
    "gradient_expr",
    "directional_derivative",
    "nested_directional",
    "gradient_of_nested",
    "PARAM",
]

PARAM = "theta"

ArrayLike = Union[float, int, Sequence, np.ndarray]


class EvaluationError(ValueError):
    """Raised when an expression cannot be evaluated (domain violation,
    unbound variable, shape mismatch)."""


# ---------------------------------------------------------------------------
# pass counting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PassCounts:
    forward: int = 0
    backward: int = 0
    passes: int = 0

    def __sub__(self, other: "PassCounts") -> "PassCounts":
        return PassCounts(
            self.forward - other.forward,
            self.backward - other.backward,
            self.passes - other.passes,
        )


class PassCounter:
    """Thread-safe accumulator of evaluation cost (see module docstring)."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._forward = 0
        self._backward = 0
        self._passes = 0

    def add(self, forward: int = 0, backward: int = 0, passes: int = 0) -> None:
        with self._lock:
            self._forward += forward
            self._backward += backward
            self._passes += passes

    def snapshot(self) -> PassCounts:
        with self._lock:
            return PassCounts(self._forward, self._backward, self._passes)

    def reset(self) -> None:
        with self._lock:
            self._forward = self._backward = self._passes = 0


counter = PassCounter()


# ---------------------------------------------------------------------------
# expression nodes
# ---------------------------------------------------------------------------

_node_ids = itertools.count()


class Expr:
    """One immutable node of an expression DAG.

    ``op`` names the primitive, ``inputs`` are child expressions, ``payload``
    carries non-differentiable attributes (constant arrays, variable names,
    axes, exponents), and ``shape`` is the statically known result shape.
    Nodes hash by identity; shared subgraphs are shared objects.
    """

    __slots__ = ("op", "inputs", "payload", "shape", "nid", "__weakref__")

    def __init__(self, op: str, inputs: tuple, payload, shape: tuple) -> None:
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "payload", payload)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "nid", next(_node_ids))

    def __setattr__(self, name, value):  # pragma: no cover - guard
        raise AttributeError("Expr nodes are immutable")

    def __repr__(self) -> str:
        return f"Expr<{self.op}#{self.nid} shape={self.shape}>"

    # arithmetic sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, _as_expr(other))

    def __radd__(self, other):
        return add(_as_expr(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_expr(other)))

    def __rsub__(self, other):
        return add(_as_expr(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_expr(other))

    def __rmul__(self, other):
        return mul(_as_expr(other), self)

    def __truediv__(self, other):
        return mul(self, power(_as_expr(other), -1.0))

    def __rtruediv__(self, other):
        return mul(_as_expr(other), power(self, -1.0))

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, _as_expr(other))


def _as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    return const(x)


def _shape_of(x: ArrayLike) -> tuple:
    return np.asarray(x).shape


# constructors --------------------------------------------------------------

_var_registry: dict = {}


def const(value: ArrayLike) -> Expr:
    arr = np.asarray(value, dtype=np.float64)
    arr.setflags(write=False)
    return Expr("const", (), arr, arr.shape)


def var(name: str, shape: Iterable[int]) -> Expr:
    """Variable leaf, interned per (name, shape) so that graphs built
    independently against the same variable share the leaf node."""
    key = (name, tuple(int(s) for s in shape))
    node = _var_registry.get(key)
    if node is None:
        node = Expr("var", (), name, key[1])
        _var_registry[key] = node
    return node


def neg(x: Expr) -> Expr:
    return Expr("neg", (x,), None, x.shape)


def add(x: Expr, y: Expr) -> Expr:
    shape = np.broadcast_shapes(x.shape, y.shape)
    return Expr("add", (x, y), None, shape)


def mul(x: Expr, y: Expr) -> Expr:
    shape = np.broadcast_shapes(x.shape, y.shape)
    return Expr("mul", (x, y), None, shape)


def matmul(x: Expr, y: Expr) -> Expr:
    if len(x.shape) == 2 and len(y.shape) == 2:
        if x.shape[1] != y.shape[0]:
            raise EvaluationError(f"matmul: {x.shape} @ {y.shape}")
        shape = (x.shape[0], y.shape[1])
    elif len(x.shape) == 2 and len(y.shape) == 1:
        if x.shape[1] != y.shape[0]:
            raise EvaluationError(f"matmul: {x.shape} @ {y.shape}")
        shape = (x.shape[0],)
    else:
        raise EvaluationError(f"matmul supports 2d@2d and 2d@1d, got {x.shape} @ {y.shape}")
    return Expr("matmul", (x, y), None, shape)


def transpose(x: Expr) -> Expr:
    if len(x.shape) != 2:
        raise EvaluationError(f"transpose expects a matrix, got shape {x.shape}")
    return Expr("transpose", (x,), None, (x.shape[1], x.shape[0]))


def reshape(x: Expr, shape: Iterable[int]) -> Expr:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != int(np.prod(x.shape, dtype=np.int64)):
        raise EvaluationError(f"reshape: cannot reshape {x.shape} to {shape}")
    return Expr("reshape", (x,), shape, shape)


def segment(x: Expr, start: int, stop: int) -> Expr:
    """Contiguous slice x[start:stop] of a vector."""
    if len(x.shape) != 1:
        raise EvaluationError("segment expects a vector")
    if not (0 <= start <= stop <= x.shape[0]):
        raise EvaluationError(f"segment [{start}:{stop}] out of range for length {x.shape[0]}")
    return Expr("segment", (x,), (int(start), int(stop)), (stop - start,))


def embed(x: Expr, start: int, total: int) -> Expr:
    """Embed a vector into a zero vector of length ``total`` at ``start``
    (the adjoint of :func:`segment`)."""
    if len(x.shape) != 1:
        raise EvaluationError("embed expects a vector")
    if not (0 <= start and start + x.shape[0] <= total):
        raise EvaluationError("embed out of range")
    return Expr("embed", (x,), (int(start), int(total)), (int(total),))


def reduce_sum(x: Expr, axis: int | None = None) -> Expr:
    if axis is None:
        return Expr("sum", (x,), None, ())
    axis = int(axis)
    if not (0 <= axis < len(x.shape)):
        raise EvaluationError(f"sum axis {axis} out of range for shape {x.shape}")
    shape = x.shape[:axis] + x.shape[axis + 1:]
    return Expr("sum", (x,), axis, shape)


def reduce_mean(x: Expr, axis: int | None = None) -> Expr:
    n = int(np.prod(x.shape, dtype=np.int64)) if axis is None else x.shape[axis]
    return mul(reduce_sum(x, axis), const(1.0 / n))


def dot(x: Expr, y: Expr) -> Expr:
    return reduce_sum(mul(x, y))


def exp(x: Expr) -> Expr:
    return Expr("exp", (x,), None, x.shape)


def log(x: Expr) -> Expr:
    return Expr("log", (x,), None, x.shape)


def tanh(x: Expr) -> Expr:
    return Expr("tanh", (x,), None, x.shape)


def softplus(x: Expr) -> Expr:
    return Expr("softplus", (x,), None, x.shape)


def sigmoid(x: Expr) -> Expr:
    return Expr("sigmoid", (x,), None, x.shape)


def power(x: Expr, p) -> Expr:
    if isinstance(p, Expr):
        raise TypeError("power exponent must be a number, not an Expr")
    return Expr("power", (x,), float(p), x.shape)


def param_tensors(theta: Expr, shapes: Sequence[tuple]) -> list[Expr]:
    """Carve a flat parameter vector into reshaped tensor views, in
    declaration order with row-major flattening."""
    out, offset = [], 0
    for shp in shapes:
        n = int(np.prod(shp, dtype=np.int64))
        out.append(reshape(segment(theta, offset, offset + n), shp))
        offset += n
    if offset != theta.shape[0]:
        raise EvaluationError("shape list does not cover the parameter vector")
    return out


def substitute(f: Expr, name: str, replacement: Expr) -> Expr:
    """Rebuild ``f`` with every variable leaf ``name`` replaced by
    ``replacement`` (which may itself reference other variables)."""
    memo: dict[int, Expr] = {}

    for node in _plan(f):
        if node.op == "var" and node.payload == name:
            if node.shape != replacement.shape:
                raise EvaluationError(
                    f"substitute: variable {name} has shape {node.shape}, "
                    f"replacement has {replacement.shape}")
            memo[node.nid] = replacement
        elif any(i.nid in memo and memo[i.nid] is not i for i in node.inputs):
            new_inputs = tuple(memo.get(i.nid, i) for i in node.inputs)
            memo[node.nid] = Expr(node.op, new_inputs, node.payload, node.shape)
        else:
            memo[node.nid] = node
    return memo[f.nid]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

_plan_cache: "weakref.WeakKeyDictionary[Expr, list]" = weakref.WeakKeyDictionary()


def _plan(root: Expr) -> list:
    """Topological evaluation order (inputs before consumers), cached per root."""
    plan = _plan_cache.get(root)
    if plan is not None:
        return plan
    order: list[Expr] = []
    seen: set[int] = set()
    stack: list[tuple[Expr, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.nid in seen:
            continue
        seen.add(node.nid)
        stack.append((node, True))
        for child in node.inputs:
            if child.nid not in seen:
                stack.append((child, False))
    _plan_cache[root] = order
    return order


def _eval_node(node: Expr, vals: dict, env: Mapping[str, np.ndarray]) -> np.ndarray:
    op = node.op
    if op == "const":
        return node.payload
    if op == "var":
        try:
            v = env[node.payload]
        except KeyError:
            raise EvaluationError(f"unbound variable '{node.payload}'") from None
        v = np.asarray(v, dtype=np.float64)
        if v.shape != node.shape:
            raise EvaluationError(
                f"variable '{node.payload}' expects shape {node.shape}, got {v.shape}")
        return v
    a = vals[node.inputs[0].nid]
    if op == "neg":
        return -a
    if op == "add":
        return a + vals[node.inputs[1].nid]
    if op == "mul":
        return a * vals[node.inputs[1].nid]
    if op == "matmul":
        return a @ vals[node.inputs[1].nid]
    if op == "transpose":
        return a.T
    if op == "reshape":
        return a.reshape(node.payload)
    if op == "segment":
        start, stop = node.payload
        return a[start:stop]
    if op == "embed":
        start, total = node.payload
        out = np.zeros(total)
        out[start:start + a.shape[0]] = a
        return out
    if op == "sum":
        return np.sum(a, axis=node.payload)
    if op == "exp":
        return np.exp(a)
    if op == "log":
        if np.any(a <= 0.0):
            raise EvaluationError("log: non-positive input")
        return np.log(a)
    if op == "tanh":
        return np.tanh(a)
    if op == "softplus":
        return np.logaddexp(0.0, a)
    if op == "sigmoid":
        # 1/(1+exp(-x)), stable on both tails in float64
        return np.where(a >= 0, 1.0 / (1.0 + np.exp(-np.abs(a))),
                        np.exp(-np.abs(a)) / (1.0 + np.exp(-np.abs(a))))
    if op == "power":
        p = node.payload
        if not float(p).is_integer() and np.any(a < 0.0):
            raise EvaluationError("power: negative base with non-integer exponent")
        if p < 0 and np.any(a == 0.0):
            raise EvaluationError("power: zero base with negative exponent")
        return np.power(a, p)
    raise EvaluationError(f"unknown primitive '{op}'")  # pragma: no cover


def _run(root: Expr, env: Mapping[str, np.ndarray]) -> np.ndarray:
    vals: dict[int, np.ndarray] = {}
    with np.errstate(all="ignore"):
        for node in _plan(root):
            vals[node.nid] = _eval_node(node, vals, env)
    return vals[root.nid]


def _as_env(theta) -> Mapping[str, np.ndarray]:
    if isinstance(theta, Mapping):
        return theta
    if isinstance(theta, ParamVector):
        return {PARAM: theta.values}
    return {PARAM: np.asarray(theta, dtype=np.float64)}


def evaluate(f: Expr, theta) -> float:
    """Evaluate a scalar expression at ``theta`` (ParamVector, flat array,
    or an explicit name->array environment)."""
    counter.add(forward=1)
    out = _run(f, _as_env(theta))
    return float(out) if out.shape == () else out


# ---------------------------------------------------------------------------
# differentiation (graph transformation)
# ---------------------------------------------------------------------------


def _sum_to(e: Expr, shape: tuple) -> Expr:
    """Reduce a broadcast expression back to ``shape`` (adjoint of numpy
    broadcasting in add/mul)."""
    while len(e.shape) > len(shape):
        e = reduce_sum(e, axis=0)
    for ax in range(len(shape)):
        if shape[ax] == 1 and e.shape[ax] != 1:
            e = reshape(reduce_sum(e, axis=ax), shape[:ax] + (1,) + e.shape[ax + 1:])
    return e


def _ones(shape: tuple) -> Expr:
    return const(np.ones(shape))


def _vjp(node: Expr, adj: Expr) -> list[tuple[Expr, Expr]]:
    """Adjoint contributions of ``node`` to each differentiable input,
    expressed with primitives so the result is differentiable again."""
    op = node.op
    x = node.inputs[0] if node.inputs else None
    if op == "neg":
        return [(x, neg(adj))]
    if op == "add":
        y = node.inputs[1]
        return [(x, _sum_to(adj, x.shape)), (y, _sum_to(adj, y.shape))]
    if op == "mul":
        y = node.inputs[1]
        return [(x, _sum_to(mul(adj, y), x.shape)), (y, _sum_to(mul(adj, x), y.shape))]
    if op == "matmul":
        y = node.inputs[1]
        if len(y.shape) == 2:
            return [(x, matmul(adj, transpose(y))), (y, matmul(transpose(x), adj))]
        # matrix @ vector
        m, k = x.shape
        outer = matmul(reshape(adj, (m, 1)), reshape(y, (1, k)))
        return [(x, outer), (y, matmul(transpose(x), adj))]
    if op == "transpose":
        return [(x, transpose(adj))]
    if op == "reshape":
        return [(x, reshape(adj, x.shape))]
    if op == "segment":
        start, _ = node.payload
        return [(x, embed(adj, start, x.shape[0]))]
    if op == "embed":
        start, _ = node.payload
        return [(x, segment(adj, start, start + x.shape[0]))]
    if op == "sum":
        if node.payload is None:
            return [(x, mul(adj, _ones(x.shape)))]
        ax = node.payload
        keep = x.shape[:ax] + (1,) + x.shape[ax + 1:]
        return [(x, mul(reshape(adj, keep), _ones(x.shape)))]
    if op == "exp":
        return [(x, mul(adj, node))]
    if op == "log":
        return [(x, mul(adj, power(x, -1.0)))]
    if op == "tanh":
        return [(x, mul(adj, add(const(1.0), neg(mul(node, node)))))]
    if op == "softplus":
        return [(x, mul(adj, sigmoid(x)))]
    if op == "sigmoid":
        return [(x, mul(adj, mul(node, add(const(1.0), neg(node)))))]
    if op == "power":
        p = node.payload
        if p == 0.0:
            return []
        return [(x, mul(adj, mul(const(p), power(x, p - 1.0))))]
    raise EvaluationError(f"no derivative rule for primitive '{op}'")  # pragma: no cover


def _var_node_in(f: Expr, name: str) -> Expr | None:
    found = None
    for node in _plan(f):
        if node.op == "var" and node.payload == name:
            if found is not None and found is not node:
                raise EvaluationError(
                    f"expression mixes two '{name}' leaves of different shapes")
            found = node
    return found


_grad_cache: "weakref.WeakKeyDictionary[Expr, dict]" = weakref.WeakKeyDictionary()


def gradient_expr(f: Expr, wrt: str = PARAM, shape: tuple | None = None) -> Expr:
    """Reverse-mode gradient of a scalar expression as a new expression.

    Adjoints are accumulated over the sub-DAG that depends on ``wrt``; every
    rule emits primitive nodes, so the returned graph supports further
    differentiation.  Results are cached per (f, wrt).
    """
    cache = _grad_cache.setdefault(f, {})
    if wrt in cache:
        return cache[wrt]
    if f.shape != ():
        raise EvaluationError(f"gradient expects a scalar expression, got shape {f.shape}")

    leaf = _var_node_in(f, wrt)
    if leaf is None:
        # constant w.r.t. wrt; not cached because the zero shape is caller-supplied
        if shape is None:
            raise EvaluationError(f"expression does not contain variable '{wrt}' "
                                  "and no shape was given for the zero gradient")
        return const(np.zeros(shape))

    plan = _plan(f)
    # nodes whose value depends on the leaf
    dep: set[int] = {leaf.nid}
    for node in plan:
        if any(i.nid in dep for i in node.inputs):
            dep.add(node.nid)
    if f.nid not in dep:  # pragma: no cover - leaf found implies dependence
        out = const(np.zeros(leaf.shape))
        cache[wrt] = out
        return out

    adjoint: dict[int, Expr] = {f.nid: const(1.0)}
    for node in reversed(plan):
        if node.nid not in dep or node.nid not in adjoint or not node.inputs:
            continue
        adj = adjoint[node.nid]
        for child, contrib in _vjp(node, adj):
            if child.nid not in dep:
                continue
            prev = adjoint.get(child.nid)
            adjoint[child.nid] = contrib if prev is None else add(prev, contrib)
    # zero if every path to the leaf dies in a derivative-free rule (x**0)
    out = adjoint.get(leaf.nid)
    if out is None:
        out = const(np.zeros(leaf.shape))
    cache[wrt] = out
    return out


def gradient(f: Expr, theta) -> np.ndarray:
    """Exact reverse-mode gradient of ``f`` with respect to the parameter
    vector, evaluated at ``theta``.  One forward plus one backward sweep."""
    env = _as_env(theta)
    p = np.asarray(env[PARAM]).shape
    g = gradient_expr(f, PARAM, shape=p)
    counter.add(forward=1, backward=1, passes=1)
    return np.atleast_1d(_run(g, env))


def directional_derivative(f: Expr, theta, u: ArrayLike) -> Expr:
    """The scalar expression grad(f)^T u, itself differentiable again.

    ``u`` is baked in as a constant; ``theta`` fixes the expected parameter
    length (the expression remains a function of the parameter vector).
    """
    env = _as_env(theta)
    p = np.asarray(env[PARAM]).shape
    u = np.asarray(u, dtype=np.float64)
    if u.shape != p:
        raise EvaluationError(f"direction has shape {u.shape}, parameters have {p}")
    return dot(gradient_expr(f, PARAM, shape=p), const(u))


# Derivative chains with one fresh direction leaf per order; cached per
# expression so repeated evaluations at new points/directions rebind leaves
# instead of rebuilding graphs.

_chain_cache: "weakref.WeakKeyDictionary[Expr, dict]" = weakref.WeakKeyDictionary()


def _dir_name(k: int) -> str:
    return f"_u{k}"


def _chain(f: Expr, d: int, pshape: tuple) -> Expr:
    """d-fold nested directional derivative with independent direction
    leaves _u1.._ud:  c_k = grad(c_{k-1})^T u_k."""
    cache = _chain_cache.setdefault(f, {})
    have = max((k for k in cache if k <= d), default=0)
    expr = cache.get(have, f)
    for k in range(have + 1, d + 1):
        expr = dot(gradient_expr(expr, PARAM, shape=pshape), var(_dir_name(k), pshape))
        cache[k] = expr
    return cache[d] if d > 0 else f


def _chain_env(theta, dirs: Sequence[ArrayLike]) -> dict:
    env = dict(_as_env(theta))
    p = np.asarray(env[PARAM]).shape
    for k, u in enumerate(dirs, start=1):
        u = np.asarray(u, dtype=np.float64)
        if u.shape != p:
            raise EvaluationError(f"direction {k} has shape {u.shape}, parameters have {p}")
        env[_dir_name(k)] = u
    return env


def nested_directional(f: Expr, theta, dirs: Sequence[ArrayLike]) -> float:
    """d-th derivative of ``f`` contracted with the given directions, one per
    differentiation level.  Counts as one gradient-equivalent pass of depth d."""
    d = len(dirs)
    if d == 0:
        return evaluate(f, theta)
    env = _chain_env(theta, dirs)
    expr = _chain(f, d, np.asarray(env[PARAM]).shape)
    counter.add(forward=1, backward=d, passes=1)
    return float(_run(expr, env))


def gradient_of_nested(f: Expr, theta, dirs: Sequence[ArrayLike]) -> np.ndarray:
    """Gradient of the d-fold nested directional derivative: a full vector of
    (d+1)-th derivative contractions.  With ``dirs=[]`` this is the plain
    gradient; with one direction it is a Hessian-vector product."""
    env = _chain_env(theta, dirs)
    pshape = np.asarray(env[PARAM]).shape
    expr = _chain(f, len(dirs), pshape)
    g = gradient_expr(expr, PARAM, shape=pshape)
    counter.add(forward=1, backward=len(dirs) + 1, passes=1)
    return np.atleast_1d(_run(g, env))


# ---------------------------------------------------------------------------
# parameter vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Flat 64-bit parameter vector carrying a tuple-of-tensors structure.

    Tensors are concatenated in declaration order, each flattened row-major;
    the shape list is fixed for the lifetime of a run.
    """

    values: np.ndarray
    shapes: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        shapes = tuple(tuple(int(s) for s in shp) for shp in self.shapes)
        object.__setattr__(self, "shapes", shapes)
        total = sum(int(np.prod(s, dtype=np.int64)) for s in shapes)
        if total != self.values.shape[0]:
            raise ValueError(
                f"shape list covers {total} entries, values have {self.values.shape[0]}")

    @classmethod
    def flat(cls, values: ArrayLike) -> "ParamVector":
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        return cls(values, ((values.shape[0],),))

    @classmethod
    def from_tensors(cls, tensors: Sequence[np.ndarray]) -> "ParamVector":
        tensors = [np.asarray(t, dtype=np.float64) for t in tensors]
        flat = np.concatenate([t.reshape(-1) for t in tensors]) if tensors else np.zeros(0)
        return cls(flat, tuple(t.shape for t in tensors))

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def tensors(self) -> list[np.ndarray]:
        out, offset = [], 0
        for shp in self.shapes:
            n = int(np.prod(shp, dtype=np.int64))
            out.append(self.values[offset:offset + n].reshape(shp))
            offset += n
        return out

    def with_values(self, values: ArrayLike) -> "ParamVector":
        return ParamVector(np.asarray(values, dtype=np.float64), self.shapes)

    def variable(self) -> Expr:
        return var(PARAM, (self.size,))
