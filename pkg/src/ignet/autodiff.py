"""Reverse-mode automatic differentiation over dense float64 matrices.

A :class:`Tape` records operations define-by-run. Every value is a 2-D
array; vectors are columns. The op functions at module level (``matmul``,
``cho_solve``, ...) accept either :class:`Var` or plain arrays. When none of
the inputs is a ``Var`` they return a plain ``ndarray`` and nothing is
recorded, so prediction code and the training loss share one forward path.

Example::

    tape = Tape()
    W = tape.var([[1.0, 2.0], [3.0, 4.0]])
    loss = ad.sum(W * W)
    grads = tape.backward(loss)
    grads[W]  # 2 * W
"""

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .exceptions import ContractError, DimensionError

__all__ = [
    "Tape", "Var", "GradientMap", "value",
    "add", "sub", "mul", "matmul", "transpose", "scale", "bias_add",
    "relu", "exp", "log", "sum", "sqdist", "cho_solve", "logdet", "diag",
    "quad_form",
]


def _as_matrix(x):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(-1, 1)
    if a.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got shape {a.shape}")
    return a


def value(x):
    """Underlying array of a Var, or the array itself."""
    return x.value if isinstance(x, Var) else x


@dataclass
class Node:
    kind: str
    parents: tuple
    value: np.ndarray
    requires_grad: bool
    cache: dict = field(default_factory=dict)


class Var:
    """A matrix value with a handle into the tape that produced it."""

    __slots__ = ("value", "tape", "index", "requires_grad", "name")
    __array_priority__ = 100.0

    def __init__(self, value, tape, index, requires_grad, name=None):
        self.value = value
        self.tape = tape
        self.index = index
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.shape}, node={self.index}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class GradientMap:
    """Gradients keyed by Var; unreachable Vars map to zeros."""

    def __init__(self, tape, adjoints):
        self._tape = tape
        self._adjoints = adjoints

    def __getitem__(self, var):
        if var.tape is not self._tape:
            raise ContractError("Var belongs to a different tape")
        g = self._adjoints.get(var.index)
        return np.zeros_like(var.value) if g is None else g

    def __contains__(self, var):
        return var.tape is self._tape and var.index in self._adjoints


class Tape:
    """Append-only record of operations; single-threaded."""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def var(self, value, requires_grad=True, name=None):
        """Register a leaf (parameter or input)."""
        v = _as_matrix(value).copy()
        self.nodes.append(Node("leaf", (), v, requires_grad))
        return Var(v, self, len(self.nodes) - 1, requires_grad, name)

    def const(self, value, name=None):
        return self.var(value, requires_grad=False, name=name)

    def record(self, kind, *inputs, value, cache=None):
        """Append a node for ``kind`` applied to ``inputs`` with a known forward value."""
        if kind not in _RULES:
            raise ContractError(f"unknown op kind {kind!r}")
        vars_ = []
        for x in inputs:
            if isinstance(x, Var):
                if x.tape is not self:
                    raise ContractError(f"{kind}: input Var belongs to a different tape")
                vars_.append(x)
            else:
                vars_.append(self.const(x))
        _RULES[kind].check(*(v.shape for v in vars_))
        out = _as_matrix(value)
        requires_grad = any(v.requires_grad for v in vars_)
        self.nodes.append(
            Node(kind, tuple(v.index for v in vars_), out, requires_grad, cache or {})
        )
        return Var(out, self, len(self.nodes) - 1, requires_grad)

    def backward(self, loss):
        """Accumulate adjoints from a scalar ``loss`` back to every leaf."""
        if not isinstance(loss, Var) or loss.tape is not self:
            raise ContractError("backward: loss must be a Var recorded on this tape")
        if loss.shape != (1, 1):
            raise ContractError(f"backward: loss must be 1x1, got shape {loss.shape}")
        adjoints = {}
        if loss.requires_grad:
            adjoints[loss.index] = np.ones((1, 1))
        nodes = self.nodes
        for i in range(loss.index, -1, -1):
            g = adjoints.get(i)
            node = nodes[i]
            if g is None or node.kind == "leaf":
                continue
            parents = [nodes[p] for p in node.parents]
            grads = _RULES[node.kind].vjp(g, node, [p.value for p in parents])
            for p_idx, p_node, pg in zip(node.parents, parents, grads):
                if pg is None or not p_node.requires_grad:
                    continue
                prev = adjoints.get(p_idx)
                adjoints[p_idx] = pg if prev is None else prev + pg
        return GradientMap(self, adjoints)


# ---------------------------------------------------------------------------
# op rules


@dataclass(frozen=True)
class _Rule:
    check: callable
    vjp: callable


def _same_shape(kind):
    def check(a, b):
        if a != b:
            raise DimensionError(f"{kind}: shapes {a} and {b} differ")
    return check


def _unary(a):
    pass


def _check_matmul(a, b):
    if a[1] != b[0]:
        raise DimensionError(f"matmul: shapes {a} and {b} do not conform")


def _check_scale(a, s):
    if s != (1, 1):
        raise DimensionError(f"scale: factor must be 1x1, got {s} (operand {a})")


def _check_bias(a, b):
    if b != (1, a[1]):
        raise DimensionError(f"bias_add: bias shape {b} does not match operand {a}")


def _check_sqdist(a, b):
    if a[1] != b[1]:
        raise DimensionError(f"sqdist: column counts differ in {a} and {b}")


def _check_square(kind):
    def check(k, *rest):
        if k[0] != k[1]:
            raise DimensionError(f"{kind}: matrix must be square, got {k}")
        for r in rest:
            if r[0] != k[0]:
                raise DimensionError(f"{kind}: right-hand side {r} does not match {k}")
    return check


def _check_quad(x, k):
    if k[0] != k[1]:
        raise DimensionError(f"quad_form: matrix must be square, got {k}")
    if x != (k[0], 1):
        raise DimensionError(f"quad_form: vector {x} does not match matrix {k}")


def _sym(a):
    return 0.5 * (a + a.T)


def _vjp_sqdist(g, node, vals):
    A, B = vals
    G = np.where(node.cache["clamped"], 0.0, g)
    gA = 2.0 * (G.sum(axis=1, keepdims=True) * A - G @ B)
    gB = 2.0 * (G.sum(axis=0, keepdims=True).T * B - G.T @ A)
    return gA, gB


def _vjp_cho_solve(g, node, vals):
    factor = node.cache["factor"]
    gB = linalg.solve(factor, g)
    gK = -_sym(gB @ node.value.T)
    return gK, gB


def _vjp_logdet(g, node, vals):
    return (g[0, 0] * linalg.inverse(node.cache["factor"]),)


def _vjp_quad(g, node, vals):
    alpha = node.cache["alpha"]
    return 2.0 * g[0, 0] * alpha, -g[0, 0] * (alpha @ alpha.T)


_RULES = {
    "leaf": _Rule(_unary, None),
    "add": _Rule(_same_shape("add"), lambda g, n, v: (g, g)),
    "subtract": _Rule(_same_shape("subtract"), lambda g, n, v: (g, -g)),
    "multiply": _Rule(_same_shape("multiply"), lambda g, n, v: (g * v[1], g * v[0])),
    "matmul": _Rule(_check_matmul, lambda g, n, v: (g @ v[1].T, v[0].T @ g)),
    "transpose": _Rule(_unary, lambda g, n, v: (g.T,)),
    "scale": _Rule(
        _check_scale, lambda g, n, v: (g * v[1][0, 0], np.array([[np.sum(g * v[0])]]))
    ),
    "bias_add": _Rule(_check_bias, lambda g, n, v: (g, g.sum(axis=0, keepdims=True))),
    "relu": _Rule(_unary, lambda g, n, v: (g * (v[0] > 0.0),)),
    "exp": _Rule(_unary, lambda g, n, v: (g * n.value,)),
    "log": _Rule(_unary, lambda g, n, v: (g / v[0],)),
    "sum": _Rule(_unary, lambda g, n, v: (np.full_like(v[0], g[0, 0]),)),
    "sqdist": _Rule(_check_sqdist, _vjp_sqdist),
    "cho_solve": _Rule(_check_square("cho_solve"), _vjp_cho_solve),
    "logdet": _Rule(_check_square("logdet"), _vjp_logdet),
    "diag": _Rule(_check_square("diag"), lambda g, n, v: (np.diagflat(g),)),
    "quad_form": _Rule(_check_quad, _vjp_quad),
}


# ---------------------------------------------------------------------------
# public ops


def _apply(kind, inputs, forward, cache=None):
    tape = None
    for x in inputs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ContractError(f"{kind}: inputs live on different tapes")
    raw = [_as_matrix(value(x)) for x in inputs]
    _RULES[kind].check(*(r.shape for r in raw))
    out = forward(*raw) if cache is None else forward(*raw, cache)
    if tape is None:
        return out
    return tape.record(kind, *inputs, value=out, cache=cache)


def add(a, b):
    return _apply("add", (a, b), np.add)


def sub(a, b):
    return _apply("subtract", (a, b), np.subtract)


def mul(a, b):
    """Elementwise product of equally shaped matrices."""
    return _apply("multiply", (a, b), np.multiply)


def matmul(a, b):
    return _apply("matmul", (a, b), np.matmul)


def transpose(a):
    return _apply("transpose", (a,), lambda x: x.T.copy())


def scale(a, s):
    """Multiply a matrix by a scalar (float or 1x1 Var)."""
    return _apply("scale", (a, s), lambda x, f: x * f[0, 0])


def bias_add(a, b):
    """Add a 1 x q row to every row of a p x q matrix."""
    return _apply("bias_add", (a, b), np.add)


def relu(a):
    return _apply("relu", (a,), lambda x: np.maximum(x, 0.0))


def exp(a):
    return _apply("exp", (a,), np.exp)


def log(a):
    return _apply("log", (a,), np.log)


def sum(a):
    return _apply("sum", (a,), lambda x: np.array([[x.sum()]]))


def sqdist(a, b):
    """Pairwise squared Euclidean distances between the rows of a and b.

    Uses ``|a|^2 + |b|^2 - 2 a.b`` clamped at zero. When ``a`` and ``b`` are
    the same object the result is symmetrized and its diagonal set to 0.
    """
    same = a is b

    def forward(x, y, cache):
        d = (x * x).sum(axis=1)[:, None] + (y * y).sum(axis=1)[None, :] - 2.0 * (x @ y.T)
        if same:
            d = 0.5 * (d + d.T)
            np.fill_diagonal(d, 0.0)
        clamped = d < 0.0
        if same:
            np.fill_diagonal(clamped, True)
        cache["clamped"] = clamped
        return np.maximum(d, 0.0)

    return _apply("sqdist", (a, b), forward, cache={})


def cho_solve(K, B, jitter=linalg.DEFAULT_JITTER):
    """``K^{-1} B`` for symmetric positive definite K via a jittered Cholesky."""

    def forward(k, rhs, cache):
        factor = linalg.cholesky(k, jitter)
        cache["factor"] = factor
        return linalg.solve(factor, rhs)

    return _apply("cho_solve", (K, B), forward, cache={})


def logdet(K, jitter=linalg.DEFAULT_JITTER):
    def forward(k, cache):
        factor = linalg.cholesky(k, jitter)
        cache["factor"] = factor
        return np.array([[linalg.logdet(factor)]])

    return _apply("logdet", (K,), forward, cache={})


def diag(K):
    """Diagonal of a square matrix as a column."""
    return _apply("diag", (K,), lambda k: np.diag(k).copy()[:, None])


def quad_form(x, K, jitter=linalg.DEFAULT_JITTER):
    """``x^T K^{-1} x`` for a column x and SPD K."""

    def forward(v, k, cache):
        factor = linalg.cholesky(k, jitter)
        alpha = linalg.solve(factor, v)
        cache["factor"] = factor
        cache["alpha"] = alpha
        return v.T @ alpha

    return _apply("quad_form", (x, K), forward, cache={})
