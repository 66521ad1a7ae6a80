"""Dense tensors with reverse-mode differentiation over a fixed op vocabulary.

Every differentiable operation in the package is built from the functions in
this module.  Each op computes its value eagerly with numpy and records a
vector-Jacobian closure on the output tensor; ``backward`` replays those
closures in reverse topological order.  There is no graph compilation and no
implicit dtype promotion policy beyond numpy's: callers construct tensors
with an explicit dtype (float32 or float64) and keep it consistent.

All computation is deterministic: identical inputs on the same machine
produce bitwise-identical outputs and gradients.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DomainError, PermutationError, ShapeError

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)


def _check_float_dtype(dtype):
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"tensors must be float32 or float64, got {dtype}")


class Tensor:
    """N-d array plus the bookkeeping needed for reverse-mode gradients.

    data: numpy array, never mutated by ops (optimizers update leaf ``data``
        in place between tape constructions, which is safe because tapes do
        not outlive a forward/backward pair).
    grad: numpy array of the same shape, populated by ``backward``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None, op="leaf"):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        _check_float_dtype(arr.dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, requires_grad=False, op="detach")

    def backward(self):
        backward(self)

    # Operator sugar.  Python scalars are wrapped as constants of the same
    # dtype so mixed expressions never promote float32 to float64.

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype), op="const")

    def __add__(self, other):
        return add(self, self._coerce(other))

    def __radd__(self, other):
        return add(self._coerce(other), self)

    def __sub__(self, other):
        return add(self, neg(self._coerce(other)))

    def __rsub__(self, other):
        return add(self._coerce(other), neg(self))

    def __mul__(self, other):
        return mul(self, self._coerce(other))

    def __rmul__(self, other):
        return mul(self._coerce(other), self)

    def __truediv__(self, other):
        return mul(self, reciprocal(self._coerce(other)))

    def __rtruediv__(self, other):
        return mul(self._coerce(other), reciprocal(self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self.op!r}{flag})"


def tensor(data, dtype=None, requires_grad=False):
    """Wrap ``data`` as a leaf tensor, casting to ``dtype`` when given."""
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=requires_grad)


def zeros(shape, dtype=DEFAULT_DTYPE, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=DEFAULT_DTYPE, requires_grad=False):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def from_op(data, parents, vjp, op):
    """Build an op output tensor.

    ``vjp`` maps the upstream gradient array to a tuple of gradient arrays
    aligned with ``parents`` (``None`` for parents that need no gradient).
    Custom ops elsewhere in the package go through this same door, so the
    tape sees one uniform node format.
    """
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _vjp=vjp, op=op)
    return Tensor(data, requires_grad=False, op=op)


class Tape:
    """Execution-ordered record of the subgraph behind one tensor.

    ``nodes`` lists every tensor reachable from the output through parents
    that require gradients, with each node appearing exactly once and every
    parent appearing before its consumers.
    """

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def trace(cls, output):
        nodes = []
        seen = set()
        # Iterative post-order DFS: deep tapes (long scans) must not hit the
        # interpreter recursion limit.
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                nodes.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        return cls(nodes)

    def backward(self, output):
        output.grad = np.ones_like(output.data)
        for node in reversed(self.nodes):
            if node._vjp is None or node.grad is None:
                continue
            grads = node._vjp(node.grad)
            if len(grads) != len(node._parents):
                raise ContractError(
                    f"op {node.op!r} returned {len(grads)} gradients "
                    f"for {len(node._parents)} parents"
                )
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if g.shape != parent.data.shape:
                    raise ShapeError(
                        f"op {node.op!r} produced gradient of shape {g.shape} "
                        f"for parent of shape {parent.data.shape}"
                    )
                if parent.grad is None:
                    parent.grad = g.copy() if g.base is not None else g
                else:
                    parent.grad = parent.grad + g


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf.

    ``loss`` must hold exactly one scalar.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward target does not require gradients")
    Tape.trace(loss).backward(loss)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Binary ops


def matmul(a, b):
    """Matrix product with numpy batching rules on the leading axes."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return from_op(out, (a, b), vjp, "matmul")


def add(a, b):
    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return from_op(a.data + b.data, (a, b), vjp, "add")


def mul(a, b):
    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return from_op(a.data * b.data, (a, b), vjp, "mul")


# ---------------------------------------------------------------------------
# Unary elementwise ops


def neg(a):
    return from_op(-a.data, (a,), lambda g: (-g,), "neg")


def reciprocal(a):
    if (a.data == 0).any():
        raise DomainError("reciprocal of exact zero")
    out = 1.0 / a.data

    def vjp(g):
        return (-g * out * out,)

    return from_op(out, (a,), vjp, "reciprocal")


def exp(a):
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return from_op(out, (a,), vjp, "exp")


def softplus(a):
    # log(1 + e^x) evaluated as x + log1p(e^{-x}) once x is large, so the
    # exponential never overflows; logaddexp implements exactly that split.
    out = np.logaddexp(np.zeros((), dtype=a.dtype), a.data)

    def vjp(g):
        return (g * _sigmoid(a.data),)

    return from_op(out, (a,), vjp, "softplus")


def silu(a):
    s = _sigmoid(a.data)
    out = a.data * s

    def vjp(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return from_op(out, (a,), vjp, "silu")


_ELEMENTWISE = {
    "add": add,
    "mul": mul,
    "exp": exp,
    "softplus": softplus,
    "silu": silu,
    "neg": neg,
    "reciprocal": reciprocal,
}


def elementwise(op_kind, *args):
    """Dispatch an elementwise op by name.

    Binary kinds (add, mul) broadcast; the rest take a single tensor.
    """
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op_kind!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# Row indexing


def _check_permutation(perm, length):
    perm = np.asarray(perm)
    if perm.ndim != 1 or perm.shape[0] != length:
        raise PermutationError(f"index list of length {perm.shape} for {length} rows")
    if perm.size and (perm.min() < 0 or perm.max() >= length):
        raise PermutationError("index out of range for permutation")
    counts = np.bincount(perm, minlength=length)
    if (counts != 1).any():
        raise PermutationError("index list is not a permutation: repeats or gaps")
    return perm


def gather_rows(a, perm):
    """Reorder the leading axis: out[i] = a[perm[i]].  perm must be a permutation."""
    perm = _check_permutation(perm, a.shape[0])

    def vjp(g):
        gp = np.empty_like(g)
        gp[perm] = g
        return (gp,)

    return from_op(a.data[perm], (a,), vjp, "gather_rows")


def scatter_rows(a, perm):
    """Inverse reorder of the leading axis: out[perm[i]] = a[i]."""
    perm = _check_permutation(perm, a.shape[0])
    out = np.empty_like(a.data)
    out[perm] = a.data

    def vjp(g):
        return (g[perm],)

    return from_op(out, (a,), vjp, "scatter_rows")


def index_rows(a, idx):
    """General first-axis gather; indices may repeat or omit rows."""
    idx = np.asarray(idx)
    if idx.ndim != 1:
        raise ShapeError(f"index_rows needs a 1-d index list, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise PermutationError("row index out of range")

    def vjp(g):
        gp = np.zeros_like(a.data)
        np.add.at(gp, idx, g)
        return (gp,)

    return from_op(a.data[idx], (a,), vjp, "index_rows")


# ---------------------------------------------------------------------------
# Shape ops


def reshape(a, shape):
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return from_op(out, (a,), vjp, "reshape")


def flip(a, axis=0):
    def vjp(g):
        return (np.flip(g, axis=axis),)

    return from_op(np.flip(a.data, axis=axis), (a,), vjp, "flip")


def concat(tensors, axis=0):
    tensors = tuple(tensors)
    if not tensors:
        raise ContractError("concat of zero tensors")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return from_op(out, tensors, vjp, "concat")


def slice_axis(a, axis, start, stop):
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def vjp(g):
        gp = np.zeros_like(a.data)
        gp[index] = g
        return (gp,)

    return from_op(a.data[index], (a,), vjp, "slice_axis")


def repeat_interleave(a, reps, axis):
    """Repeat each slice along ``axis`` ``reps`` times, copies adjacent."""
    out = np.repeat(a.data, reps, axis=axis)

    def vjp(g):
        shape = a.shape[:axis + 1] + (reps,) + a.shape[axis + 1:]
        return (g.reshape(shape).sum(axis=axis + 1),)

    return from_op(out, (a,), vjp, "repeat_interleave")


# ---------------------------------------------------------------------------
# Reductions


def _expand_for_reduce(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def reduce_sum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        return (_expand_for_reduce(g, a.shape, axis, keepdims).copy(),)

    return from_op(out, (a,), vjp, "reduce_sum")


def reduce_mean(a, axis=None, keepdims=False):
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if a.data.size else 1
    if axis is not None:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))

    def vjp(g):
        return (_expand_for_reduce(g, a.shape, axis, keepdims) / count,)

    return from_op(out, (a,), vjp, "reduce_mean")


def reduce_max(a, axis, keepdims=False):
    """Max along one axis; ties share the upstream gradient equally."""
    out = a.data.max(axis=axis, keepdims=keepdims)

    def vjp(g):
        full = a.data.max(axis=axis, keepdims=True)
        mask = (a.data == full).astype(a.dtype)
        mask /= mask.sum(axis=axis, keepdims=True)
        return (mask * _expand_for_reduce(g, a.shape, axis, keepdims),)

    return from_op(out, (a,), vjp, "reduce_max")


# ---------------------------------------------------------------------------
# Fused layers with hand-derived adjoints


def rms_norm(a, weight, eps=1e-6):
    """Root-mean-square normalization over the last axis, scaled by ``weight``.

    out = a / sqrt(mean(a^2, -1) + eps) * weight
    """
    if weight.shape != a.shape[-1:]:
        raise ShapeError(f"rms_norm weight {weight.shape} for features {a.shape}")
    d = a.shape[-1]
    ms = np.mean(a.data * a.data, axis=-1, keepdims=True)
    r = 1.0 / np.sqrt(ms + eps)
    out = a.data * r * weight.data

    def vjp(g):
        gw_x = g * weight.data
        # d/dx of x_i * r: r on the diagonal, minus the coupling through r.
        dot = np.sum(gw_x * a.data, axis=-1, keepdims=True)
        ga = gw_x * r - a.data * (r ** 3) * dot / d
        gweight = np.sum(g * a.data * r, axis=tuple(range(a.ndim - 1)))
        return ga.astype(a.dtype, copy=False), gweight.astype(weight.dtype, copy=False)

    return from_op(out, (a, weight), vjp, "rms_norm")


def log_softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - logsum

    def vjp(g):
        soft = np.exp(out)
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return from_op(out, (a,), vjp, "log_softmax")
