"""Dense float64 tensors with reverse-mode automatic differentiation.

Every tensor gets a node id from a process-wide counter at construction, so a
parent always has a smaller id than any tensor computed from it.  ``backward``
collects the nodes reachable from a scalar loss and visits them in decreasing
id order, which is a reverse topological order of the graph.

Broadcasting is deliberately limited: elementwise ops accept two tensors of the
same shape, or a tensor and a scalar.  Anything else goes through ``expand``.
"""

import itertools
from contextlib import contextmanager

import numpy as np


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


_node_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Build tensors without recording graph edges."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node_id", "op", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node_id = next(_node_ids)
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    @classmethod
    def _result(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        data = np.asarray(data, dtype=np.float64)
        data.flags.writeable = False
        out.data = data
        out.grad = None
        out.node_id = next(_node_ids)
        out.op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op!r})"

    def __len__(self):
        return self.shape[0]

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, other: matmul(self, other)
    __getitem__ = lambda self, idx: slice_(self, idx)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by python scalars")
        return scalar_mul(self, 1.0 / other)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    # only scalar-vs-tensor broadcasting exists, so a 0-d operand sums everything
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


def _check_elementwise(a, b, op):
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# -- elementwise -----------------------------------------------------------------


def add(a, b):
    a, b = _lift(a), _lift(b)
    _check_elementwise(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = _lift(a), _lift(b)
    _check_elementwise(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _lift(a), _lift(b)
    _check_elementwise(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(a.data * b.data, (a, b), backward, "mul")


def scalar_mul(a, c):
    c = float(c)

    def backward(g):
        return (g * c,)

    return Tensor._result(a.data * c, (a,), backward, "scalar_mul")


def neg(a):
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a):
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor._result(np.where(mask, a.data, 0.0), (a,), backward, "relu")


def exp(a):
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return Tensor._result(out, (a,), backward, "exp")


def log(a):
    if np.any(a.data <= 0):
        raise DomainError("log: input must be strictly positive")

    def backward(g):
        return (g / a.data,)

    return Tensor._result(np.log(a.data), (a,), backward, "log")


def elementwise(op, *args):
    """Dispatch by name: add, sub, mul, relu, exp, log, neg."""
    table = {"add": add, "sub": sub, "mul": mul, "relu": relu, "exp": exp, "log": log, "neg": neg}
    if op not in table:
        raise ParameterError(f"unknown elementwise op {op!r}")
    return table[op](*[_lift(x) for x in args])


# -- linear algebra --------------------------------------------------------------


def matmul(a, b):
    """``a[..., m, k] @ b[..., k, n]``; leading dims must match, or ``b`` is 2-D."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    shared = b.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dims differ in {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if shared:
            k = a.shape[-1]
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return Tensor._result(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a, axes=None):
    if axes is None:
        if a.ndim < 2:
            raise DimensionError(f"transpose: need at least 2 dims, got {a.shape}")
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return Tensor._result(np.transpose(a.data, axes), (a,), backward, "transpose")


def reshape(a, shape):
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from exc
    src = a.shape

    def backward(g):
        return (g.reshape(src),)

    return Tensor._result(out, (a,), backward, "reshape")


def expand(a, shape):
    """Explicit broadcast of ``a`` to ``shape`` (numpy rules); gradient sums back."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise DimensionError(f"expand: cannot broadcast {a.shape} to {shape}") from exc
    src = a.shape
    lead = len(shape) - len(src)

    def backward(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(src) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return Tensor._result(out, (a,), backward, "expand")


def _fancy(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def slice_(a, idx):
    out = a.data[idx]
    fancy = _fancy(idx)

    def backward(g):
        full = np.zeros(a.shape)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return Tensor._result(np.array(out), (a,), backward, "slice")


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: no tensors given")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes} on axis {axis}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(out, tuple(tensors), backward, "concat")


def stack(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    expanded = []
    for t in tensors:
        ax = axis if axis >= 0 else t.ndim + 1 + axis
        expanded.append(reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]))
    return concat(expanded, axis=axis)


# -- reductions ------------------------------------------------------------------


def sum_(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)
    src = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src),)

    return Tensor._result(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return scalar_mul(sum_(a, axis, keepdims), 1.0 / count)


# -- softmax family --------------------------------------------------------------


def _check_temperature(t):
    if not t > 0:
        raise ParameterError(f"temperature must be positive, got {t}")


def softmax_t(logits, t=1.0):
    """Row-wise ``exp(z/t) / sum exp(z/t)`` over the last axis."""
    _check_temperature(t)
    z = logits.data / t
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return ((y * (g - (g * y).sum(axis=-1, keepdims=True))) / t,)

    return Tensor._result(y, (logits,), backward, "softmax_t")


def log_softmax_t(logits, t=1.0):
    _check_temperature(t)
    z = logits.data / t
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    y = np.exp(out)

    def backward(g):
        return ((g - y * g.sum(axis=-1, keepdims=True)) / t,)

    return Tensor._result(out, (logits,), backward, "log_softmax_t")


def softmax(logits, axis=-1):
    if axis not in (-1, logits.ndim - 1):
        raise ParameterError("softmax only supports the last axis")
    return softmax_t(logits, 1.0)


# -- backward --------------------------------------------------------------------


def _reachable(loss):
    seen = {loss.node_id: loss}
    stack_ = [loss]
    while stack_:
        node = stack_.pop()
        for p in node._parents:
            if p.node_id not in seen:
                seen[p.node_id] = p
                stack_.append(p)
    return seen


def backward(loss, inputs=None):
    """Reverse pass from a scalar ``loss``.

    Sets ``.grad`` on every reachable leaf that requires grad.  When ``inputs``
    is given, returns their gradients as a list, zero for leaves the loss does
    not depend on; otherwise returns a dict mapping node id to gradient.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    nodes = _reachable(loss)
    grads = {loss.node_id: np.ones(loss.shape)}
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        g = grads.get(nid)
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = np.array(pg, dtype=np.float64)
    for nid, node in nodes.items():
        if node._backward is None and node.requires_grad:
            node.grad = grads.get(nid, np.zeros(node.shape))
    if inputs is None:
        return grads
    out = []
    for x in inputs:
        g = grads.get(x.node_id) if x.node_id in nodes else None
        g = np.zeros(x.shape) if g is None else g
        x.grad = g
        out.append(g)
    return out
