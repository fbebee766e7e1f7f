"""Layers, losses, the Adam optimizer and the cosine learning-rate schedule."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import DimensionError, ParameterError, Tensor

EPS = 1e-7


class EmptySourceError(ValueError):
    pass


class StateError(ValueError):
    pass


class LabelError(ValueError):
    pass


def derive_seed(*keys):
    """Stable 32-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


class Module:
    """Minimal parameter container; parameters are found in attribute order."""

    def named_parameters(self, prefix=""):
        out = []
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((full, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(full + "."))
            elif isinstance(value, dict):
                for key in value:
                    item = value[key]
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{full}.{key}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out.append((f"{full}.{key}", item))
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{full}.{i}."))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing = sorted(set(params) ^ set(state))
            raise StateError(f"parameter names differ: {missing[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise StateError(f"{name}: shape {arr.shape} != {p.shape}")
            _assign(p, arr)


def _assign(param, arr):
    arr = np.array(arr, dtype=np.float64)
    arr.flags.writeable = False
    param.data = arr


class Linear(Module):
    def __init__(self, in_dim, out_dim, init_seed=0):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.init_seed = init_seed
        rng = np.random.default_rng(init_seed)
        # unit-variance (LeCun) uniform weights, zero bias: activations keep their scale
        # through the stacked projections instead of vanishing into a long initial plateau
        bound = math.sqrt(3.0 / in_dim)
        self.weight = Tensor(rng.uniform(-bound, bound, (out_dim, in_dim)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x):
        return linear_forward(self, x)


def linear_forward(layer, x):
    """``x @ W.T + b`` over the last axis of ``x``."""
    if x.shape[-1] != layer.in_dim:
        raise DimensionError(f"linear: input dim {x.shape[-1]} != {layer.in_dim}")
    if x.ndim == 1:
        return linear_forward(layer, T.reshape(x, (1, -1))).reshape(layer.out_dim)
    y = T.matmul(x, T.transpose(layer.weight))
    return y + T.expand(layer.bias, y.shape)


class MLP(Module):
    """Linear layers with ReLU between them (none after the last)."""

    def __init__(self, dims, seed=0):
        self.dims = tuple(dims)
        self.layers = [Linear(a, b, derive_seed(seed, i)) for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x


class AttentionBlock(Module):
    def __init__(self, dim, mode="cross", seed=0):
        if mode not in ("self", "cross"):
            raise ParameterError(f"attention mode must be 'self' or 'cross', got {mode!r}")
        self.dim = dim
        self.mode = mode
        self.query = Linear(dim, dim, derive_seed(seed, 0))
        self.key = Linear(dim, dim, derive_seed(seed, 1))
        self.value = Linear(dim, dim, derive_seed(seed, 2))

    def __call__(self, q, kv=None, return_weights=False):
        if kv is None:
            kv = q
        return scaled_dot_attention(self, q, kv, return_weights)


def scaled_dot_attention(block, q, kv, return_weights=False):
    """softmax(Q K^T / sqrt(d)) V with the block's projections.

    ``q`` is ``[..., Lq, d]`` and ``kv`` is ``[..., S, d]`` with equal leading dims.
    """
    if kv.shape[-2] == 0:
        raise EmptySourceError("attention over an empty source set")
    Q = block.query(q)
    K = block.key(kv)
    V = block.value(kv)
    scores = T.scalar_mul(T.matmul(Q, T.transpose(K)), 1.0 / math.sqrt(block.dim))
    weights = T.softmax_t(scores, 1.0)
    out = T.matmul(weights, V)
    return (out, weights) if return_weights else out


# -- losses ----------------------------------------------------------------------


def bce_loss(p, y):
    """Mean binary cross-entropy of probabilities ``p`` against 0/1 labels."""
    y = np.asarray(y, dtype=np.float64).reshape(p.shape)
    if np.any((y != 0) & (y != 1)):
        raise LabelError("bce labels must be 0 or 1")
    clipped = np.clip(p.data, EPS, 1.0 - EPS)
    # clamp without cutting the gradient path for in-range values
    pc = p + Tensor(clipped - p.data)
    terms = T.mul(Tensor(y), T.log(pc)) + T.mul(Tensor(1.0 - y), T.log(1.0 - pc))
    return -T.mean(terms)


def _one_hot(y, classes):
    y = np.asarray(y)
    if y.size and (y.min() < 0 or y.max() >= classes or not np.issubdtype(y.dtype, np.integer)):
        raise LabelError(f"class indices must be integers in [0, {classes})")
    return np.eye(classes)[y]


def ce_loss(logits, y):
    """Mean softmax cross-entropy over every prediction site."""
    onehot = _one_hot(y, logits.shape[-1])
    if onehot.shape != logits.shape:
        raise DimensionError(f"ce: labels {np.shape(y)} do not match logits {logits.shape}")
    logp = T.log_softmax_t(logits, 1.0)
    sites = logits.size // logits.shape[-1]
    return T.scalar_mul(T.sum_(T.mul(Tensor(onehot), logp)), -1.0 / sites)


def kd_loss(student_logits, teacher_logits, t):
    """Cross-entropy of the student's softened distribution under the teacher's.

    Both sides use temperature ``t``; summed over classes, averaged over sites.
    """
    if not t > 0:
        raise ParameterError(f"temperature must be positive, got {t}")
    if student_logits.shape != teacher_logits.shape:
        raise DimensionError(f"kd: shapes {student_logits.shape} and {teacher_logits.shape} differ")
    teacher = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits)
    with T.no_grad():
        soft = T.softmax_t(Tensor(teacher), t).data
    logq = T.log_softmax_t(student_logits, t)
    sites = student_logits.size // student_logits.shape[-1]
    return T.scalar_mul(T.sum_(T.mul(Tensor(soft), logq)), -1.0 / sites)


@dataclass(frozen=True)
class DistillConfig:
    alpha: float = 0.9
    temperature: float = 4.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.temperature > 0:
            raise ParameterError(f"temperature must be positive, got {self.temperature}")


def student_loss(task_loss, kd, cfg):
    """(1 - alpha) * task + alpha * t^2 * kd."""
    w_task = 1.0 - cfg.alpha
    w_kd = cfg.alpha * cfg.temperature ** 2
    if isinstance(task_loss, Tensor) or isinstance(kd, Tensor):
        return T.scalar_mul(T._lift(task_loss), w_task) + T.scalar_mul(T._lift(kd), w_kd)
    return w_task * task_loss + w_kd * kd


# -- optimisation ----------------------------------------------------------------


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw):
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params], 0, **kw)


def adam_step(params, grads, state, lr):
    """One Adam update, writing new arrays into ``params`` and advancing ``state``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise StateError("params, grads and optimizer state have different lengths")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise StateError(f"shape mismatch for parameter {i}: {p.shape}, grad {g.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        if lr == 0:
            continue
        update = lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps)
        _assign(p, p.data - update)
    return params, state


def cosine_lr(step, total_steps, lr0):
    if total_steps <= 0 or not 0 <= step <= total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0
