"""
Reverse-mode differentiable numerical core built on numpy.

Every layer the trajectory models use lives here: Tensor graph ops with
hand-written backward rules, Module/Parameter bookkeeping, the Adam
optimizer and a finite-difference gradient checker.
"""

import contextlib
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ConfigurationError, DimensionError, InvalidMaskError, LabelIndexError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32
LAYER_NORM_EPSILON = 1e-5

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Run forward passes without recording the graph."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ('data', 'grad', 'requires_grad', '_parents', '_backward')

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        array = np.asarray(data, dtype=dtype)
        if array.dtype.kind != 'f':
            array = array.astype(DEFAULT_DTYPE)
        self.data = array
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self, grad: Optional[np.ndarray] = None):
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        pending = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(_topological_order(self)):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.array(node_grad, dtype=node.dtype, copy=True)
                else:
                    node.grad = node.grad + node_grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(node_grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pending[key] + parent_grad if key in pending else parent_grad

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self)))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise DimensionError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)


def _topological_order(root: Tensor) -> List[Tensor]:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(value, dtype=dtype))


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], backward: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    original = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),))


def index(a: Tensor, key) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _result(a.data[key], (a,), backward)


def take_rows(table: Tensor, indices) -> Tensor:
    """Gather rows of a 2D table; the embedding lookup."""
    indices = np.asarray(indices, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, indices, g)
        return (full,)

    return _result(table.data[indices], (table,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not chain")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    axis = axis % tensors[0].ndim
    boundaries = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, boundaries, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def relu(x: Tensor) -> Tensor:
    """max(0, x) with subgradient 0 at 0."""
    active = x.data > 0
    return _result(np.where(active, x.data, 0).astype(x.dtype), (x,), lambda g: (g * active,))


def sigmoid(x: Tensor) -> Tensor:
    out = (0.5 * (1.0 + np.tanh(0.5 * x.data))).astype(x.dtype)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),))


def log(x: Tensor) -> Tensor:
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


# ---------------------------------------------------------------------------
# Layers as functions
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map along the last axis: x @ weight + bias, weight shaped (in, out)."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input shape {x.shape} does not match weight shape {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias shape {bias.shape} does not match weight shape {weight.shape}")
    flat = x.data.reshape(-1, weight.shape[0])
    out = flat @ weight.data
    if bias is not None:
        out = out + bias.data
    out = out.reshape(x.shape[:-1] + (weight.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        grad_x = (g2 @ weight.data.T).reshape(x.shape)
        grad_w = flat.T @ g2
        grad_b = g2.sum(axis=0) if bias is not None else None
        return grad_x, grad_w, grad_b

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _result(out, parents, backward)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, epsilon: float = LAYER_NORM_EPSILON) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(variance + epsilon)
    normalized = centered * inv_std
    out = normalized * gain.data + shift.data

    def backward(g):
        grad_gain = (g * normalized).reshape(-1, x.shape[-1]).sum(axis=0)
        grad_shift = g.reshape(-1, x.shape[-1]).sum(axis=0)
        g_norm = g * gain.data
        grad_x = inv_std * (
            g_norm
            - g_norm.mean(axis=-1, keepdims=True)
            - normalized * (g_norm * normalized).mean(axis=-1, keepdims=True)
        )
        return grad_x, grad_gain, grad_shift

    return _result(out.astype(x.dtype), (x, gain, shift), backward)


def masked_softmax_array(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over allowed entries only; denied entries come out exactly 0."""
    mask = np.broadcast_to(mask, logits.shape)
    if not np.all(np.any(mask, axis=-1)):
        raise InvalidMaskError("masked_softmax: a row has no allowed entries")
    shifted = np.where(mask, logits, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=-1, keepdims=True)


def softmax_array(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=-1, keepdims=True)


def log_softmax_array(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _softmax_backward(probabilities: np.ndarray, g: np.ndarray) -> np.ndarray:
    return probabilities * (g - (g * probabilities).sum(axis=-1, keepdims=True))


def masked_softmax(logits: Tensor, mask: np.ndarray) -> Tensor:
    probabilities = masked_softmax_array(logits.data, np.asarray(mask, dtype=bool))
    return _result(probabilities, (logits,), lambda g: (_softmax_backward(probabilities, g),))


def softmax(logits: Tensor) -> Tensor:
    probabilities = softmax_array(logits.data)
    return _result(probabilities, (logits,), lambda g: (_softmax_backward(probabilities, g),))


def log_softmax(logits: Tensor) -> Tensor:
    out = log_softmax_array(logits.data)

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _result(out, (logits,), backward)


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray,
                                 heads: int) -> Tuple[Tensor, np.ndarray]:
    """Multi-head attention core over S tokens; returns (output [S, d], weights [heads, S, S])."""
    S, d_model = q.shape
    head_dim = d_model // heads
    scale = 1.0 / math.sqrt(head_dim)

    def split(a):
        return a.reshape(S, heads, head_dim).transpose(1, 0, 2)

    q_h, k_h, v_h = split(q.data), split(k.data), split(v.data)
    scores = (q_h @ k_h.transpose(0, 2, 1)) * scale
    weights = masked_softmax_array(scores, mask[np.newaxis, :, :])
    out = (weights @ v_h).transpose(1, 0, 2).reshape(S, d_model)

    def backward(g):
        g_h = split(g)
        grad_weights = g_h @ v_h.transpose(0, 2, 1)
        grad_v = weights.transpose(0, 2, 1) @ g_h
        grad_scores = _softmax_backward(weights, grad_weights) * scale
        grad_q = grad_scores @ k_h
        grad_k = grad_scores.transpose(0, 2, 1) @ q_h

        def merge(a):
            return a.transpose(1, 0, 2).reshape(S, d_model)

        return merge(grad_q), merge(grad_k), merge(grad_v)

    return _result(out.astype(q.dtype), (q, k, v), backward), weights


def multi_head_attention(x: Tensor, mask: np.ndarray, attention: 'MultiHeadAttention',
                         return_weights: bool = False):
    """Scaled dot-product self-attention of x [S, d_model] under a boolean [S, S] mask."""
    return attention(x, mask, return_weights=return_weights)


def cross_entropy_nll(probabilities: Tensor, label) -> Tensor:
    """-ln p[label], summed when several rows and labels are given."""
    labels = np.asarray(label, dtype=np.int64)
    label_count = probabilities.shape[-1]
    if np.any(labels < 0) or np.any(labels >= label_count):
        raise LabelIndexError(f"label {label} outside [0, {label_count})")
    rows = probabilities.data.reshape(-1, label_count)
    flat_labels = labels.reshape(-1)
    if flat_labels.size != rows.shape[0]:
        raise DimensionError(f"cross_entropy_nll: {flat_labels.size} labels for {rows.shape[0]} rows")
    picked = rows[np.arange(rows.shape[0]), flat_labels]
    value = np.asarray(-np.log(picked).sum(), dtype=probabilities.dtype)

    def backward(g):
        grad = np.zeros_like(rows)
        grad[np.arange(rows.shape[0]), flat_labels] = -g / picked
        return (grad.reshape(probabilities.shape),)

    return _result(value, (probabilities,), backward)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Summed NLL of integer labels under softmax(logits); logits shaped [N, L]."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n_rows, label_count = logits.shape
    if labels.size != n_rows:
        raise DimensionError(f"softmax_cross_entropy: {labels.size} labels for {n_rows} rows")
    if np.any(labels < 0) or np.any(labels >= label_count):
        raise LabelIndexError(f"labels outside [0, {label_count})")
    log_probabilities = log_softmax_array(logits.data)
    rows = np.arange(n_rows)
    value = np.asarray(-log_probabilities[rows, labels].sum(), dtype=logits.dtype)

    def backward(g):
        grad = np.exp(log_probabilities)
        grad[rows, labels] -= 1.0
        return (grad * g,)

    return _result(value, (logits,), backward)


# ---------------------------------------------------------------------------
# Parameters and modules
# ---------------------------------------------------------------------------

class Parameter(Tensor):
    __slots__ = ('trainable',)

    def __init__(self, data, trainable: bool = True, dtype=None):
        super().__init__(np.array(data, dtype=dtype, copy=True), requires_grad=trainable)
        self.trainable = trainable

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


def init_uniform(rng: np.random.Generator, fan_in: int, shape: Tuple[int, ...], dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_embedding(rng: np.random.Generator, count: int, dim: int, dtype) -> np.ndarray:
    return (rng.standard_normal((count, dim)) / math.sqrt(dim)).astype(dtype)


class Module:
    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Parameter]]:
        seen = set()
        for name, param in self._walk(prefix):
            if id(param) not in seen:
                seen.add(id(param))
                yield name, param

    def _walk(self, prefix: str):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value._walk(path + '.')
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        yield f"{path}.{i}", item
                    elif isinstance(item, Module):
                        yield from item._walk(f"{path}.{i}.")

    def parameters(self) -> List[Parameter]:
        """Parameters in declaration order."""
        return [param for _, param in self.named_parameters()]

    def zero_grad(self):
        for param in self.parameters():
            param.zero_grad()


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype=DEFAULT_DTYPE, bias: bool = True):
        self.weight = Parameter(init_uniform(rng, in_features, (in_features, out_features), dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=DEFAULT_DTYPE, epsilon: float = LAYER_NORM_EPSILON):
        self.gain = Parameter(np.ones(dim, dtype=dtype))
        self.shift = Parameter(np.zeros(dim, dtype=dtype))
        self.epsilon = epsilon

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.shift, self.epsilon)


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        self.table = Parameter(init_embedding(rng, count, dim, dtype))

    @property
    def count(self) -> int:
        return self.table.shape[0]

    def forward(self, indices) -> Tensor:
        return take_rows(self.table, indices)


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, heads: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        if heads < 1 or d_model % heads != 0:
            raise ConfigurationError(f"d_model={d_model} is not divisible by heads={heads}")
        self.heads = heads
        self.query = Linear(d_model, d_model, rng, dtype)
        self.key = Linear(d_model, d_model, rng, dtype)
        self.value = Linear(d_model, d_model, rng, dtype)
        self.output = Linear(d_model, d_model, rng, dtype)

    def forward(self, x: Tensor, mask: np.ndarray, return_weights: bool = False):
        S = x.shape[0]
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (S, S):
            raise DimensionError(f"attention mask shape {mask.shape} does not match {S} tokens")
        attended, weights = scaled_dot_product_attention(
            self.query(x), self.key(x), self.value(x), mask, self.heads)
        out = self.output(attended)
        return (out, weights) if return_weights else out


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    lr: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-9

    @classmethod
    def like(cls, value: np.ndarray, **hyper) -> 'AdamState':
        return cls(np.zeros_like(value), np.zeros_like(value), **hyper)


def adam_step(value: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update, applied to `value` in place."""
    if grad.shape != value.shape or state.first_moment.shape != value.shape:
        raise DimensionError(f"adam_step: gradient {grad.shape} / value {value.shape} mismatch")
    state.step += 1
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * grad
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * grad * grad
    m_hat = state.first_moment / (1.0 - state.beta1 ** state.step)
    v_hat = state.second_moment / (1.0 - state.beta2 ** state.step)
    value -= (state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(value.dtype)
    return value


class Adam:
    def __init__(self, parameters: Sequence[Parameter], lr: float = 1e-6, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-9):
        self.parameters = [p for p in parameters if p.trainable]
        self.states = [AdamState.like(p.data, lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)
                       for p in self.parameters]
        self._lr = lr

    @property
    def lr(self) -> float:
        return self._lr

    @lr.setter
    def lr(self, value: float):
        self._lr = value
        for state in self.states:
            state.lr = value

    def zero_grad(self):
        for param in self.parameters:
            param.zero_grad()

    def step(self):
        for param, state in zip(self.parameters, self.states):
            if param.grad is None:
                continue
            adam_step(param.data, param.grad, state)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_relative_error: float
    max_absolute_error: float
    checked: int
    worst_coordinate: str

    def passed(self, tolerance: float) -> bool:
        return self.max_relative_error < tolerance


def grad_check(loss_fn: Callable[[], Tensor], parameters: Sequence[Parameter], coordinates: int = 200,
               epsilon: float = 1e-6, rng: Optional[np.random.Generator] = None,
               precision=np.float64, absolute_floor: float = 1e-5) -> GradCheckReport:
    """
    Compare reverse-mode gradients with central finite differences on a random
    subset of parameter coordinates. Relative error is
    |analytic - numeric| / max(|analytic|, |numeric|, absolute_floor).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    parameters = list(parameters)
    original_dtypes = [p.data.dtype for p in parameters]
    if precision is not None:
        for param in parameters:
            param.data = param.data.astype(precision)

    try:
        for param in parameters:
            param.zero_grad()
        loss_fn().backward()
        analytic = [param.grad.copy() for param in parameters]

        sizes = np.array([param.data.size for param in parameters])
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        total = int(offsets[-1])
        chosen = rng.choice(total, size=min(coordinates, total), replace=False)

        worst_rel, worst_abs, worst_name = 0.0, 0.0, ''
        for flat_index in np.sort(chosen):
            owner = int(np.searchsorted(offsets, flat_index, side='right') - 1)
            local = int(flat_index - offsets[owner])
            param = parameters[owner]
            original = param.data.flat[local]
            with no_grad():
                param.data.flat[local] = original + epsilon
                loss_plus = float(loss_fn().data)
                param.data.flat[local] = original - epsilon
                loss_minus = float(loss_fn().data)
            param.data.flat[local] = original
            numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
            exact = float(analytic[owner].flat[local])
            abs_error = abs(exact - numeric)
            rel_error = abs_error / max(abs(exact), abs(numeric), absolute_floor)
            worst_abs = max(worst_abs, abs_error)
            if rel_error > worst_rel:
                worst_rel, worst_name = rel_error, f"param[{owner}].flat[{local}]"
    finally:
        for param, dtype in zip(parameters, original_dtypes):
            param.data = param.data.astype(dtype)
            param.grad = None

    logger.debug(f"grad_check: {len(chosen)} coordinates, max relative error {worst_rel:.3e}")
    return GradCheckReport(worst_rel, worst_abs, int(len(chosen)), worst_name)
