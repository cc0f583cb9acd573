"""
Dense tensor substrate for the confidence lab
=============================================

64-bit tensors that record the operations applied to them so gradients can be
computed in reverse mode. Only the layer set used by the encoder-decoder model
is supported: matmul, elementwise add/mul, reshape/transpose, row gathers,
softmax, layer norm, GELU, sigmoid, dropout, and the two training losses.

Each op builds its result with ``_result`` and a closure mapping the output
gradient to one gradient per parent (``None`` when a parent needs none).
"""

import contextlib
import math
import threading
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import LossSupportError, ParameterError, ShapeError

ArrayLike = Union["Tensor", np.ndarray, Sequence[float], float]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

BCE_CLAMP = 1e-7
MASK_FILL = -1e9

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread"""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Tensor:
    """Row-major float64 array with an optional gradient slot"""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ParameterError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
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

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Propagate gradients to every reachable tensor that requires them"""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed gradient needs a single element, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} does not match tensor shape {self.shape}")

        pending = {id(self): grad}
        for node in reversed(self._topological_order()):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue
            if node._backward is None:
                node.grad = node_grad.copy() if node.grad is None else node.grad + node_grad
                continue
            node.grad = node_grad
            for parent, parent_grad in zip(node._parents, node._backward(node_grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
    out._parents = tuple(parents) if out.requires_grad else ()
    out._backward = backward if out.requires_grad else None
    return out


def _check_suffix_shapes(op: str, a: Tensor, b: Tensor) -> None:
    # broadcasting is limited to one operand being a trailing-dimension suffix of the other
    longer, shorter = (a.shape, b.shape) if a.data.ndim >= b.data.ndim else (b.shape, a.shape)
    if longer[len(longer) - len(shorter):] != shorter:
        raise ShapeError(f"{op} shape mismatch: {a.shape} and {b.shape}")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


# ==========================================
# ELEMENTWISE AND STRUCTURAL OPS
# ==========================================

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix_shapes("add", a, b)

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix_shapes("mul", a, b)

    def backward(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward)


def scale(x: ArrayLike, factor: float) -> Tensor:
    x = as_tensor(x)
    return _result(x.data * factor, (x,), lambda g: (g * factor,))


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    original = x.shape
    return _result(x.data.reshape(tuple(shape)), (x,), lambda g: (g.reshape(original),))


def transpose(x: ArrayLike, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    inverse = tuple(int(i) for i in np.argsort(axes))
    return _result(np.transpose(x.data, tuple(axes)), (x,), lambda g: (np.transpose(g, inverse),))


def take_rows(table: ArrayLike, indices: Sequence[int]) -> Tensor:
    """Gather rows of a 2-D table; used for embeddings and position slices"""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError(f"take_rows needs a 2-D table, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"row index out of range for table {table.shape}")

    def backward(g: np.ndarray):
        grad = np.zeros_like(table.data)
        np.add.at(grad, idx, g)
        return (grad,)

    return _result(table.data[idx], (table,), backward)


def sum_all(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def mean_all(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    n = max(x.size, 1)
    return _result(np.asarray(x.data.sum() / n), (x,), lambda g: (np.full(x.shape, float(g) / n),))


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product of [..., m, k] and [..., k, n] with identical leading dims"""
    a, b = as_tensor(a), as_tensor(b)
    if (
        a.data.ndim < 2
        or a.data.ndim != b.data.ndim
        or a.shape[-1] != b.shape[-2]
        or a.shape[:-2] != b.shape[:-2]
    ):
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g: np.ndarray):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _result(a.data @ b.data, (a, b), backward)


# ==========================================
# ACTIVATIONS AND NORMALIZATION
# ==========================================

def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.shape[axis] < 1:
        raise ShapeError(f"softmax over an empty axis of {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray):
        return (probs * (g - (g * probs).sum(axis=axis, keepdims=True)),)

    return _result(probs, (x,), backward)


def layer_norm(x: ArrayLike, gain: ArrayLike, bias: ArrayLike, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then apply gain and bias"""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    n = x.shape[-1]
    if n < 1:
        raise ShapeError("layer_norm over an empty axis")
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match last axis {n}")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std

    def backward(g: np.ndarray):
        d_normed = g * gain.data
        dx = (inv_std / n) * (
            n * d_normed
            - d_normed.sum(axis=-1, keepdims=True)
            - normed * (d_normed * normed).sum(axis=-1, keepdims=True)
        )
        return dx, _unbroadcast(g * normed, gain.shape), _unbroadcast(g, bias.shape)

    return _result(normed * gain.data + bias.data, (x, gain, bias), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: ArrayLike) -> Tensor:
    """Tanh-form GELU"""
    x = as_tensor(x)
    inner = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(inner)

    def backward(g: np.ndarray):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x.data ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t ** 2) * d_inner),)

    return _result(0.5 * x.data * (1.0 + t), (x,), backward)


_SIGMOID_LOW = np.finfo(np.float64).tiny
_SIGMOID_HIGH = 1.0 - np.finfo(np.float64).epsneg


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    z = np.exp(-np.abs(x.data))
    # split form keeps sigmoid(0) == 0.5 exactly; clipping keeps outputs inside (0, 1)
    probs = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    probs = np.clip(probs, _SIGMOID_LOW, _SIGMOID_HIGH)
    return _result(probs, (x,), lambda g: (g * probs * (1.0 - probs),))


def dropout(x: ArrayLike, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; the identity in eval mode"""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode needs an explicit random generator")
    multiplier = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _result(x.data * multiplier, (x,), lambda g: (g * multiplier,))


# ==========================================
# LOSSES
# ==========================================

def bce_loss(pred: ArrayLike, target: ArrayLike, mask: ArrayLike) -> Tensor:
    """Mean binary cross-entropy over the positions where mask is 1"""
    pred = as_tensor(pred)
    target_arr = np.asarray(as_tensor(target).data, dtype=np.float64)
    mask_arr = np.asarray(as_tensor(mask).data, dtype=np.float64)
    if not (pred.shape == target_arr.shape == mask_arr.shape):
        raise ShapeError(f"bce_loss shape mismatch: pred {pred.shape}, target {target_arr.shape}, mask {mask_arr.shape}")
    support = mask_arr > 0
    count = int(support.sum())
    if count == 0:
        raise LossSupportError("empty loss support")

    raw = pred.data[support]
    p = np.clip(raw, BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = target_arr[support]
    value = -(t * np.log(p) + (1.0 - t) * np.log1p(-p)).sum() / count

    def backward(g: np.ndarray):
        inside = (raw > BCE_CLAMP) & (raw < 1.0 - BCE_CLAMP)
        grad = np.zeros_like(pred.data)
        grad[support] = float(g) * inside * (-t / p + (1.0 - t) / (1.0 - p)) / count
        return (grad,)

    return _result(np.asarray(value), (pred,), backward)


def cross_entropy(logits: ArrayLike, targets: Sequence[int]) -> Tensor:
    """Mean token cross-entropy of [T x V] logits against T target ids"""
    logits = as_tensor(logits)
    idx = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or logits.shape[0] != idx.size:
        raise ShapeError(f"cross_entropy shape mismatch: logits {logits.shape}, {idx.size} targets")
    if idx.size == 0:
        raise LossSupportError("empty loss support")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(idx.size)
    value = -log_probs[rows, idx].sum() / idx.size

    def backward(g: np.ndarray):
        grad = np.exp(log_probs)
        grad[rows, idx] -= 1.0
        return (grad * (float(g) / idx.size),)

    return _result(np.asarray(value), (logits,), backward)
