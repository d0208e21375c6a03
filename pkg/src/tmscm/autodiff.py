"""Minimal reverse-mode differentiation over numpy arrays.

Tensors record an operation graph as they are combined; backward() walks
it in reverse topological order and accumulates adjoints. The dispatching
helpers (exp, tanh, matmul, ...) accept either Tensors or plain arrays,
so model code is written once and runs with or without gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit
from scipy.special import logsumexp as np_logsumexp

from .errors import NotScalar, ShapeMismatch


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tensor:
    """A node in the operation graph: value buffer plus adjoint buffer."""

    __slots__ = ("value", "grad", "_parents", "_bwd")

    def __init__(self, value, parents=(), bwd=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._bwd = bwd

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.value + other.value, (self, other))

        def bwd():
            self.grad += _unbroadcast(out.grad, self.value.shape)
            other.grad += _unbroadcast(out.grad, other.value.shape)

        out._bwd = bwd
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.value, (self,))

        def bwd():
            self.grad += -out.grad

        out._bwd = bwd
        return out

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.value * other.value, (self, other))

        def bwd():
            self.grad += _unbroadcast(out.grad * other.value, self.value.shape)
            other.grad += _unbroadcast(out.grad * self.value, other.value.shape)

        out._bwd = bwd
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.value / other.value, (self, other))

        def bwd():
            self.grad += _unbroadcast(out.grad / other.value, self.value.shape)
            other.grad += _unbroadcast(
                -out.grad * self.value / (other.value * other.value),
                other.value.shape,
            )

        out._bwd = bwd
        return out

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __pow__(self, p):
        assert isinstance(p, (int, float)), "only constant powers"
        out = Tensor(self.value**p, (self,))

        def bwd():
            self.grad += out.grad * p * self.value ** (p - 1)

        out._bwd = bwd
        return out

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.value @ other.value, (self, other))

        def bwd():
            self.grad += out.grad @ other.value.T
            other.grad += self.value.T @ out.grad

        out._bwd = bwd
        return out

    def __getitem__(self, idx):
        out = Tensor(self.value[idx], (self,))

        def bwd():
            np.add.at(self.grad, idx, out.grad)

        out._bwd = bwd
        return out

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        out = Tensor(self.value.reshape(shape), (self,))

        def bwd():
            self.grad += out.grad.reshape(self.value.shape)

        out._bwd = bwd
        return out

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.value.sum(axis=axis, keepdims=keepdims), (self,))

        def bwd():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self.grad += np.broadcast_to(g, self.value.shape)

        out._bwd = bwd
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def backward(loss: Tensor) -> None:
    """Reverse pass from a scalar output; fills .grad over the whole graph."""
    if loss.value.size != 1:
        raise NotScalar(f"backward needs a scalar output, got shape {loss.value.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    for node in topo:
        node.grad = np.zeros_like(node.value)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(topo):
        if node._bwd is not None:
            node._bwd()


def grad(loss: Tensor, inputs: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar loss with respect to input leaves.

    Inputs disconnected from the loss get zero gradients.
    """
    backward(loss)
    return [
        inp.grad.copy() if inp.grad is not None else np.zeros_like(inp.value)
        for inp in inputs
    ]


# -- dispatching elementwise and reduction helpers ------------------------------

def exp(x):
    if not isinstance(x, Tensor):
        return np.exp(x)
    out = Tensor(np.exp(x.value), (x,))

    def bwd():
        x.grad += out.grad * out.value

    out._bwd = bwd
    return out


def log(x):
    if not isinstance(x, Tensor):
        return np.log(x)
    out = Tensor(np.log(x.value), (x,))

    def bwd():
        x.grad += out.grad / x.value

    out._bwd = bwd
    return out


def sqrt(x):
    if not isinstance(x, Tensor):
        return np.sqrt(x)
    return x**0.5


def tanh(x):
    if not isinstance(x, Tensor):
        return np.tanh(x)
    out = Tensor(np.tanh(x.value), (x,))

    def bwd():
        x.grad += out.grad * (1.0 - out.value * out.value)

    out._bwd = bwd
    return out


def sigmoid(x):
    if not isinstance(x, Tensor):
        return expit(x)
    out = Tensor(expit(x.value), (x,))

    def bwd():
        x.grad += out.grad * out.value * (1.0 - out.value)

    out._bwd = bwd
    return out


def softplus(x):
    if not isinstance(x, Tensor):
        return np.logaddexp(0.0, x)
    out = Tensor(np.logaddexp(0.0, x.value), (x,))

    def bwd():
        x.grad += out.grad * expit(x.value)

    out._bwd = bwd
    return out


def logsumexp(x, axis: int = -1):
    if not isinstance(x, Tensor):
        return np_logsumexp(x, axis=axis)
    out_val = np_logsumexp(x.value, axis=axis)
    out = Tensor(out_val, (x,))

    def bwd():
        expanded = np.expand_dims(out.value, axis)
        soft = np.exp(x.value - expanded)
        x.grad += soft * np.expand_dims(out.grad, axis)

    out._bwd = bwd
    return out


def matmul(a, b):
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        a = a if isinstance(a, Tensor) else Tensor(a)
        return a @ b
    return a @ b


def concat(parts, axis: int = -1):
    if not any(isinstance(p, Tensor) for p in parts):
        return np.concatenate(parts, axis=axis)
    parts = [p if isinstance(p, Tensor) else Tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.value for p in parts], axis=axis), tuple(parts))
    sizes = [p.value.shape[axis] for p in parts]

    def bwd():
        splits = np.cumsum(sizes)[:-1]
        for p, g in zip(parts, np.split(out.grad, splits, axis=axis)):
            p.grad += g

    out._bwd = bwd
    return out


def sum_(x, axis=None, keepdims=False):
    if isinstance(x, Tensor):
        return x.sum(axis=axis, keepdims=keepdims)
    return np.sum(x, axis=axis, keepdims=keepdims)


def mean_(x, axis=None, keepdims=False):
    if isinstance(x, Tensor):
        return x.mean(axis=axis, keepdims=keepdims)
    return np.mean(x, axis=axis, keepdims=keepdims)


def as_array(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


# -- parameters, MLPs, optimizer -------------------------------------------------

class ParamStore:
    """Named parameter slices of one flat float64 vector."""

    def __init__(self):
        self._shapes: dict[str, tuple[int, ...]] = {}
        self._offsets: dict[str, int] = {}
        self._inits: list[np.ndarray] = []
        self._size = 0

    def add(self, name: str, init: np.ndarray) -> str:
        if name in self._shapes:
            raise ValueError(f"duplicate parameter name {name!r}")
        init = np.asarray(init, dtype=np.float64)
        self._shapes[name] = init.shape
        self._offsets[name] = self._size
        self._inits.append(init.ravel())
        self._size += init.size
        return name

    @property
    def n_params(self) -> int:
        return self._size

    def init_flat(self) -> np.ndarray:
        if not self._inits:
            return np.zeros(0)
        return np.concatenate(self._inits)

    def _view(self, flat: np.ndarray, name: str) -> np.ndarray:
        off = self._offsets[name]
        shape = self._shapes[name]
        return flat[off : off + int(np.prod(shape))].reshape(shape)

    def raw(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        """Plain array views for gradient-free evaluation."""
        return {name: self._view(flat, name) for name in self._shapes}

    def leaves(self, flat: np.ndarray) -> dict[str, Tensor]:
        """Fresh leaf Tensors; build one set per recorded computation."""
        return {name: Tensor(self._view(flat, name)) for name in self._shapes}

    def collect_grads(self, leaves: dict[str, Tensor]) -> np.ndarray:
        out = np.zeros(self._size)
        for name, leaf in leaves.items():
            off = self._offsets[name]
            g = leaf.grad
            if g is not None:
                out[off : off + leaf.value.size] = g.ravel()
        return out


class Mlp:
    """Tanh hidden layers, linear output; parameters registered in a store.

    Glorot-uniform weights; zero_last zeroes the output layer so parameter-
    producing networks start at the identity transform.
    """

    def __init__(
        self,
        store: ParamStore,
        name: str,
        sizes: Sequence[int],
        rng: np.random.Generator,
        zero_last: bool = False,
    ):
        self.name = name
        self.sizes = tuple(int(s) for s in sizes)
        self._param_names: list[tuple[str, str]] = []
        for layer in range(len(self.sizes) - 1):
            fan_in, fan_out = self.sizes[layer], self.sizes[layer + 1]
            last = layer == len(self.sizes) - 2
            if zero_last and last:
                w = np.zeros((fan_in, fan_out))
            else:
                bound = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = np.zeros(fan_out)
            wname = store.add(f"{name}.W{layer}", w)
            bname = store.add(f"{name}.b{layer}", b)
            self._param_names.append((wname, bname))

    def __call__(self, x, leaves: dict):
        h = x
        for layer, (wname, bname) in enumerate(self._param_names):
            h = matmul(h, leaves[wname]) + leaves[bname]
            if layer < len(self._param_names) - 1:
                h = tanh(h)
        return h


@dataclass
class AdamState:
    """First/second moment buffers plus step count for a flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(
        n: int,
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> "AdamState":
        return AdamState(
            m=np.zeros(n), v=np.zeros(n), lr=lr, beta1=betas[0], beta2=betas[1], eps=eps
        )


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; mutates the state, returns new params."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ShapeMismatch(
            f"params {params.shape}, grads {grads.shape}, moments {state.m.shape}"
        )
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
