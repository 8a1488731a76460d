"""Dense networks with hand-written backprop, Huber loss and Adam, in float64.

Checkpoint text format (lossless, floats written with ``float.hex``)::

    ridemix-densenet 1
    layers <n>
    layer <index> <in_dim> <out_dim> <activation>
    W <out_dim * in_dim hex floats, row-major>
    b <out_dim hex floats>
    ... repeated per layer
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "elu", "abs", "identity")
CHECKPOINT_HEADER = "ridemix-densenet 1"


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    pass


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "elu":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    if name == "abs":
        return np.abs(z)
    return z


def _act_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(float)
    if name == "elu":
        return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))
    if name == "abs":
        return np.sign(z)
    return np.ones_like(z)


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"weight {self.weight.shape} and bias {self.bias.shape} disagree")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class DenseNet:
    layers: list[Layer]
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")

    @classmethod
    def create(cls, sizes, activations, rng=None) -> "DenseNet":
        """Layers ``sizes[k] -> sizes[k+1]`` initialised uniform in ``±1/sqrt(fan_in)``."""
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        rng = np.random.default_rng(rng)
        layers = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            b = rng.uniform(-bound, bound, size=fan_out)
            layers.append(Layer(w, b, act))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def params(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out += [l.weight, l.bias]
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def zeros_like(self) -> "GradientSet":
        return GradientSet([np.zeros_like(p) for p in self.params()])

    def __call__(self, x):
        return net_forward(self, x)[0]

    def same_params(self, other: "DenseNet") -> bool:
        if len(self.layers) != len(other.layers):
            return False
        return all(
            a.activation == b.activation and np.array_equal(p, q)
            for a, b in zip(self.layers, other.layers)
            for p, q in ((a.weight, b.weight), (a.bias, b.bias))
        )


@dataclass
class GradientSet:
    """Gradients in ``DenseNet.params()`` order: W0, b0, W1, b1, ..."""

    grads: list[np.ndarray]

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet([a + b for a, b in zip(self.grads, other.grads)])

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.grads])


@dataclass
class ForwardCache:
    net_id: int
    version: int
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    batched: bool


def net_forward(net: DenseNet, x) -> tuple[np.ndarray, ForwardCache]:
    """Apply the network to a vector ``(in,)`` or a batch ``(B, in)``."""
    x = np.asarray(x, dtype=float)
    batched = x.ndim == 2
    h = x if batched else x[None, :]
    if h.shape[1] != net.in_dim:
        raise ShapeError(f"input has {h.shape[1]} features, network expects {net.in_dim}")
    inputs, pre = [], []
    for layer in net.layers:
        inputs.append(h)
        z = h @ layer.weight.T + layer.bias
        pre.append(z)
        h = _act(layer.activation, z)
    cache = ForwardCache(id(net), net.version, inputs, pre, batched)
    return (h if batched else h[0]), cache


def net_backward(net: DenseNet, cache: ForwardCache, out_grad) -> tuple[GradientSet, np.ndarray]:
    """Gradients of ``sum(output * out_grad)`` w.r.t. parameters and input.

    For a batched forward pass the parameter gradients are summed over the batch.
    """
    if cache.net_id != id(net) or cache.version != net.version or len(cache.pre) != len(net.layers):
        raise StaleCacheError("forward cache does not belong to this network state")
    g = np.asarray(out_grad, dtype=float)
    if not cache.batched:
        g = g[None, :]
    if g.shape != cache.pre[-1].shape:
        raise ShapeError(f"out_grad shape {g.shape} != output shape {cache.pre[-1].shape}")
    grads = [None] * (2 * len(net.layers))
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        dz = g * _act_grad(layer.activation, cache.pre[k])
        grads[2 * k] = dz.T @ cache.inputs[k]
        grads[2 * k + 1] = dz.sum(axis=0)
        g = dz @ layer.weight
    return GradientSet(grads), (g if cache.batched else g[0])


def huber(x):
    """Huber loss with unit threshold: ``x**2 / 2`` inside ``[-1, 1]``, ``|x| - 1/2`` outside."""
    a = np.abs(x)
    out = np.where(a <= 1.0, 0.5 * np.square(x), a - 0.5)
    return float(out) if np.ndim(out) == 0 else out


def huber_grad(x):
    out = np.clip(x, -1.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_net(cls, net: DenseNet, lr: float = 1e-3, **kwargs) -> "AdamState":
        return cls([np.zeros_like(p) for p in net.params()], [np.zeros_like(p) for p in net.params()], lr, **kwargs)


def adam_step(net: DenseNet, grads: GradientSet, state: AdamState) -> tuple[DenseNet, AdamState]:
    """One bias-corrected Adam update, applied in place."""
    params = net.params()
    if len(grads.grads) != len(params) or len(state.m) != len(params):
        raise ShapeError("gradient set does not match network")
    for p, g in zip(params, grads.grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads.grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    net.version += 1
    return net, state


# -- checkpoints --------------------------------------------------------------


def _hex(a: np.ndarray) -> str:
    return " ".join(float(v).hex() for v in a.ravel())


def dumps_net(net: DenseNet) -> str:
    lines = [CHECKPOINT_HEADER, f"layers {len(net.layers)}"]
    for k, l in enumerate(net.layers):
        lines.append(f"layer {k} {l.in_dim} {l.out_dim} {l.activation}")
        lines.append("W " + _hex(l.weight))
        lines.append("b " + _hex(l.bias))
    return "\n".join(lines) + "\n"


def loads_net(text: str) -> DenseNet:
    lines = text.splitlines()
    if not lines or lines[0].strip() != CHECKPOINT_HEADER:
        raise ValueError("not a ridemix-densenet v1 checkpoint")
    n = int(lines[1].split()[1])
    layers = []
    for k in range(n):
        head, w_line, b_line = lines[2 + 3 * k : 5 + 3 * k]
        _, idx, n_in, n_out, act = head.split()
        if int(idx) != k:
            raise ValueError(f"layer {idx} out of order")
        n_in, n_out = int(n_in), int(n_out)
        w = np.array([float.fromhex(t) for t in w_line.split()[1:]])
        b = np.array([float.fromhex(t) for t in b_line.split()[1:]])
        if w.size != n_in * n_out or b.size != n_out:
            raise ValueError(f"layer {k}: value count does not match header")
        layers.append(Layer(w.reshape(n_out, n_in), b, act))
    return DenseNet(layers)


def save_net(net: DenseNet, path) -> None:
    Path(path).write_text(dumps_net(net))


def load_net(path) -> DenseNet:
    return loads_net(Path(path).read_text())
