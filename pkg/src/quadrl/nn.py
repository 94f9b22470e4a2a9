"""Small tanh MLPs with hand-written backprop and Adam.

Parameters of a network live in one flat float64 vector; per-layer weight
and bias arrays are views into it. Gradients share that layout, which makes
Adam and Polyak averaging single vectorised operations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("tanh", "linear")


class StaleCacheError(ValueError):
    """A backward pass was given a cache from another network or parameter version."""


class Mlp:
    """Fully connected network: tanh hidden layers, linear output.

    Args:
        sizes: layer widths including input and output, e.g. ``[146, 64, 64, 4]``.
        rng: generator for the uniform ``+-1/sqrt(fan_in)`` initialisation.
            ``None`` leaves every parameter at zero.
        hidden: activation for hidden layers.
    """

    def __init__(self, sizes, rng: np.random.Generator | None = None, hidden: str = "tanh"):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        if hidden not in ACTIVATIONS:
            raise ValueError(f"unknown activation {hidden!r}")
        self.sizes = sizes
        self.hidden = hidden
        self.output = "linear"
        self.params = np.zeros(sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:])))
        self.version = 0
        self._bind()
        if rng is not None:
            for W, b in self.layers:
                bound = 1.0 / math.sqrt(W.shape[1])
                W[...] = rng.uniform(-bound, bound, size=W.shape)
                b[...] = rng.uniform(-bound, bound, size=b.shape)

    def _bind(self):
        self.layers = split_layers(self.params, self.sizes)

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def copy(self) -> Mlp:
        other = Mlp.__new__(Mlp)
        other.sizes = list(self.sizes)
        other.hidden = self.hidden
        other.output = self.output
        other.params = self.params.copy()
        other.version = 0
        other._bind()
        return other

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != self.params.shape:
            raise ValueError(f"expected {self.params.shape} parameters, got {flat.shape}")
        self.params[...] = flat
        self.version += 1

    def __call__(self, x):
        return forward(self, x)[0]


def split_layers(flat: np.ndarray, sizes) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views ``(W, b)`` per layer; ``W`` is ``(out, in)``."""
    layers = []
    offset = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        W = flat[offset : offset + n_in * n_out].reshape(n_out, n_in)
        offset += n_in * n_out
        b = flat[offset : offset + n_out]
        offset += n_out
        layers.append((W, b))
    return layers


@dataclass
class ForwardCache:
    net_id: int
    version: int
    batched: bool
    inputs: list  # input to each layer
    outputs: list  # post-activation output of each hidden layer


def forward(net: Mlp, x) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate ``net`` on a vector or a ``(batch, in)`` array."""
    x = np.asarray(x, dtype=float)
    batched = x.ndim == 2
    if x.ndim not in (1, 2) or x.shape[-1] != net.in_dim:
        raise ValueError(f"input shape {x.shape} does not match input dimension {net.in_dim}")
    h = x if batched else x[None, :]
    inputs, outputs = [], []
    last = len(net.layers) - 1
    for k, (W, b) in enumerate(net.layers):
        inputs.append(h)
        z = h @ W.T + b
        if k < last and net.hidden == "tanh":
            z = np.tanh(z)
        if k < last:
            outputs.append(z)
        h = z
    cache = ForwardCache(id(net), net.version, batched, inputs, outputs)
    return (h if batched else h[0]), cache


def backward(net: Mlp, cache: ForwardCache, grad_out, need_input_grad: bool = False):
    """Backpropagate ``grad_out`` = dL/d(output) through ``net``.

    Returns the flat parameter gradient (summed over the batch) and, when
    ``need_input_grad`` is set, dL/d(input) with the input's shape.
    """
    if cache.net_id != id(net) or cache.version != net.version:
        raise StaleCacheError("forward cache does not belong to the current network parameters")
    g = np.asarray(grad_out, dtype=float)
    if not cache.batched:
        g = g[None, :]
    if g.shape != (cache.inputs[0].shape[0], net.out_dim):
        raise ValueError(f"output gradient shape {g.shape} does not match network output")
    grads = np.zeros_like(net.params)
    glayers = split_layers(grads, net.sizes)
    for k in range(len(net.layers) - 1, -1, -1):
        W, _ = net.layers[k]
        gW, gb = glayers[k]
        np.matmul(g.T, cache.inputs[k], out=gW)
        gb[...] = g.sum(axis=0)
        if k == 0 and not need_input_grad:
            break
        g = g @ W
        if k > 0 and net.hidden == "tanh":
            h = cache.outputs[k - 1]
            g = g * (1.0 - h * h)
    if need_input_grad:
        return grads, (g if cache.batched else g[0])
    return grads


class Adam:
    """Bias-corrected adaptive-moment optimizer for one network."""

    def __init__(self, n_params: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, net: Mlp, grads: np.ndarray) -> None:
        adam_update(net, grads, self)

    def state_dict(self) -> dict:
        return {"m": self.m.copy(), "v": self.v.copy(), "t": self.t, "lr": self.lr,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    def load_state_dict(self, d: dict) -> None:
        self.m = np.array(d["m"], dtype=float)
        self.v = np.array(d["v"], dtype=float)
        self.t = int(d["t"])
        self.lr, self.beta1, self.beta2, self.eps = (float(d[k]) for k in ("lr", "beta1", "beta2", "eps"))


def adam_update(net: Mlp, grads: np.ndarray, opt: Adam) -> None:
    grads = np.asarray(grads, dtype=float)
    if grads.shape != net.params.shape or opt.m.shape != net.params.shape:
        raise ValueError("gradient / optimizer state shape does not match the network")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradient")
    opt.t += 1
    opt.m *= opt.beta1
    opt.m += (1.0 - opt.beta1) * grads
    opt.v *= opt.beta2
    opt.v += (1.0 - opt.beta2) * grads * grads
    m_hat = opt.m / (1.0 - opt.beta1**opt.t)
    v_hat = opt.v / (1.0 - opt.beta2**opt.t)
    net.params -= opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    net.version += 1


def soft_update(target: Mlp, source: Mlp, tau: float) -> None:
    """Polyak averaging ``target <- tau * source + (1 - tau) * target``."""
    if target.sizes != source.sizes:
        raise ValueError("target and source topologies differ")
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if tau == 1.0:
        target.params[...] = source.params
    else:
        target.params *= 1.0 - tau
        target.params += tau * source.params
    target.version += 1
