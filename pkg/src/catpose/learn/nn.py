"""Minimal numpy MLPs with hand-written backward passes.

Inputs are batched: per-point features have shape (B, N, d) and global
features (B, d). A global input fed next to a per-point input is broadcast
over the N points, which is the same as repeating it N times and
concatenating, without materialising the repeated copies.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


def _act(name: str, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    return x


def _act_grad(name: str, pre: np.ndarray, post: np.ndarray, grad: np.ndarray) -> np.ndarray:
    if name == "relu":
        return grad * (pre > 0)
    if name == "tanh":
        return grad * (1.0 - post**2)
    return grad


class Mlp:
    """Fully connected stack; the first layer takes one weight block per input."""

    def __init__(
        self,
        name: str,
        in_dims: Sequence[int],
        hidden: Sequence[int],
        out_dim: int,
        rng: np.random.Generator,
        activation: str = "relu",
        out_activation: str = "identity",
    ):
        if activation not in ACTIVATIONS or out_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}/{out_activation!r}")
        self.name = name
        self.in_dims = tuple(int(d) for d in in_dims)
        dims = [sum(self.in_dims), *hidden, out_dim]
        self.activations = [activation] * len(hidden) + [out_activation]
        self.params: dict[str, np.ndarray] = {}
        first = xavier_uniform(rng, dims[0], dims[1])
        offset = 0
        for k, d in enumerate(self.in_dims):
            self.params[f"{name}.l0.w{k}"] = first[offset : offset + d].copy()
            offset += d
        self.params[f"{name}.l0.b"] = np.zeros(dims[1])
        for i in range(1, len(dims) - 1):
            self.params[f"{name}.l{i}.w"] = xavier_uniform(rng, dims[i], dims[i + 1])
            self.params[f"{name}.l{i}.b"] = np.zeros(dims[i + 1])
        self.n_layers = len(dims) - 1

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def forward(self, inputs: Sequence[np.ndarray]):
        if len(inputs) != len(self.in_dims):
            raise ValueError(f"{self.name}: expected {len(self.in_dims)} inputs, got {len(inputs)}")
        local = any(x.ndim == 3 for x in inputs)
        h = self.params[f"{self.name}.l0.b"]
        for k, x in enumerate(inputs):
            if x.shape[-1] != self.in_dims[k]:
                raise ValueError(f"{self.name}: input {k} has width {x.shape[-1]}, expected {self.in_dims[k]}")
            term = x @ self.params[f"{self.name}.l0.w{k}"]
            if local and x.ndim == 2:
                term = term[:, None, :]
            h = h + term
        pres, posts = [], []
        for i in range(self.n_layers):
            if i > 0:
                h = posts[-1] @ self.params[f"{self.name}.l{i}.w"] + self.params[f"{self.name}.l{i}.b"]
            pres.append(h)
            posts.append(_act(self.activations[i], h))
        return posts[-1], (list(inputs), pres, posts, local)

    def backward(self, cache, grad_out: np.ndarray):
        """Return (input gradients, parameter gradients)."""
        inputs, pres, posts, local = cache
        grads = {}
        g = grad_out
        for i in reversed(range(self.n_layers)):
            g = _act_grad(self.activations[i], pres[i], posts[i], g)
            flat_g = g.reshape(-1, g.shape[-1])
            if i > 0:
                prev = posts[i - 1]
                grads[f"{self.name}.l{i}.w"] = prev.reshape(-1, prev.shape[-1]).T @ flat_g
                grads[f"{self.name}.l{i}.b"] = flat_g.sum(axis=0)
                g = g @ self.params[f"{self.name}.l{i}.w"].T
        grads[f"{self.name}.l0.b"] = g.reshape(-1, g.shape[-1]).sum(axis=0)
        in_grads = []
        for k, x in enumerate(inputs):
            w = self.params[f"{self.name}.l0.w{k}"]
            if local and x.ndim == 2:
                gs = g.sum(axis=1)
                grads[f"{self.name}.l0.w{k}"] = x.T @ gs
                in_grads.append(gs @ w.T)
            else:
                grads[f"{self.name}.l0.w{k}"] = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
                in_grads.append(g @ w.T)
        return in_grads, grads


def mean_pool(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=1)


def mean_pool_backward(grad: np.ndarray, n: int) -> np.ndarray:
    return np.repeat(grad[:, None, :] / n, n, axis=1)


def max_pool(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Channel-wise maximum over points; also returns the winning point indices."""
    idx = x.argmax(axis=1)
    return np.take_along_axis(x, idx[:, None, :], axis=1)[:, 0, :], idx


def max_pool_backward(grad: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((grad.shape[0], n, grad.shape[1]))
    np.put_along_axis(out, idx[:, None, :], grad[:, None, :], axis=1)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return probs * (grad - (grad * probs).sum(axis=-1, keepdims=True))


class Adam:
    """Adam with bias correction over a dict of parameters."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        if not lr >= 0:
            raise ValueError("learning rate must be non-negative")
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            if self.lr:
                params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
