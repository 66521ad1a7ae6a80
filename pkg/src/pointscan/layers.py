"""Shared layer plumbing: named parameter store, linear layers, optimizer.

Every learnable tensor is created through a ParamStore under a unique
dotted name.  Initial values depend only on (seed, name, shape), so two
models built with the same seed share bitwise-identical values for every
parameter they have in common, regardless of construction order.  Ablation
variants rely on this for matched-seed comparisons.
"""

from __future__ import annotations

import zlib

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor, tensor


def seeded_rng(seed, name):
    """Independent generator for one named parameter."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


_ACTIVATIONS = {
    "silu": T.silu,
    "softplus": T.softplus,
    "none": lambda x: x,
}


def activation_fn(name):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}") from None


class ParamStore:
    """Registry of learnable tensors keyed by dotted name."""

    def __init__(self, seed, dtype=np.float32):
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.params = {}

    def _register(self, name, data):
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = tensor(np.asarray(data, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def uniform(self, name, shape, bound):
        rng = seeded_rng(self.seed, name)
        return self._register(name, rng.uniform(-bound, bound, shape))

    def zeros(self, name, shape):
        return self._register(name, np.zeros(shape))

    def constant(self, name, array):
        return self._register(name, array)

    def draw(self, name, sampler):
        """Register sampler(rng) output under the name-derived stream."""
        return self._register(name, sampler(seeded_rng(self.seed, name)))

    def count(self):
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


class Linear:
    """y = activation(x @ w + b) on the last axis."""

    def __init__(self, store, name, d_in, d_out, bias=True, activation="none"):
        bound = 1.0 / np.sqrt(d_in)
        self.w = store.uniform(f"{name}.w", (d_in, d_out), bound)
        self.b = store.zeros(f"{name}.b", (d_out,)) if bias else None
        self.act = activation_fn(activation)

    def __call__(self, x):
        y = x @ self.w
        if self.b is not None:
            y = T.add(y, self.b)
        return self.act(y)


class MLP:
    """Stack of Linear layers; hidden layers use `activation`, last uses `final`."""

    def __init__(self, store, name, widths, activation="silu", final="none"):
        if len(widths) < 2:
            raise ConfigError("MLP needs at least input and output widths")
        self.layers = []
        for i in range(len(widths) - 1):
            act = activation if i < len(widths) - 2 else final
            self.layers.append(
                Linear(store, f"{name}.{i}", widths[i], widths[i + 1], activation=act)
            )

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class RMSNorm:
    """Learned-scale root-mean-square normalization over the last axis."""

    def __init__(self, store, name, d):
        self.weight = store.constant(f"{name}.weight", np.ones(d))

    def __call__(self, x):
        return T.rms_norm(x, self.weight)


def cosine_lr(step, total_steps, lr_max, lr_min=0.0):
    """Half-cosine decay from lr_max to lr_min over total_steps."""
    if total_steps <= 1:
        return lr_max
    frac = min(max(step / (total_steps - 1), 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * frac))


class Adam:
    """Adam over a ParamStore; moments kept in float64 for stability."""

    def __init__(self, store, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.store = store
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(p.shape) for k, p in store.params.items()}
        self.v = {k: np.zeros(p.shape) for k, p in store.params.items()}

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.store.params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64)
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            update = (self.m[name] / bias1) / (np.sqrt(self.v[name] / bias2) + self.eps)
            p.data -= (lr * update).astype(p.dtype)

    def zero_grad(self):
        self.store.zero_grad()


def grad_global_norm(store):
    total = 0.0
    for p in store.params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))
