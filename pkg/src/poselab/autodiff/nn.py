"""Layers and parameter containers on top of the autodiff kernel."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Base class that tracks parameters through attribute assignment.

    Traversal order follows attribute insertion order, so parameter
    listings (and therefore checkpoints and optimizer updates) are
    deterministic.
    """

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = ""):
        for name, value in self.__dict__.items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state dict mismatch (missing={sorted(missing)}, extra={sorted(extra)})")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = arr

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(rng: np.random.Generator, shape, scale: float, dtype) -> Tensor:
    data = rng.uniform(-scale, scale, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, dtype=np.float64):
        k = 1.0 / np.sqrt(in_dim)
        self.weight = _param(rng, (in_dim, out_dim), k, dtype)
        self.bias = _param(rng, (out_dim,), k, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, dtype=np.float64):
        k = 1.0 / np.sqrt(in_ch * kernel * kernel)
        self.weight = _param(rng, (out_ch, in_ch, kernel, kernel), k, dtype)
        self.bias = _param(rng, (out_ch,), k, dtype)
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float64):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class MultiHeadSelfAttention(Module):
    def __init__(self, embed: int, heads: int, rng: np.random.Generator, dtype=np.float64):
        if embed % heads:
            raise ValueError(f"embed dim {embed} not divisible by heads {heads}")
        k = 1.0 / np.sqrt(embed)
        self.wq = _param(rng, (embed, embed), k, dtype)
        self.wk = _param(rng, (embed, embed), k, dtype)
        self.wv = _param(rng, (embed, embed), k, dtype)
        self.wo = _param(rng, (embed, embed), k, dtype)
        self.bq = _param(rng, (embed,), k, dtype)
        self.bk = _param(rng, (embed,), k, dtype)
        self.bv = _param(rng, (embed,), k, dtype)
        self.bo = _param(rng, (embed,), k, dtype)
        self.heads = heads

    def forward(self, tokens: Tensor) -> Tensor:
        return T.multi_head_self_attention(
            tokens, self.wq, self.wk, self.wv, self.wo,
            self.bq, self.bk, self.bv, self.bo, self.heads)


class TransformerBlock(Module):
    """Post-norm encoder block: attention and feed-forward, each with a residual."""

    def __init__(self, embed: int, heads: int, ff_dim: int, rng: np.random.Generator, dtype=np.float64):
        self.attn = MultiHeadSelfAttention(embed, heads, rng, dtype)
        self.norm1 = LayerNorm(embed, dtype)
        self.fc1 = Linear(embed, ff_dim, rng, dtype)
        self.fc2 = Linear(ff_dim, embed, rng, dtype)
        self.norm2 = LayerNorm(embed, dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm1(x + self.attn(x))
        h = self.fc2(T.relu(self.fc1(x)))
        return self.norm2(x + h)


class MLP(Module):
    """Stack of Linear layers with ReLU between them (none after the last)."""

    def __init__(self, dims, rng: np.random.Generator, dtype=np.float64):
        self.layers = [Linear(a, b, rng, dtype) for a, b in zip(dims[:-1], dims[1:])]

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i + 1 < len(self.layers):
                x = T.relu(x)
        return x
