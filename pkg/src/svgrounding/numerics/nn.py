"""Parameter containers and the layer set used by the models."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Parameter:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-a, a, size=shape))


def zeros(shape) -> Parameter:
    return Parameter(np.zeros(shape))


class Module:
    """Walks attributes in definition order to name parameters."""

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for key, value in vars(self).items():
            name = f"{prefix}.{key}" if prefix else key
            if isinstance(value, Parameter):
                out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(name))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}"))
                    elif isinstance(item, Parameter):
                        out[f"{name}.{i}"] = item
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.w = glorot(rng, (d_in, d_out), d_in, d_out)
        self.b = zeros(d_out) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.w, self.b)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int, rng: np.random.Generator):
        self.w = glorot(rng, (kernel, c_in, c_out), kernel * c_in, kernel * c_out)
        self.b = zeros(c_out)
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.w, self.b, self.stride)


class GRU(Module):
    """Single-layer unidirectional GRU over (B, T, d_in)."""

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        # Glorot per gate block, then laid side by side
        self.w_ih = Parameter(np.concatenate(
            [glorot(rng, (d_in, hidden), d_in, hidden).data for _ in range(3)], axis=1))
        self.w_hh = Parameter(np.concatenate(
            [glorot(rng, (hidden, hidden), hidden, hidden).data for _ in range(3)], axis=1))
        self.b_ih = zeros(3 * hidden)
        self.b_hh = zeros(3 * hidden)

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[0]

    def __call__(self, x: Tensor, h0: Tensor | None = None) -> Tensor:
        return T.gru_scan(x, self.w_ih, self.w_hh, self.b_ih, self.b_hh, h0)

    def cell(self, x: Tensor, h: Tensor) -> Tensor:
        return T.gru_cell(x, h, self.w_ih, self.w_hh, self.b_ih, self.b_hh)


class BiGRU(Module):
    """Forward and time-reversed GRUs, outputs concatenated on the feature axis."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        if d_out % 2:
            raise ValueError("bi-directional output width must be even")
        self.fwd = GRU(d_in, d_out // 2, rng)
        self.bwd = GRU(d_in, d_out // 2, rng)

    def __call__(self, x: Tensor) -> Tensor:
        f = self.fwd(x)
        b = T.flip(self.bwd(T.flip(x, 1)), 1)
        return T.concat([f, b], axis=-1)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = Parameter(np.ones(d))
        self.shift = zeros(d)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, -1) * self.gain + self.shift


class FeedForward(Module):
    """Two linear maps with a relu in between."""

    def __init__(self, d_in: int, hidden: int, d_out: int, rng: np.random.Generator):
        self.inner = Linear(d_in, hidden, rng)
        self.outer = Linear(hidden, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(T.relu(self.inner(x)))


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ValueError(f"width {d} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return T.swapaxes(T.reshape(x, (b, n, self.heads, d // self.heads)), 1, 2)

    def __call__(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        context = x if context is None else context
        b, n, d = x.shape
        out, _ = T.scaled_dot_attention(self._split(self.q(x)), self._split(self.k(context)),
                                        self._split(self.v(context)))
        return self.o(T.reshape(T.swapaxes(out, 1, 2), (b, n, d)))


class EncoderLayer(Module):
    """Post-norm transformer encoder layer: attention and FFN, each residual + LayerNorm."""

    def __init__(self, d: int, heads: int, ffn_width: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(d, heads, rng)
        self.norm1 = LayerNorm(d)
        self.ffn = FeedForward(d, ffn_width, d, rng)
        self.norm2 = LayerNorm(d)

    def __call__(self, x: Tensor) -> Tensor:
        x = self.norm1(x + self.attn(x))
        return self.norm2(x + self.ffn(x))
