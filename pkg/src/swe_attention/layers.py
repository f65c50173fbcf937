"""Neural building blocks: linear layers, self-attention, encoder stack, LSTM."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

ACTIVATIONS = {
    "identity": lambda t: t,
    "gelu": ad.gelu,
    "relu": ad.relu,
}


def init_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    """Minimal parameter container.

    Tensors and sub-modules assigned as attributes are registered in
    assignment order, which fixes the parameter naming used by checkpoints.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, (list, tuple)) and value and all(
                isinstance(v, Module) for v in value):
            for k, v in enumerate(value):
                self._children[f"{name}.{k}"] = v
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


# ---------------------------------------------------------------- dropout

def dropout(x: Tensor, rate: float, mode: str = "eval",
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)`` in train mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= rate
    return ad.mul(x, Tensor(keep / (1.0 - rate)))


# ---------------------------------------------------------------- linear / norm

class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, activation: str = "identity",
                 rng: np.random.Generator | None = None):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng or np.random.default_rng(0)
        self.in_dim, self.out_dim, self.activation = in_dim, out_dim, activation
        self.weight = init_uniform(rng, (in_dim, out_dim), in_dim)
        self.bias = init_uniform(rng, (out_dim,), in_dim)

    @staticmethod
    def count(in_dim: int, out_dim: int) -> int:
        return in_dim * out_dim + out_dim

    def __call__(self, x: Tensor) -> Tensor:
        return linear_forward(self, x)


def linear_forward(layer: Linear, x: Tensor) -> Tensor:
    """``activation(x @ W + b)`` applied over the last axis of ``x``."""
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(f"linear layer expects last dimension {layer.in_dim}, "
                         f"got input shape {x.shape}")
    lead = x.shape[:-1]
    flat = x if x.ndim == 2 else x.reshape(-1, layer.in_dim)
    out = ad.add_rowvec(ad.matmul(flat, layer.weight), layer.bias)
    out = ACTIVATIONS[layer.activation](out)
    return out if x.ndim == 2 else out.reshape(*lead, layer.out_dim)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.dim, self.eps = dim, eps
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)

    @staticmethod
    def count(dim: int) -> int:
        return 2 * dim

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add_rowvec(ad.mul_rowvec(ad.layer_norm(x, self.eps), self.gain),
                             self.shift)


# ---------------------------------------------------------------- attention

@dataclass(frozen=True)
class EncoderConfig:
    model_dim: int
    n_heads: int
    n_layers: int
    ffn_hidden_dim: int | None = None
    dropout_rate: float = 0.1
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        for name in ("model_dim", "n_heads", "n_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.model_dim % self.n_heads:
            raise ValueError(f"model_dim {self.model_dim} is not divisible by "
                             f"n_heads {self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.ffn_hidden_dim is None:
            object.__setattr__(self, "ffn_hidden_dim", 4 * self.model_dim)

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.n_heads


class MultiHeadAttention(Module):
    """Unmasked scaled dot-product self-attention over the second-to-last axis."""

    def __init__(self, model_dim: int, n_heads: int, rng: np.random.Generator):
        super().__init__()
        if model_dim % n_heads:
            raise ValueError(f"model_dim {model_dim} is not divisible by n_heads {n_heads}")
        self.model_dim, self.n_heads = model_dim, n_heads
        self.query = Linear(model_dim, model_dim, rng=rng)
        self.key = Linear(model_dim, model_dim, rng=rng)
        self.value = Linear(model_dim, model_dim, rng=rng)
        self.out = Linear(model_dim, model_dim, rng=rng)
        self.last_weights: np.ndarray | None = None

    @staticmethod
    def count(model_dim: int) -> int:
        return 4 * Linear.count(model_dim, model_dim)

    def __call__(self, x: Tensor) -> Tensor:
        single = x.ndim == 2
        if single:
            x = x.reshape(1, *x.shape)
        if x.shape[-1] != self.model_dim:
            raise ShapeError(f"attention expects width {self.model_dim}, got {x.shape}")
        b, length, d = x.shape
        h = self.n_heads
        dk = d // h

        def heads(t):
            return t.reshape(b, length, h, dk).transpose(0, 2, 1, 3)

        q = heads(self.query(x))
        k_t = self.key(x).reshape(b, length, h, dk).transpose(0, 2, 3, 1)
        v = heads(self.value(x))
        scores = ad.scale(ad.matmul(q, k_t), 1.0 / math.sqrt(dk))
        weights = ad.softmax_lastdim(scores)
        self.last_weights = weights.data[0] if single else weights.data
        mixed = ad.matmul(weights, v).transpose(0, 2, 1, 3).reshape(b, length, d)
        out = self.out(mixed)
        return out.reshape(length, d) if single else out


def multi_head_attention(x: Tensor, attention: MultiHeadAttention) -> Tensor:
    return attention(x)


class EncoderLayer(Module):
    """Post-norm block: LN(x + attn(x)), then LN(x + ffn(x))."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        d = cfg.model_dim
        self.attention = MultiHeadAttention(d, cfg.n_heads, rng)
        self.norm1 = LayerNorm(d, cfg.layer_norm_eps)
        self.ffn_in = Linear(d, cfg.ffn_hidden_dim, "relu", rng)
        self.ffn_out = Linear(cfg.ffn_hidden_dim, d, rng=rng)
        self.norm2 = LayerNorm(d, cfg.layer_norm_eps)

    @staticmethod
    def count(cfg: EncoderConfig) -> int:
        d, f = cfg.model_dim, cfg.ffn_hidden_dim
        return (MultiHeadAttention.count(d) + 2 * LayerNorm.count(d)
                + Linear.count(d, f) + Linear.count(f, d))

    def __call__(self, x, mode="eval", rng=None):
        p = self.cfg.dropout_rate
        x = self.norm1(ad.add(x, dropout(self.attention(x), p, mode, rng)))
        hidden = dropout(self.ffn_in(x), p, mode, rng)
        return self.norm2(ad.add(x, dropout(self.ffn_out(hidden), p, mode, rng)))


class TransformerEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.n_layers)]

    @staticmethod
    def count(cfg: EncoderConfig) -> int:
        return cfg.n_layers * EncoderLayer.count(cfg)

    def __call__(self, x, mode="eval", rng=None):
        if x.shape[-1] != self.cfg.model_dim:
            raise ShapeError(f"encoder expects width {self.cfg.model_dim}, got {x.shape}")
        for layer in self.layers:
            x = layer(x, mode, rng)
        return x


def transformer_encoder(x: Tensor, encoder: TransformerEncoder, mode="eval", rng=None):
    return encoder(x, mode, rng)


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Sinusoidal position table of shape ``(length, dim)``."""
    pos = np.arange(length)[:, None]
    rates = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(pos * rates)
    table[:, 1::2] = np.cos(pos * rates[: dim // 2])
    return table


# ---------------------------------------------------------------- LSTM

class LSTM(Module):
    """Single-layer LSTM; gate blocks ordered input, forget, cell, output."""

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator):
        super().__init__()
        self.in_dim, self.hidden_dim = in_dim, hidden_dim
        self.w_input = init_uniform(rng, (in_dim, 4 * hidden_dim), in_dim)
        self.w_hidden = init_uniform(rng, (hidden_dim, 4 * hidden_dim), hidden_dim)
        self.bias = init_uniform(rng, (4 * hidden_dim,), hidden_dim)

    @staticmethod
    def count(in_dim: int, hidden_dim: int) -> int:
        return 4 * hidden_dim * (in_dim + hidden_dim + 1)

    def __call__(self, seq: Tensor) -> Tensor:
        return lstm_forward(seq, self)


def lstm_forward(seq: Tensor, params: LSTM) -> Tensor:
    """Hidden state at every step from zero initial state.

    Accepts ``(T, in)`` or batched ``(B, T, in)`` input.
    """
    single = seq.ndim == 2
    if single:
        seq = seq.reshape(1, *seq.shape)
    if seq.ndim != 3 or seq.shape[-1] != params.in_dim:
        raise ShapeError(f"LSTM expects input width {params.in_dim}, got {seq.shape}")
    b, steps, _ = seq.shape
    if steps < 1:
        raise ShapeError("LSTM needs at least one step")
    hd = params.hidden_dim
    projected = ad.add_rowvec(
        ad.matmul(seq.reshape(b * steps, params.in_dim), params.w_input), params.bias
    ).reshape(b, steps, 4 * hd)
    h = c = None
    outputs = []
    for t in range(steps):
        gates = projected[:, t, :]
        if h is not None:
            gates = ad.add(gates, ad.matmul(h, params.w_hidden))
        i = ad.sigmoid(gates[:, 0:hd])
        f = ad.sigmoid(gates[:, hd:2 * hd])
        g = ad.tanh(gates[:, 2 * hd:3 * hd])
        o = ad.sigmoid(gates[:, 3 * hd:])
        c = ad.mul(i, g) if c is None else ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        outputs.append(h)
    out = ad.stack(outputs, axis=1)
    return out.reshape(steps, hd) if single else out
