"""Attention models for daily SWE, the LSTM and linear-regression baselines,
and the averaging ensemble.

The spatial model reads one ``(day, season)`` as a sequence over the ``n``
stations; the temporal model reads one ``(station, season)`` as a sequence
over the ``m`` days.  Both share the same pipeline::

    embed (2 x GELU linear, -> d) -> encoder -> [encoded || embedded] (2d)
    -> 4 reduction layers (2d -> d -> d/2 -> d/4 -> d/4, dropout 0.2)
    -> flatten all positions -> GELU linear (dropout 0.1) -> linear -> one value per position
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .layers import (LSTM, EncoderConfig, Linear, Module, TransformerEncoder,
                     dropout, positional_encoding)

CHECKPOINT_FORMAT = "swe-attention-checkpoint"
CHECKPOINT_VERSION = 1
REDUCTION_ACTIVATIONS = ("relu", "identity", "relu", "identity")


def default_reduction_dims(embed_dim: int) -> tuple[int, int, int, int]:
    d = embed_dim
    if d % 4:
        raise ValueError(f"embed_dim must be divisible by 4, got {d}")
    return (d, d // 2, d // 4, d // 4)


@dataclass(frozen=True)
class AttentionConfig:
    """Shared architecture fields; ``seq_len`` is ``n`` (spatial) or ``m`` (temporal)."""

    seq_len: int
    feature_dim: int
    embed_dim: int = 512
    encoder: EncoderConfig | None = None
    reduction_dims: tuple[int, ...] | None = None
    output_hidden_dim: int | None = None
    dropout_reduction: float = 0.20
    dropout_output: float = 0.10

    def __post_init__(self):
        if self.feature_dim < 1 or self.embed_dim < 1:
            raise ValueError("feature_dim and embed_dim must be positive")
        if self.encoder is None:
            object.__setattr__(self, "encoder", EncoderConfig(self.embed_dim, 1, 2))
        elif isinstance(self.encoder, dict):
            object.__setattr__(self, "encoder", EncoderConfig(**self.encoder))
        if self.encoder.model_dim != self.embed_dim:
            raise ValueError("encoder.model_dim must equal embed_dim")
        if self.reduction_dims is None:
            object.__setattr__(self, "reduction_dims", default_reduction_dims(self.embed_dim))
        object.__setattr__(self, "reduction_dims", tuple(self.reduction_dims))
        if len(self.reduction_dims) != 4:
            raise ValueError("reduction_dims needs exactly 4 widths")
        if self.reduction_dims[-1] * 8 != 2 * self.embed_dim:
            raise ValueError(f"last reduction width must be 2*d/8 = {2 * self.embed_dim // 8}, "
                             f"got {self.reduction_dims[-1]}")
        if self.output_hidden_dim is None:
            object.__setattr__(self, "output_hidden_dim", self.embed_dim)
        for rate in (self.dropout_reduction, self.dropout_output):
            if not 0.0 <= rate < 1.0:
                raise ValueError("dropout rates must lie in [0, 1)")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["reduction_dims"] = list(self.reduction_dims)
        return out


@dataclass(frozen=True)
class SpatialModelConfig(AttentionConfig):
    def __post_init__(self):
        super().__post_init__()
        if self.seq_len < 2:
            raise ValueError("the spatial model needs at least 2 locations")

    @property
    def n_locations(self) -> int:
        return self.seq_len


@dataclass(frozen=True)
class TemporalModelConfig(AttentionConfig):
    def __post_init__(self):
        super().__post_init__()
        if self.seq_len < 1:
            raise ValueError("season_length must be at least 1")

    @property
    def season_length(self) -> int:
        return self.seq_len


def architecture_widths(cfg: AttentionConfig) -> dict[str, int]:
    """Per-position widths through the pipeline, from the config alone."""
    reduced = cfg.reduction_dims[-1]
    return {
        "input": cfg.feature_dim,
        "embed": cfg.embed_dim,
        "encoded": cfg.embed_dim,
        "concat": 2 * cfg.embed_dim,
        "reduced": reduced,
        "flattened": cfg.seq_len * reduced,
        "output_hidden": cfg.output_hidden_dim,
        "output": cfg.seq_len,
    }


def attention_param_count(cfg: AttentionConfig) -> int:
    d = cfg.embed_dim
    total = Linear.count(cfg.feature_dim, d) + Linear.count(d, d)
    total += TransformerEncoder.count(cfg.encoder)
    width = 2 * d
    for out in cfg.reduction_dims:
        total += Linear.count(width, out)
        width = out
    total += Linear.count(cfg.seq_len * width, cfg.output_hidden_dim)
    total += Linear.count(cfg.output_hidden_dim, cfg.seq_len)
    return total


class AttentionModel(Module):
    positional = False

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        d = cfg.embed_dim
        self.embed1 = Linear(cfg.feature_dim, d, "gelu", rng)
        self.embed2 = Linear(d, d, "gelu", rng)
        self.encoder = TransformerEncoder(cfg.encoder, rng)
        widths = (2 * d,) + cfg.reduction_dims
        self.reduction = [Linear(widths[k], widths[k + 1], REDUCTION_ACTIVATIONS[k], rng)
                          for k in range(4)]
        self.head_hidden = Linear(cfg.seq_len * widths[-1], cfg.output_hidden_dim, "gelu", rng)
        self.head_out = Linear(cfg.output_hidden_dim, cfg.seq_len, rng=rng)
        self._pe = positional_encoding(cfg.seq_len, d) if self.positional else None
        self.trace: dict[str, int] = {}

    def __call__(self, x: Tensor, mode: str = "eval", rng=None) -> Tensor:
        cfg = self.cfg
        single = x.ndim == 2
        if single:
            x = x.reshape(1, *x.shape)
        if x.ndim != 3 or x.shape[1:] != (cfg.seq_len, cfg.feature_dim):
            raise ShapeError(f"{type(self).__name__} expects sequences of shape "
                             f"({cfg.seq_len}, {cfg.feature_dim}), got {x.shape}")
        batch, length, _ = x.shape
        e = self.embed2(self.embed1(x))
        if self._pe is not None:
            e = ad.add(e, Tensor(np.broadcast_to(self._pe, e.shape)))
        a = self.encoder(e, mode, rng)
        z = ad.concat([a, e], axis=-1)
        concat_width = z.shape[-1]
        for layer in self.reduction:
            z = dropout(layer(z), cfg.dropout_reduction, mode, rng)
        reduced = z.shape[-1]
        flat = z.reshape(batch, length * reduced)
        hidden = dropout(self.head_hidden(flat), cfg.dropout_output, mode, rng)
        y = self.head_out(hidden)
        self.trace = {"input": x.shape[-1], "embed": e.shape[-1], "encoded": a.shape[-1],
                      "concat": concat_width, "reduced": reduced,
                      "flattened": flat.shape[-1], "output_hidden": hidden.shape[-1],
                      "output": y.shape[-1]}
        return y.reshape(length) if single else y


class SpatialAttentionModel(AttentionModel):
    kind = "spatial"
    positional = False


class TemporalAttentionModel(AttentionModel):
    kind = "temporal"
    positional = True


def spatial_forward(model: SpatialAttentionModel, x_seq: Tensor, mode="eval", rng=None):
    return model(x_seq, mode, rng)


def temporal_forward(model: TemporalAttentionModel, x_seq: Tensor, mode="eval", rng=None):
    return model(x_seq, mode, rng)


# ---------------------------------------------------------------- baselines

@dataclass(frozen=True)
class LSTMConfig:
    feature_dim: int
    hidden_dim: int = 128

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class LSTMBaseline(Module):
    kind = "lstm"

    def __init__(self, cfg: LSTMConfig, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.lstm = LSTM(cfg.feature_dim, cfg.hidden_dim, rng)
        self.head = Linear(cfg.hidden_dim, 1, rng=rng)

    @staticmethod
    def count(cfg: LSTMConfig) -> int:
        return LSTM.count(cfg.feature_dim, cfg.hidden_dim) + Linear.count(cfg.hidden_dim, 1)

    def __call__(self, x: Tensor, mode: str = "eval", rng=None) -> Tensor:
        single = x.ndim == 2
        if single:
            x = x.reshape(1, *x.shape)
        batch, steps, _ = x.shape
        y = self.head(self.lstm(x)).reshape(batch, steps)
        return y.reshape(steps) if single else y


def lstm_baseline_forward(model: LSTMBaseline, x_seq: Tensor) -> Tensor:
    return model(x_seq)


class SingularSystemError(np.linalg.LinAlgError):
    pass


def linear_regression_fit(X, y, ridge: float = 0.0) -> np.ndarray:
    """Closed-form ridge least squares with an unpenalized intercept.

    Returns ``[intercept, w_1, ..., w_F]``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ShapeError(f"need X of shape (N, F) and y of shape (N,), got {X.shape}, {y.shape}")
    n, f = X.shape
    if n <= f:
        raise ValueError(f"need more rows than features, got N={n}, F={f}")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    A = np.hstack([np.ones((n, 1)), X])
    if ridge == 0 and np.linalg.matrix_rank(A) < f + 1:
        raise SingularSystemError("normal matrix is singular (collinear features); "
                                  "use ridge > 0")
    penalty = np.eye(f + 1) * ridge
    penalty[0, 0] = 0.0
    return np.linalg.solve(A.T @ A + penalty, A.T @ y)


@dataclass(frozen=True)
class LinearRegressionConfig:
    feature_dim: int
    ridge: float = 1e-8

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class LinearRegressionModel(Module):
    kind = "lr"

    def __init__(self, cfg: LinearRegressionConfig, rng=None):
        super().__init__()
        self.cfg = cfg
        self.weights = Tensor(np.zeros(cfg.feature_dim + 1), requires_grad=True)

    def fit(self, X, y) -> None:
        self.weights.data[:] = linear_regression_fit(X, y, self.cfg.ridge)

    def __call__(self, x: Tensor, mode: str = "eval", rng=None) -> Tensor:
        w = self.weights.data
        return Tensor(x.data @ w[1:] + w[0])


def ensemble_predict(y_spatial, y_temporal, keys_spatial=None, keys_temporal=None):
    """Elementwise mean of two aligned prediction arrays."""
    a = y_spatial.data if isinstance(y_spatial, Tensor) else np.asarray(y_spatial, float)
    b = y_temporal.data if isinstance(y_temporal, Tensor) else np.asarray(y_temporal, float)
    if a.shape != b.shape:
        raise ShapeError(f"ensemble inputs differ in shape: {a.shape} vs {b.shape}")
    if keys_spatial is not None or keys_temporal is not None:
        if list(keys_spatial) != list(keys_temporal):
            raise ValueError("ensemble inputs are not aligned on (location, day, season) keys")
    out = (a + b) / 2.0
    return Tensor(out) if isinstance(y_spatial, Tensor) else out


# ---------------------------------------------------------------- construction / IO

MODEL_KINDS = ("spatial", "temporal", "lstm", "lr")


def config_from_dict(kind: str, data: dict):
    if kind == "spatial":
        return SpatialModelConfig(**data)
    if kind == "temporal":
        return TemporalModelConfig(**data)
    if kind == "lstm":
        return LSTMConfig(**data)
    if kind == "lr":
        return LinearRegressionConfig(**data)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def build_model(kind: str, cfg, rng: np.random.Generator | None = None) -> Module:
    classes = {"spatial": SpatialAttentionModel, "temporal": TemporalAttentionModel,
               "lstm": LSTMBaseline, "lr": LinearRegressionModel}
    if kind not in classes:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    if isinstance(cfg, dict):
        cfg = config_from_dict(kind, cfg)
    return classes[kind](cfg, rng)


@dataclass
class Checkpoint:
    kind: str
    model: Module
    normalization: dict[str, Any] = field(default_factory=dict)
    stations: list[str] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write a self-describing JSON checkpoint (float values round-trip exactly)."""
    params = {name: {"shape": list(p.shape), "values": p.data.reshape(-1).tolist()}
              for name, p in ckpt.model.named_parameters()}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": ckpt.kind,
        "config": ckpt.model.cfg.to_dict(),
        "stations": list(ckpt.stations),
        "normalization": ckpt.normalization,
        "extra": ckpt.extra,
        "params": params,
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")))


def load_checkpoint(path) -> Checkpoint:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a model checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    kind = doc["kind"]
    model = build_model(kind, doc["config"])
    stored = doc["params"]
    names = [name for name, _ in model.named_parameters()]
    if sorted(names) != sorted(stored):
        raise ValueError(f"checkpoint parameters do not match a {kind} model")
    for name, p in model.named_parameters():
        entry = stored[name]
        values = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if values.shape != p.shape:
            raise ShapeError(f"parameter {name}: stored shape {values.shape}, model {p.shape}")
        p.data[...] = values
    return Checkpoint(kind, model, doc["normalization"], doc["stations"], doc.get("extra", {}))
