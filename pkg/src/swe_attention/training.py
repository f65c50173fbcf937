"""Masked MSE loss, AdamW, step-decay schedule, training loops and inference."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .data import SeasonDataset
from .layers import Module
from .models import Checkpoint, LinearRegressionModel, build_model, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-4
    scheduler_factor: float = 0.6
    scheduler_period_epochs: int = 3
    epochs: int = 50
    batch_size: int | None = None   # None: 16 for spatial, 32 for temporal / lstm
    weight_decay: float = 0.01
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip: float | None = 1.0

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if not 0 < self.scheduler_factor <= 1:
            raise ValueError("scheduler_factor must lie in (0, 1]")
        if self.scheduler_period_epochs < 1 or self.epochs < 0:
            raise ValueError("scheduler_period_epochs must be >= 1 and epochs >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))


def scheduler_lr(epoch: int, cfg: TrainConfig) -> float:
    """``lr0 * factor ** (epoch // period)``, rounded once from exact decimal arithmetic."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    k = epoch // cfg.scheduler_period_epochs
    return float(Decimal(repr(cfg.lr0)) * Decimal(repr(cfg.scheduler_factor)) ** k)


def mse_loss(pred: Tensor, target, mask=None) -> Tensor:
    """Mean squared error over the unmasked (True) elements only."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    keep = np.ones(target.shape, bool) if mask is None else np.asarray(mask, bool)
    if keep.shape != target.shape:
        raise ShapeError(f"mask shape {keep.shape} != target shape {target.shape}")
    count = int(keep.sum())
    if count == 0:
        raise ValueError("every element is masked; the loss is undefined")
    diff = ad.mul(ad.sub(pred, Tensor(np.where(keep, target, 0.0))), Tensor(keep * 1.0))
    return ad.scale(ad.sum(ad.mul(diff, diff)), 1.0 / count)


# ---------------------------------------------------------------- AdamW

@dataclass(frozen=True)
class AdamState:
    step: int
    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(0, tuple(np.zeros_like(p) for p in params),
                   tuple(np.zeros_like(p) for p in params))


def adamw_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
               cfg: TrainConfig, lr: float) -> tuple[list[np.ndarray], AdamState]:
    """One AdamW update; returns new parameter arrays and state, inputs untouched."""
    if not len(params) == len(grads) == len(state.m) == len(state.v):
        raise ShapeError("params, grads and optimizer state differ in length")
    b1, b2 = cfg.adam_betas
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not p.shape == g.shape == m.shape == v.shape:
            raise ShapeError(f"parameter {p.shape}, gradient {g.shape} and moments "
                             f"{m.shape}/{v.shape} differ")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
                          - lr * cfg.weight_decay * p)
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(t, tuple(new_m), tuple(new_v))


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float | None) -> list[np.ndarray]:
    if max_norm is None:
        return list(grads)
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total <= max_norm:
        return list(grads)
    factor = max_norm / total
    return [g * factor for g in grads]


# ---------------------------------------------------------------- examples

def examples(kind: str, dataset: SeasonDataset, seasons: Sequence[int]):
    """Index list and accessors for one model kind.

    Spatial examples are (season, day) pairs over all stations; temporal and
    LSTM examples are (station, season) pairs over all days.
    """
    cols = dataset.season_index(seasons)
    if kind == "spatial":
        keys = [(s, j) for s in cols for j in range(dataset.season_length)]
        get_x = lambda k: dataset.features[:, k[1], k[0], :]
        get_y = lambda k: dataset.labels[:, k[1], k[0]]
        get_mask = lambda k: dataset.label_mask[:, k[1], k[0]]
    elif kind in ("temporal", "lstm"):
        keys = [(i, s) for i in range(dataset.n_locations) for s in cols]
        get_x = lambda k: dataset.features[k[0], :, k[1], :]
        get_y = lambda k: dataset.labels[k[0], :, k[1]]
        get_mask = lambda k: dataset.label_mask[k[0], :, k[1]]
    else:
        raise ValueError(f"no sequence examples for model kind {kind!r}")
    return keys, get_x, get_y, get_mask


def default_batch_size(kind: str) -> int:
    return 16 if kind == "spatial" else 32


# ---------------------------------------------------------------- training

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr: float
    seconds: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [e.loss for e in self.epochs]

    @property
    def lrs(self) -> list[float]:
        return [e.lr for e in self.epochs]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "lr", "seconds"])
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.loss), repr(e.lr), f"{e.seconds:.3f}"])


def _target_stats(dataset: SeasonDataset, seasons) -> dict:
    cols = dataset.season_index(seasons)
    y = dataset.labels[:, :, cols][dataset.label_mask[:, :, cols]]
    if y.size == 0:
        raise TrainingError("no labelled SWE values in the training seasons")
    std = float(y.std())
    return {"mean": float(y.mean()), "std": std if std > 1e-12 else 1.0}


def train(kind: str, dataset: SeasonDataset, cfg: TrainConfig, model_cfg=None,
          callback=None) -> tuple[Module, TrainHistory]:
    """Fit one model on ``dataset.train_seasons``.

    Targets are standardized with training-label mean/std inside the loop;
    the model carries those statistics as ``model.target_stats`` so that
    :func:`predict` returns millimetres.  ``callback(epoch, model)`` runs after
    every epoch.
    """
    if dataset.norm_stats is None:
        raise TrainingError("dataset is not normalized; call normalize_features first")
    seasons = list(dataset.train_seasons)
    if not seasons:
        raise TrainingError("empty training split")
    streams = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng, shuffle_rng, dropout_rng = (np.random.default_rng(s) for s in streams)
    if model_cfg is None:
        raise ValueError("model_cfg is required")
    model = build_model(kind, model_cfg, init_rng)
    history = TrainHistory()

    if kind == "lr":
        cols = dataset.season_index(seasons)
        feats = dataset.features[:, :, cols, :].reshape(-1, dataset.feature_dim)
        labels = dataset.labels[:, :, cols].reshape(-1)
        keep = dataset.label_mask[:, :, cols].reshape(-1)
        model.fit(feats[keep], labels[keep])
        model.target_stats = {"mean": 0.0, "std": 1.0}
        return model, history

    stats = _target_stats(dataset, seasons)
    model.target_stats = stats
    keys, get_x, get_y, get_mask = examples(kind, dataset, seasons)
    keys = [k for k in keys if get_mask(k).any()]
    if not keys:
        raise TrainingError("empty training split")
    batch_size = cfg.batch_size or default_batch_size(kind)
    params = model.parameters()
    state = AdamState.zeros_like([p.data for p in params])

    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        lr = scheduler_lr(epoch, cfg)
        order = shuffle_rng.permutation(len(keys))
        total, count = 0.0, 0
        for b in range(0, len(order), batch_size):
            batch = [keys[k] for k in order[b:b + batch_size]]
            x = Tensor(np.stack([get_x(k) for k in batch]))
            y = (np.stack([get_y(k) for k in batch]) - stats["mean"]) / stats["std"]
            mask = np.stack([get_mask(k) for k in batch])
            loss = mse_loss(model(x, "train", dropout_rng), np.nan_to_num(y), mask)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, "
                                    f"batch starting at {b}; lower lr0 or enable grad_clip")
            model.zero_grad()
            ad.backward(loss)
            grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
            if not all(np.isfinite(g).all() for g in grads):
                raise TrainingError(f"non-finite gradient at epoch {epoch}, batch starting "
                                    f"at {b}; check the inputs for inf/NaN or lower lr0")
            grads = clip_grad_norm(grads, cfg.grad_clip)
            new, state = adamw_step([p.data for p in params], grads, state, cfg, lr)
            for p, arr in zip(params, new):
                p.data = arr
            n_obs = int(mask.sum())
            total += value * n_obs
            count += n_obs
        record = EpochRecord(epoch, total / count, lr, time.perf_counter() - start)
        history.epochs.append(record)
        log.info("%s epoch %d loss %.6f lr %.3g", kind, epoch, record.loss, lr)
        if callback is not None:
            callback(epoch, model)
    model.zero_grad()
    return model, history


def predict(model: Module, dataset: SeasonDataset, seasons: Sequence[int] | None = None,
            batch_size: int = 64) -> np.ndarray:
    """SWE predictions in mm with shape (n, m, len(seasons)), eval mode."""
    seasons = list(dataset.seasons if seasons is None else seasons)
    cols = dataset.season_index(seasons)
    n, m = dataset.n_locations, dataset.season_length
    out = np.empty((n, m, len(seasons)))
    stats = getattr(model, "target_stats", {"mean": 0.0, "std": 1.0})
    with ad.no_grad():
        if isinstance(model, LinearRegressionModel):
            feats = dataset.features[:, :, cols, :]
            out[...] = model(Tensor(feats.reshape(-1, dataset.feature_dim))).data.reshape(
                n, m, len(cols))
            return out
        kind = model.kind
        keys, get_x, _, _ = examples(kind, dataset, seasons)
        for b in range(0, len(keys), batch_size):
            batch = keys[b:b + batch_size]
            y = model(Tensor(np.stack([get_x(k) for k in batch])), "eval").data
            y = y * stats["std"] + stats["mean"]
            for k, row in zip(batch, y):
                if kind == "spatial":
                    s, j = k
                    out[:, j, cols.index(s)] = row
                else:
                    i, s = k
                    out[i, :, cols.index(s)] = row
    return out


# ---------------------------------------------------------------- checkpoints

def save_trained(path, model: Module, dataset: SeasonDataset, extra: dict | None = None) -> None:
    normalization = {"features": dataset.norm_stats,
                     "target": getattr(model, "target_stats", {"mean": 0.0, "std": 1.0})}
    save_checkpoint(path, Checkpoint(model.kind, model, normalization, dataset.station_ids,
                                     extra or {}))


def load_trained(path) -> Checkpoint:
    ckpt = load_checkpoint(path)
    ckpt.model.target_stats = ckpt.normalization.get("target", {"mean": 0.0, "std": 1.0})
    return ckpt

