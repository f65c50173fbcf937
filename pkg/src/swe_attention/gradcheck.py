"""Finite-difference checks for every operation, layer and model.

Each check builds random inputs in [-1, 1], forms a scalar objective and
compares autodiff gradients with central differences.  Objectives are scaled
to magnitude ~1e-3: central-difference round-off grows with |f| while the
relative-error floor (1e-8) is absolute, so an O(1) objective would report
round-off on gradients that are exactly zero (e.g. the key bias, which
softmax ignores) as error.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import (LSTM, EncoderConfig, LayerNorm, Linear, MultiHeadAttention,
                     TransformerEncoder, dropout)
from .models import (LSTMBaseline, LSTMConfig, SpatialAttentionModel, SpatialModelConfig,
                     TemporalAttentionModel, TemporalModelConfig)
from .training import mse_loss

TOLERANCE = 1e-4
EPS = 1e-5
OBJECTIVE_SCALE = 1e-3


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    n_inputs: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _rand(rng, *shape, grad=True) -> Tensor:
    return Tensor(rng.uniform(-1.0, 1.0, size=shape), requires_grad=grad)


def check(name: str, objective: Callable[[], Tensor], inputs, eps: float = EPS) -> CheckResult:
    """Grad-check ``objective`` (a closure over ``inputs``) after rescaling it."""
    inputs = list(inputs)
    with ad.no_grad():
        base = abs(objective().item())
    factor = OBJECTIVE_SCALE / max(base, 1e-12)
    start = time.perf_counter()
    err = ad.grad_check(lambda *_: ad.scale(objective(), factor), inputs, eps)
    return CheckResult(name, err, sum(t.size for t in inputs), time.perf_counter() - start)


def _weighted(rng, t: Tensor) -> Tensor:
    """Random linear functional of ``t`` so every output coordinate matters."""
    return ad.sum(ad.mul(t, Tensor(rng.uniform(-1.0, 1.0, size=t.shape))))


def operation_checks(rng: np.random.Generator) -> list[CheckResult]:
    a, b = _rand(rng, 3, 4), _rand(rng, 4, 2)
    c, d = _rand(rng, 3, 4), _rand(rng, 3, 4)
    v = _rand(rng, 4)
    bat1, bat2 = _rand(rng, 2, 3, 4), _rand(rng, 2, 4, 3)
    out = []
    wm = Tensor(rng.uniform(-1, 1, (3, 2)))
    w34 = Tensor(rng.uniform(-1, 1, (3, 4)))
    out.append(check("matmul", lambda: ad.sum(ad.mul(ad.matmul(a, b), wm)), [a, b]))
    out.append(check("matmul_batched", lambda: _weighted(np.random.default_rng(1),
                                                           ad.matmul(bat1, bat2)), [bat1, bat2]))
    for kind in ("add", "sub", "mul"):
        out.append(check(kind, lambda k=kind: ad.sum(ad.mul(ad.elementwise(k, c, d), w34)),
                         [c, d]))
    out.append(check("scale", lambda: ad.sum(ad.mul(ad.elementwise("scale", c, -2.5), w34)), [c]))
    for kind in ("gelu", "relu", "softmax_lastdim", "tanh", "sigmoid"):
        out.append(check(kind, lambda k=kind: ad.sum(ad.mul(ad.elementwise(k, c), w34)), [c]))
    out.append(check("add_rowvec", lambda: ad.sum(ad.mul(ad.add_rowvec(c, v), w34)), [c, v]))
    out.append(check("mul_rowvec", lambda: ad.sum(ad.mul(ad.mul_rowvec(c, v), w34)), [c, v]))
    out.append(check("layer_norm", lambda: ad.sum(ad.mul(ad.layer_norm(c), w34)), [c]))
    w43 = Tensor(rng.uniform(-1, 1, (4, 3)))
    out.append(check("reshape_transpose",
                     lambda: ad.sum(ad.mul(c.reshape(2, 6).reshape(4, 3), w43))
                     + ad.sum(ad.mul(c.transpose(), w43)), [c]))
    w38 = Tensor(rng.uniform(-1, 1, (3, 8)))
    out.append(check("concat", lambda: ad.sum(ad.mul(ad.concat([c, d], -1), w38)), [c, d]))
    w234 = Tensor(rng.uniform(-1, 1, (3, 2, 4)))
    out.append(check("stack_getitem",
                     lambda: ad.sum(ad.mul(ad.stack([c, d], 1), w234))
                     + ad.sum(ad.mul(c[:, 1:3], Tensor(np.ones((3, 2))))), [c, d]))
    out.append(check("sum_mean", lambda: ad.mean(ad.mul(c, c)) + ad.sum(ad.mul(c, d)), [c, d]))
    return out


def layer_checks(rng: np.random.Generator, tiny: bool = True) -> list[CheckResult]:
    d = 8 if tiny else 16
    length = 4 if tiny else 6
    out = []
    x = _rand(rng, length, 5)
    for act in ("identity", "gelu", "relu"):
        lin = Linear(5, 3, act, rng)
        out.append(check(f"linear[{act}]", lambda l=lin: _weighted(np.random.default_rng(2), l(x)),
                         lin.parameters() + [x]))
    h = _rand(rng, length, d)
    norm = LayerNorm(d)
    norm.gain.data[:] = rng.uniform(0.5, 1.5, d)
    out.append(check("layer_norm_affine", lambda: _weighted(np.random.default_rng(3), norm(h)),
                     norm.parameters() + [h]))

    def masked():
        return _weighted(np.random.default_rng(4),
                         dropout(h, 0.3, "train", np.random.default_rng(5)))
    out.append(check("dropout[train, fixed mask]", masked, [h]))
    mha = MultiHeadAttention(d, 2, rng)
    out.append(check("multi_head_attention", lambda: _weighted(np.random.default_rng(6), mha(h)),
                     mha.parameters() + [h]))
    enc = TransformerEncoder(EncoderConfig(d, 2, 1, dropout_rate=0.1), rng)
    out.append(check("transformer_encoder[1 layer]",
                     lambda: _weighted(np.random.default_rng(7), enc(h, "eval")),
                     enc.parameters() + [h]))
    lstm = LSTM(3, 4, rng)
    seq = _rand(rng, 3, 3)
    out.append(check("lstm[T=3, hidden=4]",
                     lambda: _weighted(np.random.default_rng(8), lstm(seq)),
                     lstm.parameters() + [seq]))
    return out


def model_checks(rng: np.random.Generator, tiny: bool = True) -> list[CheckResult]:
    d = 8 if tiny else 16
    n, m, f = (4, 5, 6) if tiny else (6, 8, 9)
    out = []
    spatial = SpatialAttentionModel(
        SpatialModelConfig(n, f, d, EncoderConfig(d, 2, 1)), rng)
    xs, ys = _rand(rng, n, f, grad=False), rng.uniform(-1, 1, n)
    out.append(check("spatial_model+mse", lambda: mse_loss(spatial(xs, "eval"), ys),
                     spatial.parameters() + [xs]))
    temporal = TemporalAttentionModel(
        TemporalModelConfig(m, f, d, EncoderConfig(d, 2, 1)), rng)
    xt, yt = _rand(rng, m, f, grad=False), rng.uniform(-1, 1, m)
    out.append(check("temporal_model+mse", lambda: mse_loss(temporal(xt, "eval"), yt),
                     temporal.parameters() + [xt]))
    lstm = LSTMBaseline(LSTMConfig(f, 4), rng)
    xl, yl = _rand(rng, 3, f, grad=False), rng.uniform(-1, 1, 3)
    out.append(check("lstm_baseline+mse", lambda: mse_loss(lstm(xl), yl),
                     lstm.parameters() + [xl]))
    return out


def run_suite(tiny: bool = True, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return operation_checks(rng) + layer_checks(rng, tiny) + model_checks(rng, tiny)
