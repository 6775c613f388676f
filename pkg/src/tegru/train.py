"""Loss, SGD with step decay, the training loop and evaluation metrics."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .nn import predict
from .tensor import Rng, Tape, Tensor
from .textpipe import EncodedBatch

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """The loss became non-finite."""


@dataclass
class TrainConfig:
    """Optimisation settings; defaults are the full-size recurrent-model setup."""

    batch_size: int = 128
    epochs: int = 100
    lr: float = 0.002
    decay_factor: float = 0.5
    decay_every: int = 50
    seed: int = 0
    shuffle: bool = True

    def validate(self) -> "TrainConfig":
        if not self.lr >= 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if not 0 < self.decay_factor <= 1:
            raise ValueError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.epochs < 1 or self.batch_size < 1 or self.decay_every < 1:
            raise ValueError("epochs, batch_size and decay_every must be >= 1")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = sorted(set(d) - {f.name for f in fields(cls)})
        if unknown:
            raise ValueError(f"unknown train config keys: {', '.join(unknown)}")
        return cls(**d)


def nll_loss(log_probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the true classes."""
    labels = np.asarray(labels, dtype=np.int64)
    return T.neg(T.mean(T.pick(log_probs, labels)))


def sgd_step(params: Sequence[Tensor], lr: float) -> None:
    """``p <- p - lr * grad`` for every parameter that has a gradient."""
    for p in params:
        if p.grad is not None:
            p.data = p.data - p.data.dtype.type(lr) * p.grad


def schedule(epoch: int, cfg: TrainConfig) -> float:
    """Step decay with epochs counted from 0: ``lr * factor ** (epoch // every)``."""
    return cfg.lr * cfg.decay_factor ** (epoch // cfg.decay_every)


def decay_events(cfg: TrainConfig) -> list[int]:
    """Epoch boundaries (1..epochs) at which the scheduler decays the rate.

    The boundary after the last epoch counts, as with a scheduler stepped at
    every epoch end, so a run of E epochs has ``E // decay_every`` events.
    """
    return [e for e in range(1, cfg.epochs + 1) if e % cfg.decay_every == 0]


# -- metrics -------------------------------------------------------------------------


@dataclass
class EvalReport:
    tp: int
    tn: int
    fp: int
    fn: int
    accuracy: float
    f1: float
    f1_defined: bool = True
    latency_ms: float | None = None
    latency_batch_size: int = 1

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def render(self, title: str = "") -> str:
        latency = "-" if self.latency_ms is None else f"{self.latency_ms:.4f}"
        rows = [
            f"{'Method':<16}{'Accuracy':>10}{'F1':>10}{'Test Time(ms)':>15}",
            f"{title or 'model':<16}{self.accuracy * 100:>9.2f}%{self.f1 * 100:>9.2f}%{latency:>15}",
            f"TP={self.tp} TN={self.tn} FP={self.fp} FN={self.fn}"
            + ("" if self.f1_defined else "  (F1 undefined, reported as 0)"),
        ]
        return "\n".join(rows)


def report_from_counts(tp: int, tn: int, fp: int, fn: int) -> EvalReport:
    """Accuracy ``(TP+TN)/total`` and F1 ``2TP/(2TP+FP+FN)``."""
    total = tp + tn + fp + fn
    accuracy = (tp + tn) / total if total else 0.0
    denom = 2 * tp + fp + fn
    return EvalReport(tp, tn, fp, fn, accuracy, 2 * tp / denom if denom else 0.0, f1_defined=denom > 0)


def confusion_counts(predictions, labels) -> tuple[int, int, int, int]:
    p = np.asarray(predictions).astype(bool)
    y = np.asarray(labels).astype(bool)
    return int(np.sum(p & y)), int(np.sum(~p & ~y)), int(np.sum(p & ~y)), int(np.sum(~p & y))


def predict_dataset(model, data: EncodedBatch, batch_size: int = 256) -> np.ndarray:
    out = [predict(model.forward(chunk.ids, training=False).data) for chunk in data.batches(batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def measure_latency(model, data: EncodedBatch, limit: int | None = None) -> float:
    """Mean wall time in ms of single-sample forward passes, after one untimed warm-up."""
    n = len(data) if limit is None else min(limit, len(data))
    if n == 0:
        return 0.0
    model.forward(data.ids[:1], training=False)
    total = 0.0
    for i in range(n):
        row = data.ids[i:i + 1]
        start = time.perf_counter()
        model.forward(row, training=False)
        total += time.perf_counter() - start
    return 1000.0 * total / n


def evaluate(model, data: EncodedBatch, latency: bool = True, latency_limit: int | None = None,
             batch_size: int = 256) -> EvalReport:
    """Confusion counts from argmax predictions (ties -> class 0) plus test-time latency."""
    preds = predict_dataset(model, data, batch_size)
    report = report_from_counts(*confusion_counts(preds, data.labels))
    if latency:
        report.latency_ms = measure_latency(model, data, latency_limit)
    return report


# -- training loop -------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    valid_acc: float
    valid_f1: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class FitResult:
    history: list[EpochRecord]
    best_epoch: int
    best_state: dict = field(repr=False)
    steps: int = 0

    def history_text(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.history)


def train_step(model, batch: EncodedBatch, lr: float, rng: Rng) -> float:
    params = model.trainable()
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = nll_loss(model.forward(batch.ids, training=True, rng=rng), batch.labels)
    tape.backward(loss)
    sgd_step(params, lr)
    return loss.item()


def fit(
    model,
    train_set: EncodedBatch,
    valid_set: EncodedBatch,
    cfg: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> FitResult:
    """Mini-batch SGD; keeps the parameters with the best validation accuracy.

    Ties in validation accuracy keep the earlier epoch. The returned
    ``best_state`` can be loaded with ``model.load_state_dict``; ``model``
    itself is left at the final epoch's parameters.
    """
    cfg.validate()
    if len(train_set) == 0 or len(valid_set) == 0:
        raise ValueError("fit needs non-empty training and validation sets")
    shuffle_rng = Rng(cfg.seed)
    dropout_rng = Rng(cfg.seed + 1)
    history: list[EpochRecord] = []
    best_acc, best_epoch, best_state = -1.0, -1, None
    steps = 0

    for epoch in range(cfg.epochs):
        lr = schedule(epoch, cfg)
        order = shuffle_rng.permutation(len(train_set)) if cfg.shuffle else None
        losses, sizes = [], []
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                for batch in train_set.batches(cfg.batch_size, order):
                    loss = train_step(model, batch, lr, dropout_rng)
                    if not math.isfinite(loss):
                        raise T.NonFiniteError(f"loss is {loss}")
                    losses.append(loss)
                    sizes.append(len(batch))
                    steps += 1
                report = evaluate(model, valid_set, latency=False)
        except T.NonFiniteError as err:
            raise TrainingDiverged(f"epoch {epoch}, step {steps}: {err}") from err
        train_loss = float(np.average(losses, weights=sizes))
        record = EpochRecord(epoch, lr, train_loss, report.accuracy, report.f1)
        history.append(record)
        logger.info("epoch %d lr %.6g loss %.4f valid acc %.4f f1 %.4f",
                    epoch, lr, train_loss, report.accuracy, report.f1)
        if on_epoch is not None:
            on_epoch(record)
        if report.accuracy > best_acc:
            best_acc, best_epoch, best_state = report.accuracy, epoch, model.state_dict()

    return FitResult(history, best_epoch, best_state, steps)
