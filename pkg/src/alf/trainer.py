"""Joint optimisation of the task loss and the filter autoencoders."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tape
from .config import TrainingConfig
from .cost import gain_ratio
from .errors import NumericError, ShapeError
from .factorizer import FactorizerState, step_schedule

log = logging.getLogger(__name__)

METRICS_COLUMNS = ("epoch", "task_loss", "rec_loss", "accuracy", "masked_count", "gain")


def task_loss(logits, labels) -> float:
    """Mean softmax cross-entropy, evaluated outside any tape."""
    tape = Tape(np.float64)
    return float(tape.softmax_cross_entropy(tape.leaf(logits), labels).value)


@dataclass
class StepLosses:
    task: float
    rec: float
    total: float


@dataclass
class EpochRecord:
    epoch: int
    task_loss: float
    rec_loss: float
    accuracy: float
    masked_count: tuple
    gain: tuple


@dataclass
class Metrics:
    records: list = field(default_factory=list)

    def append(self, record: EpochRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def to_csv(self) -> str:
        """Per-layer columns are ';'-joined in ALF-layer order."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for r in self.records:
            w.writerow([
                r.epoch, f"{r.task_loss:.10g}", f"{r.rec_loss:.10g}", f"{r.accuracy:.10g}",
                ";".join(str(c) for c in r.masked_count),
                ";".join(f"{g:.6f}" for g in r.gain),
            ])
        return buf.getvalue()


class SGD:
    """Plain SGD, optionally with heavy-ball momentum."""

    def __init__(self, momentum=0.0, weight_decay=0.0):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {}

    def step(self, params: dict, grads: dict, lr: float):
        for name, p in params.items():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p
            if self.momentum:
                v = self.velocity.get(name)
                v = g.copy() if v is None else self.momentum * v + g
                self.velocity[name] = v
                g = v
            p -= np.asarray(lr * g, dtype=p.dtype)


def make_optimizer(config: TrainingConfig):
    momentum = config.momentum if config.optimizer == "sgd+momentum" else 0.0
    return SGD(momentum, config.weight_decay)


def make_schedules(model, config: TrainingConfig):
    return {i: FactorizerState(config.m, config.pr) for i, _ in model.alf_blocks()}


def combined_loss(tape, model, x, labels, lambda_rec, params=None):
    """Build ``L_task + lambda_rec * sum(L_rec)`` on ``tape``.

    Returns ``(total, task, rec_sum, leaves)``; ``rec_sum`` is None for a
    model without ALF blocks.
    """
    logits, leaves, rec = model.tape_forward(tape, x, params)
    task = tape.softmax_cross_entropy(logits, labels)
    rec_sum = None
    for node in rec:
        rec_sum = node if rec_sum is None else tape.add(rec_sum, node)
    total = task if rec_sum is None else tape.add(task, tape.scale(rec_sum, lambda_rec))
    return total, task, rec_sum, leaves


def train_step(model, batch, config: TrainingConfig, schedules, optimizer, lr=None) -> StepLosses:
    """One forward/backward pass, one optimizer update, one schedule tick."""
    x, y = batch
    lr = config.lr if lr is None else lr
    tape = Tape()
    try:
        total, task, rec_sum, leaves = combined_loss(tape, model, x, y, config.lambda_rec)
        tape.backward(total)
    except NumericError as exc:
        raise NumericError(f"training diverged: {exc}") from exc
    grads = {name: tape.grad(node) for name, node in leaves.items()}
    if config.clip > 0:
        norm = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
        if norm > config.clip:
            grads = {k: g * np.float32(config.clip / norm) for k, g in grads.items()}
    optimizer.step(model.named_parameters(), grads, lr)
    for i, block in model.alf_blocks():
        step_schedule(schedules[i], block)
    return StepLosses(float(task.value), 0.0 if rec_sum is None else float(rec_sum.value),
                      float(total.value))


def evaluate(model, x, y) -> float:
    """Top-1 accuracy; works for a training model or a deployed one."""
    y = np.asarray(y)
    if len(y) == 0:
        return 0.0
    logits = model.predict(x)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def learning_rate(config: TrainingConfig, epoch: int) -> float:
    if config.lr_decay_epochs <= 0:
        return config.lr
    return config.lr * config.lr_decay ** (epoch // config.lr_decay_epochs)


def _alf_summary(model):
    masked, gains = [], []
    for _, block in model.alf_blocks():
        active = block.active_channels
        masked.append(block.c_code - active)
        gains.append(float(gain_ratio(block.ci, block.co, block.geom.kernel, active)))
    return tuple(masked), tuple(gains)


def train_loop(model, dataset, config: TrainingConfig, schedules=None):
    """Run ``config.epochs`` epochs; returns ``(metrics, model)``."""
    if len(dataset.x_train) == 0:
        raise ShapeError("training split is empty")
    schedules = make_schedules(model, config) if schedules is None else schedules
    optimizer = make_optimizer(config)
    rng = np.random.default_rng([config.seed, 1])
    metrics = Metrics()
    n = len(dataset.x_train)
    for epoch in range(config.epochs):
        lr = learning_rate(config, epoch)
        order = rng.permutation(n)
        task_sum = rec_sum = 0.0
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            losses = train_step(model, (dataset.x_train[idx], dataset.y_train[idx]),
                                config, schedules, optimizer, lr)
            task_sum += losses.task
            rec_sum += losses.rec
            batches += 1
        acc = evaluate(model, dataset.x_test, dataset.y_test)
        masked, gains = _alf_summary(model)
        record = EpochRecord(epoch + 1, task_sum / batches, rec_sum / batches, acc, masked, gains)
        metrics.append(record)
        log.info("epoch %d: task=%.4f rec=%.5f acc=%.4f masked=%s",
                 record.epoch, record.task_loss, record.rec_loss, acc, masked)
    return metrics, model
