"""Training loop: windowed bags, parallel forward, AdamW, cosine decay, early stopping."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..core import ops
from ..core.tensor import Tape, backward
from ..engine import ModelConfig, ModelParams, forward_detail, init_model, predict
from ..errors import ConfigError, NonFiniteError, TrainingDivergedError, UndefinedMetricError
from ..hilbert import STRATEGIES, HilbertOrder, SurvivalLabel, TileBag, contiguous_chunk, order_bag
from .losses import coxph_loss, cross_entropy
from .metrics import classification_metrics, softmax_rows, survival_metrics
from .optim import AdamW, cosine_lr

log = logging.getLogger(__name__)

LR_GRID = (1e-4, 1e-2)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 8
    max_tiles: int = 4096
    epochs: int = 30
    patience: int = 10
    weight_decay: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    lr_floor: float = 0.0
    order: str = "hilbert"
    seed: int = 0
    inf_batch: int = 4
    grad_clip: float | None = None

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        # lr = 0 is accepted as a frozen run.
        if self.lr != 0 and not LR_GRID[0] <= self.lr <= LR_GRID[1]:
            raise ConfigError(f"lr {self.lr} outside the search grid {LR_GRID}")
        if self.order not in STRATEGIES:
            raise ConfigError(f"order must be one of {STRATEGIES}")
        if self.batch_size < 1 or self.max_tiles < 1 or self.epochs < 1:
            raise ConfigError("batch_size, max_tiles and epochs must be >= 1")


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_metric: float = -math.inf
    epochs_run: int = 0


def monitor_name(task: str) -> str:
    return "auc" if task == "classification" else "c_index"


def order_bags(bags: Sequence[TileBag], strategy: str, seed: int) -> list[HilbertOrder]:
    return [order_bag(b, strategy, seed=[seed, i]) for i, b in enumerate(bags)]


def _batch_loss(outputs, bags: Sequence[TileBag], task: str):
    if task == "classification":
        total = cross_entropy(outputs[0], bags[0].label)
        for out, bag in zip(outputs[1:], bags[1:]):
            total = total + cross_entropy(out, bag.label)
        return total * (1.0 / len(outputs))
    risks = ops.concat([o.reshape(1) for o in outputs], axis=0)
    times = [b.label.time_months for b in bags]
    events = [b.label.event for b in bags]
    return coxph_loss(risks, times, events)


def _fix_survival_batch(idx: list[int], bags: Sequence[TileBag], rng: np.random.Generator) -> list[int]:
    """Make a Cox batch usable: at least two samples and one event."""
    with_event = [i for i, b in enumerate(bags) if b.label.event]
    if not with_event:
        raise UndefinedMetricError("training set has no observed event")
    idx = list(idx)
    if not any(bags[i].label.event for i in idx):
        idx[-1] = int(rng.choice(with_event))
    while len(idx) < 2:
        idx.append(int(rng.integers(len(bags))))
    return idx


def evaluate(p: ModelParams, bags: Sequence[TileBag], orders: Sequence[HilbertOrder],
             inf_batch: int = 4) -> tuple[dict[str, float], np.ndarray]:
    """Whole-bag streamed inference in serialized order; returns metrics and raw outputs."""
    outs = np.stack([predict(b.features[o.perm], p, inf_batch) for b, o in zip(bags, orders)])
    if p.config.task == "classification":
        labels = np.array([b.label for b in bags])
        probs = softmax_rows(outs)
        res = classification_metrics(outs, labels)
        res["loss"] = float(-np.mean(np.log(probs[np.arange(len(labels)), labels] + 1e-300)))
        return res, outs
    times = np.array([b.label.time_months for b in bags])
    events = np.array([b.label.event for b in bags])
    res = survival_metrics(outs[:, 0], times, events)
    if events.any() and len(bags) >= 2:
        res["loss"] = float(coxph_loss(ops.as_tensor(outs[:, 0]), times, events).data)
    return res, outs


def train(config: TrainConfig, model_config: ModelConfig, train_bags: Sequence[TileBag],
          val_bags: Sequence[TileBag], params: ModelParams | None = None) -> TrainResult:
    task = model_config.task
    if task == "classification":
        if len({b.label for b in train_bags}) < 2:
            raise ConfigError("training set needs at least two classes")
    elif not any(isinstance(b.label, SurvivalLabel) and b.label.event for b in train_bags):
        raise ConfigError("survival training needs at least one event")

    rng = np.random.default_rng([config.seed, 3])
    p = init_model(model_config, config.seed) if params is None else params
    opt = AdamW(p.parameters(), betas=config.betas, weight_decay=config.weight_decay)
    train_orders = order_bags(train_bags, config.order, config.seed)
    val_orders = order_bags(val_bags, config.order, config.seed + 7919)
    steps_per_epoch = math.ceil(len(train_bags) / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    monitor = monitor_name(task)
    result = TrainResult(p)
    best_state, best_loss, stale, step = None, math.inf, 0, 0

    for epoch in range(config.epochs):
        perm = rng.permutation(len(train_bags))
        losses = []
        for b0 in range(0, len(perm), config.batch_size):
            idx = perm[b0:b0 + config.batch_size].tolist()
            if task == "survival":
                idx = _fix_survival_batch(idx, train_bags, rng)
            batch = [train_bags[i] for i in idx]
            lr = cosine_lr(step, total_steps, config.lr, config.lr_floor)
            try:
                with Tape() as tape:
                    outs = []
                    for i in idx:
                        window = contiguous_chunk(train_orders[i], config.max_tiles, rng)
                        outs.append(forward_detail(train_bags[i].features[window], p).outputs)
                    loss = _batch_loss(outs, batch, task)
                opt.zero_grad()
                backward(tape, loss)
            except NonFiniteError as exc:
                raise TrainingDivergedError(f"epoch {epoch} step {step}: {exc}") from exc
            del tape, outs
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDivergedError(f"epoch {epoch} step {step}: loss is {value}")
            opt.step(lr, config.grad_clip)
            losses.append(value)
            step += 1

        val, _ = evaluate(p, val_bags, val_orders, config.inf_batch)
        row = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)),
               **{f"val_{k}": v for k, v in val.items()}}
        result.history.append(row)
        log.info("epoch %d %s", epoch, row)
        score, vloss = val[monitor], val.get("loss", math.inf)
        if score > result.best_metric or (score == result.best_metric and vloss < best_loss):
            result.best_metric, best_loss, result.best_epoch = score, vloss, epoch
            best_state = {k: v.copy() for k, v in p.state_dict().items()}
            stale = 0
        else:
            stale += 1
        result.epochs_run = epoch + 1
        if stale >= config.patience:
            break

    if best_state is not None:
        p.load_state_dict(best_state)
    return result
