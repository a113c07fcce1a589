"""SMAPE loss and the training loop.

The loss is the symmetric mean absolute percentage error with an epsilon
floor under the denominator: |pred| + |truth| is zero for clean-air hours
and would otherwise blow up the gradients. Batches are averaged by
scaling each window's loss before backward, so gradients accumulate to
the batch mean in a deterministic order.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tt
from .errors import ConfigError, ContractError, NumericError
from .layers import Adam
from .tensor import Tensor


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    smape_epsilon: float = 1.0     # metric units (ug/m3)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_steps: int | None = None   # optional global Adam-step cap

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.smape_epsilon <= 0:
            raise ConfigError("smape_epsilon must be positive")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def smape_loss(pred: Tensor, truth: np.ndarray, eps: float = 1.0) -> Tensor:
    """(2/tau) * sum |p - y| / max(|p| + |y|, eps), differentiable in pred."""
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ContractError(
            f"smape_loss: prediction {pred.shape} vs truth {truth.shape}"
        )
    if truth.ndim != 1 or truth.size == 0:
        raise ContractError("smape_loss expects nonempty vectors")
    if np.any(truth < 0):
        raise ContractError("smape_loss: truth must be nonnegative")
    diff = tt.abs_(pred - truth)
    denom = tt.maximum_scalar(tt.abs_(pred) + Tensor(truth), eps)
    return tt.sum_all(diff / denom) * (2.0 / truth.size)


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    val_smape: float
    val_rmse: float
    seconds: float


@dataclass
class TrainReport:
    rows: list[EpochRow] = field(default_factory=list)
    best_epoch: int = -1
    best_val_smape: float = float("inf")
    checkpoint_path: str | None = None
    stopped_early: bool = False
    total_steps: int = 0

    def to_csv(self, path) -> None:
        lines = ["epoch,train_loss,val_smape,val_rmse,seconds"]
        for r in self.rows:
            lines.append(f"{r.epoch},{r.train_loss!r},{r.val_smape!r},"
                         f"{r.val_rmse!r},{r.seconds:.3f}")
        Path(path).write_text("\n".join(lines) + "\n")

    def summary(self) -> dict:
        return {
            "epochs": len(self.rows),
            "best_epoch": self.best_epoch,
            "best_val_smape": self.best_val_smape,
            "stopped_early": self.stopped_early,
            "total_steps": self.total_steps,
            "checkpoint_path": self.checkpoint_path,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True))


def validate_windows(model, windows, eps: float) -> tuple[float, float]:
    """Mean SMAPE and RMSE of floored predictions over a window list."""
    if not windows:
        raise ContractError("empty validation split")
    terms = []
    sq = []
    for w in windows:
        pred = np.maximum(model.forward(w).data, 0.0)
        terms.append(2.0 * np.abs(pred - w.y) / np.maximum(np.abs(pred) + np.abs(w.y), eps))
        sq.append((pred - w.y) ** 2)
    return float(np.mean(np.concatenate(terms))), float(np.sqrt(np.mean(np.concatenate(sq))))


def train(model, train_windows, val_windows, cfg: TrainConfig):
    """Mini-batch Adam training with best-on-validation early stopping.

    Returns (report, best_params) where best_params maps parameter names
    to copies of the best-validation values; the model itself is left
    holding those best values.
    """
    if not train_windows or not val_windows:
        raise ContractError("train and validation splits must both be nonempty")
    train_keys = {(w.station_index, w.start) for w in train_windows}
    if any((w.station_index, w.start) in train_keys for w in val_windows):
        raise ContractError("validation windows overlap the training split")
    params = model.parameters()
    if not params:
        raise ContractError(f"model kind {model.kind!r} has nothing to train")

    opt = Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    report = TrainReport()
    best: dict[str, np.ndarray] = {}
    since_best = 0

    order = np.arange(len(train_windows))
    done = False
    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        rng.shuffle(order)
        losses = []
        for b0 in range(0, len(order), cfg.batch_size):
            batch = order[b0:b0 + cfg.batch_size]
            opt.zero_grad()
            batch_loss = 0.0
            for wi in batch:
                w = train_windows[wi]
                try:
                    loss = smape_loss(model.forward(w), w.y, cfg.smape_epsilon)
                    scaled = loss * (1.0 / len(batch))
                    tt.backward(scaled)
                except NumericError as exc:
                    raise NumericError(
                        f"non-finite loss at epoch {epoch} on window "
                        f"(station={w.station_id}, start={w.start}): {exc}"
                    ) from exc
                batch_loss += loss.item() / len(batch)
            opt.step()
            losses.append(batch_loss)
            report.total_steps += 1
            if cfg.max_steps is not None and report.total_steps >= cfg.max_steps:
                done = True
                break

        val_smape, val_rmse = validate_windows(model, val_windows, cfg.smape_epsilon)
        report.rows.append(EpochRow(
            epoch=epoch, train_loss=float(np.mean(losses)),
            val_smape=val_smape, val_rmse=val_rmse,
            seconds=time.perf_counter() - t0,
        ))
        if val_smape < report.best_val_smape:
            report.best_val_smape = val_smape
            report.best_epoch = epoch
            best = {name: p.data.copy() for name, p in params}
            since_best = 0
        else:
            since_best += 1
            if since_best > cfg.patience:
                report.stopped_early = True
                break
        if done:
            break

    if best:
        for name, p in params:
            p.data[:] = best[name]
    else:
        best = {name: p.data.copy() for name, p in params}
    return report, best
