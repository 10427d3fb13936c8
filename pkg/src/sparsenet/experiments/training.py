"""Training, evaluation and the noise sweep."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..rng import stream
from ..tensor import Sequential, SgdConfig, loss_and_backward, sgd_update
from .mnist import MnistDataset
from .noise import NoiseSpec, add_noise_batch

log = logging.getLogger(__name__)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_acc: float | None
    seconds: float = 0.0


@dataclass
class TrainResult:
    model: Sequential
    history: list[EpochLog] = field(default_factory=list)


def epoch_batch_size(cfg: SgdConfig, epoch: int, sparse: bool) -> int:
    # small batches in the first epoch let duty cycles settle
    return cfg.first_epoch_batch_size if sparse and epoch == 0 else cfg.batch_size


def train(model: Sequential, cfg: SgdConfig, dataset: MnistDataset, seed: int,
          sparse: bool = False, validation: MnistDataset | None = None) -> TrainResult:
    """Plain SGD on mean cross-entropy; deterministic given ``seed``."""
    x_all = dataset.as_input().astype(model.dtype, copy=False)
    y_all = dataset.labels
    result = TrainResult(model)
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        lr = cfg.lr_at(epoch)
        bs = epoch_batch_size(cfg, epoch, sparse)
        order = stream(seed, "data", epoch).permutation(len(dataset))
        total, seen = 0.0, 0
        for i in range(0, len(order), bs):
            idx = order[i:i + bs]
            model.zero_grad()
            loss = loss_and_backward(model, x_all[idx], y_all[idx])
            sgd_update(model, lr)
            total += loss * len(idx)
            seen += len(idx)
        val_acc = evaluate(model, validation) if validation is not None else None
        entry = EpochLog(epoch + 1, lr, total / max(seen, 1), val_acc, time.perf_counter() - start)
        log.info("%s epoch %d lr=%.4g loss=%.4f val=%s (%.0fs)", model.name, entry.epoch, lr,
                 entry.train_loss, val_acc, entry.seconds)
        result.history.append(entry)
    return result


def evaluate(model, dataset: MnistDataset, images: np.ndarray | None = None) -> float:
    """Accuracy in inference mode (inflated k, frozen duty cycles)."""
    x = dataset.as_input() if images is None else images[:, None]
    return float(np.mean(model.predict(x) == dataset.labels))


@dataclass
class ResultsRecord:
    network: str
    seed: int
    test_acc: float
    level_accuracy: dict[float, float]
    level_correct: dict[float, int]

    @property
    def noise_score(self) -> int:
        """Total correct classifications over all noise levels."""
        return int(sum(self.level_correct.values()))


def noisy_test_sets(dataset: MnistDataset, spec: NoiseSpec, eval_seed: int):
    """Yield ``(eta, images)``; identical for every model given ``eval_seed``."""
    for i, eta in enumerate(spec.levels):
        yield eta, add_noise_batch(dataset.images, eta, spec.noise_value, stream(eval_seed, "eval", i))


def noise_sweep(model, dataset: MnistDataset, spec: NoiseSpec, eval_seed: int,
                network: str = "", seed: int = 0) -> ResultsRecord:
    acc, correct = {}, {}
    for eta, images in noisy_test_sets(dataset, spec, eval_seed):
        hits = int(np.sum(model.predict(images[:, None]) == dataset.labels))
        correct[eta] = hits
        acc[eta] = hits / len(dataset)
    return ResultsRecord(network or getattr(model, "name", ""), seed, acc[spec.levels[0]], acc, correct)


def summarize(records: list[ResultsRecord]) -> dict:
    """Mean and sample standard deviation across seeds."""
    acc = np.array([r.test_acc for r in records]) * 100
    score = np.array([r.noise_score for r in records], dtype=np.float64)
    ddof = 1 if len(records) > 1 else 0
    return {
        "network": records[0].network,
        "seeds": len(records),
        "test_mean": acc.mean(), "test_std": acc.std(ddof=ddof),
        "noise_mean": score.mean(), "noise_std": score.std(ddof=ddof),
    }


def format_summary(summary: dict) -> str:
    return (f"{summary['network']:<20} {summary['test_mean']:.2f} ± {summary['test_std']:.2f}   "
            f"{summary['noise_mean']:,.0f} ± {summary['noise_std']:,.0f}")
