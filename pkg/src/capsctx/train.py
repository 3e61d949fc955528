"""Mini-batch training with Adam, per-epoch evaluation, CSV logs, checkpoints."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ctns
from . import tensor as T
from .config import ModelConfig
from .metrics import EvalReport, margin_loss, mean_average_precision
from .model import CapsNet

log = logging.getLogger(__name__)

CSV_COLUMNS = ("epoch", "split", "mAP", "loss", "seconds")


class TrainingError(RuntimeError):
    pass


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        if self.lr == 0:
            return
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.assign(p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps))


@dataclass
class Dataset:
    images: np.ndarray   # (n, H, W, C)
    labels: np.ndarray   # (n, J) multi-hot
    paths: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        paths = [self.paths[i] for i in idx] if self.paths else []
        return Dataset(self.images[idx], self.labels[idx], paths)


def evaluate(model: CapsNet, data: Dataset, batch_size: int = 64) -> EvalReport:
    c = model.config
    scores = model.predict_scores(data.images, batch_size)
    report = mean_average_precision(scores, data.labels, c.threshold)
    with T.no_tape():
        loss = margin_loss(T.Tensor(scores), data.labels.astype(scores.dtype),
                           c.m_plus, c.m_minus, c.lambda_down)
    report.loss = loss.item() / max(len(data), 1)
    return report


def train_step(model: CapsNet, opt: Adam, images, labels) -> float:
    c = model.config
    with T.Tape() as tape:
        result = model.forward(images)
        loss = margin_loss(result.scores, labels.astype(model.dtype),
                           c.m_plus, c.m_minus, c.lambda_down)
        loss = loss / float(len(images))
    T.backward(tape, loss)
    opt.step()
    model.enforce_constraints()
    return loss.item()


@dataclass
class TrainResult:
    model: CapsNet
    rows: list            # dicts with CSV_COLUMNS
    final_train: EvalReport
    final_test: EvalReport | None


def train(config: ModelConfig, train_data: Dataset, test_data: Dataset | None = None,
          out_dir=None, clock=time.perf_counter, eval_train: bool = True,
          stop_at_train_map: float | None = None) -> TrainResult:
    """Train from scratch; with ``out_dir`` writes metrics.csv, checkpoint.ctns, config.txt.

    Every source of randomness is derived from ``config.seed``. With
    ``stop_at_train_map`` training ends after the first epoch whose train mAP
    reaches that value.
    """
    if len(train_data) == 0:
        raise TrainingError("training set is empty")
    model = CapsNet(config)
    opt = Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng([config.seed, 1])
    rows = []
    final_train = final_test = None
    start = clock()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_data))
        losses = []
        for batch_idx, lo in enumerate(range(0, len(order), config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            try:
                loss = train_step(model, opt, train_data.images[idx], train_data.labels[idx])
            except T.NonFiniteError as exc:
                raise TrainingError(f"non-finite value in epoch {epoch}, batch {batch_idx}: {exc}") from None
            losses.append(loss)
        if eval_train:
            final_train = evaluate(model, train_data)
            rows.append(_row(epoch, "train", final_train.mAP, final_train.loss, clock() - start))
        if test_data is not None and len(test_data):
            final_test = evaluate(model, test_data)
            rows.append(_row(epoch, "test", final_test.mAP, final_test.loss, clock() - start))
        log.info("epoch %d loss %.4f train mAP %s test mAP %s", epoch, float(np.mean(losses)),
                 _fmt(final_train), _fmt(final_test))
        if (stop_at_train_map is not None and final_train is not None
                and final_train.mAP >= stop_at_train_map):
            break
    if out_dir is not None:
        save_run(out_dir, model, rows)
    return TrainResult(model, rows, final_train, final_test)


def _fmt(report):
    return "-" if report is None else f"{report.mAP:.4f}"


def _row(epoch, split, mAP, loss, seconds):
    return {"epoch": epoch, "split": split, "mAP": mAP, "loss": loss, "seconds": seconds}


def write_metrics_csv(path, rows, seconds: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow([r["epoch"], r["split"], repr(float(r["mAP"])), repr(float(r["loss"])),
                             f"{r['seconds']:.3f}" if seconds else "0"])


def save_run(out_dir, model: CapsNet, rows) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", rows)
    ctns.save_checkpoint(out / "checkpoint.ctns", model.state_dict())
    (out / "config.txt").write_text(model.config.dumps(), encoding="utf-8")


def load_model(checkpoint, config: ModelConfig) -> CapsNet:
    model = CapsNet(config)
    model.load_state_dict(ctns.load_checkpoint(checkpoint))
    return model
