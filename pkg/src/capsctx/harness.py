"""Ablation rows, convergence curves and their CSV files."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .train import Dataset, evaluate, train

log = logging.getLogger(__name__)

# name -> (use_rw, use_crf, use_corr)
ABLATION_ROWS = {
    "baseline": (False, False, False),
    "rw+crf": (True, True, False),
    "rw+crf+corr": (True, True, True),
}

COMPARISON_COLUMNS = ("config", "seed", "test_mAP", "train_mAP", "seconds")
CONVERGENCE_COLUMNS = ("config", "seed", "epoch", "test_mAP")


def row_config(config: ModelConfig, row: str, seed: int) -> ModelConfig:
    rw, crf, corr = ABLATION_ROWS[row]
    return config.replace(use_rw=rw, use_crf=crf, use_corr=corr, seed=seed)


@dataclass
class RunRecord:
    config: str
    seed: int
    test_mAP: float
    train_mAP: float
    seconds: float
    curve: list          # test mAP per epoch


def run_one(name: str, config: ModelConfig, train_data: Dataset, test_data: Dataset,
            clock=time.perf_counter) -> RunRecord:
    start = clock()
    result = train(config, train_data, test_data, eval_train=False, clock=clock)
    curve = [r["mAP"] for r in result.rows if r["split"] == "test"]
    train_map = evaluate(result.model, train_data).mAP
    test_map = curve[-1] if curve else float("nan")
    rec = RunRecord(name, config.seed, test_map, train_map, clock() - start, curve)
    log.info("%s seed %d: test mAP %.4f train mAP %.4f (%.0fs)", name, config.seed,
             rec.test_mAP, rec.train_mAP, rec.seconds)
    return rec


def run_ablation(config: ModelConfig, train_data: Dataset, test_data: Dataset, seeds,
                 rows=tuple(ABLATION_ROWS), clock=time.perf_counter) -> list[RunRecord]:
    return [run_one(row, row_config(config, row, seed), train_data, test_data, clock)
            for seed in seeds for row in rows]


def summarize(records) -> dict[str, float]:
    """Mean test mAP per config name."""
    out: dict[str, list] = {}
    for r in records:
        out.setdefault(r.config, []).append(r.test_mAP)
    return {k: float(np.mean(v)) for k, v in out.items()}


def epochs_to_fraction(curve, fraction: float = 0.9, tail: int = 3) -> int:
    """First epoch (1-based) at which the curve reaches ``fraction`` of its plateau.

    The plateau is the mean of the last ``tail`` epochs.
    """
    curve = np.asarray(curve, dtype=float)
    if curve.size == 0:
        raise ValueError("empty curve")
    plateau = curve[-tail:].mean()
    hits = np.nonzero(curve >= fraction * plateau)[0]
    return int(hits[0]) + 1 if hits.size else curve.size


def write_comparison_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARISON_COLUMNS)
        for r in records:
            w.writerow([r.config, r.seed, repr(r.test_mAP), repr(r.train_mAP), f"{r.seconds:.3f}"])


def write_convergence_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CONVERGENCE_COLUMNS)
        for r in records:
            for epoch, value in enumerate(r.curve, start=1):
                w.writerow([r.config, r.seed, epoch, repr(float(value))])
