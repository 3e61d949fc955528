import numpy as np
import pytest

from capsctx import tensor as T
from capsctx.metrics import average_precision, margin_loss, mean_average_precision


def loss_of(scores, labels):
    return margin_loss(T.Tensor(np.asarray(scores, float)), np.asarray(labels, float)).item()


def test_margin_loss_examples():
    assert loss_of([0.95, 0.05], [1, 0]) == 0.0
    assert loss_of([0.0], [1]) == pytest.approx(0.81, abs=1e-12)
    assert loss_of([1.0], [0]) == pytest.approx(0.405, abs=1e-12)


def test_margin_loss_zero_iff_inside_margins():
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = rng.uniform(0, 1, 6)
        y = rng.integers(0, 2, 6)
        inside = np.all(np.where(y == 1, s >= 0.9, s <= 0.1))
        assert (loss_of(s, y) == 0.0) == inside


def test_ap_hand_example():
    assert abs(average_precision([0.9, 0.8, 0.7], [1, 0, 1]) - 5 / 6) < 1e-12
    assert average_precision([0.1, 0.5, 0.3], [1, 1, 1]) == 1.0
    assert average_precision([0.9, 0.1, 0.5], [1, 0, 1]) == 1.0


def test_ap_ties_by_index():
    # equal scores: earlier sample ranks first
    assert average_precision([0.5, 0.5], [0, 1]) == pytest.approx(0.5)
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0


def test_map_skips_classes_without_positives():
    scores = np.array([[0.9, 0.2], [0.1, 0.3]])
    labels = np.array([[1, 0], [0, 0]])
    rep = mean_average_precision(scores, labels)
    assert rep.mAP == 1.0 and rep.no_positive_classes == [1]
    assert np.isnan(rep.ap[1])


def test_precision_recall_at_threshold():
    scores = np.array([[0.9], [0.6], [0.4], [0.2]])
    labels = np.array([[1], [0], [1], [0]])
    rep = mean_average_precision(scores, labels, 0.5)
    assert rep.precision[0] == 0.5 and rep.recall[0] == 0.5


def test_rank_invariance():
    rng = np.random.default_rng(1)
    for _ in range(100):
        s = rng.uniform(0, 1, (30, 4))
        y = rng.integers(0, 2, (30, 4))
        y[0] = 1
        a = mean_average_precision(s, y).mAP
        b = mean_average_precision(np.exp(3 * s) - 2, y).mAP
        assert abs(a - b) < 1e-12
