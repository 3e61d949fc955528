import pytest

from capsctx.config import ModelConfig
from capsctx.harness import ABLATION_ROWS, RunRecord, epochs_to_fraction, row_config, summarize


def test_epochs_to_fraction():
    # plateau = mean(0.8, 0.8, 0.8); 90% of it is 0.72
    assert epochs_to_fraction([0.1, 0.5, 0.71, 0.73, 0.8, 0.8, 0.8]) == 4
    assert epochs_to_fraction([0.9, 0.9, 0.9]) == 1
    with pytest.raises(ValueError):
        epochs_to_fraction([])


def test_row_configs():
    base = ModelConfig()
    for name, flags in ABLATION_ROWS.items():
        cfg = row_config(base, name, 7)
        assert (cfg.use_rw, cfg.use_crf, cfg.use_corr) == flags and cfg.seed == 7


def test_summarize_means():
    recs = [RunRecord("a", s, v, 0.0, 0.0, []) for s, v in enumerate([0.2, 0.4])]
    assert summarize(recs) == {"a": pytest.approx(0.3)}
