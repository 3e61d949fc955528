import csv

import pytest

from capsctx.cli import main
from capsctx.config import load_config

SMALL = """
stem_channels = 4
capsule_depth = 2
primary_dim = 4
decision_dim = 4
epochs = 1
batch_size = 8
train_size = 12
test_size = 4
dtype = float64
"""


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--out", str(root / "data"), "--n", "16"]) == 0
    (root / "small.txt").write_text(SMALL)
    return root


def test_train_then_eval_round_trip(corpus, capsys):
    out = corpus / "run"
    assert main(["train", "--config", str(corpus / "small.txt"), "--data",
                 str(corpus / "data" / "manifest.csv"), "--out", str(out)]) == 0
    logged = capsys.readouterr().out
    train_map = float(logged.split("train_mAP=")[1].split()[0])
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    final_train = float([r for r in rows if r["split"] == "train"][-1]["mAP"])
    assert main(["eval", "--checkpoint", str(out / "checkpoint.ctns"),
                 "--data", str(out / "train_manifest.csv")]) == 0
    evaluated = float(capsys.readouterr().out.split("mAP=")[1].split()[0])
    assert abs(evaluated - final_train) < 1e-6
    assert abs(train_map - final_train) < 1e-6


def test_ablate_schema(corpus):
    out = corpus / "abl"
    assert main(["ablate", "--config", str(corpus / "small.txt"), "--data",
                 str(corpus / "data" / "manifest.csv"), "--seeds", "0,1", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "comparison.csv")))
    assert len(rows) == 3 * 2
    assert {r["config"] for r in rows} == {"baseline", "rw+crf", "rw+crf+corr"}
    conv = list(csv.DictReader(open(out / "convergence.csv")))
    assert len(conv) == 3 * 2 * 1


def test_print_defaults_round_trip(tmp_path, capsys):
    assert main(["--print-defaults"]) == 0
    path = tmp_path / "d.txt"
    path.write_text(capsys.readouterr().out)
    from capsctx.config import ModelConfig
    assert load_config(path) == ModelConfig()


def test_gradcheck_exit_zero(capsys):
    assert main(["gradcheck", "--module", "crf-module", "--tol", "1e-4", "--seeds", "3"]) == 0
    assert capsys.readouterr().out.startswith("PASS module=crf-module")


@pytest.mark.parametrize("argv,code,kind", [
    (["train", "--bogus"], 2, "usage"),
    (["gradcheck", "--module", "nope"], 2, "usage"),
    ([], 2, "usage"),
    (["train", "--config", "/no/such/file", "--data", "x", "--out", "y"], 3, "io"),
    (["eval", "--checkpoint", "/no/such.ctns", "--data", "x"], 3, "io"),
])
def test_error_codes(argv, code, kind, capsys):
    assert main(argv) == code
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and err.startswith(f"error: {kind}: ")


def test_malformed_config_code(tmp_path, corpus, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("f = 4\n")
    assert main(["train", "--config", str(bad), "--data", str(corpus / "data" / "manifest.csv"),
                 "--out", str(tmp_path / "o")]) == 4
    assert capsys.readouterr().err == "error: config: f must be odd\n"


def test_bad_manifest_is_a_data_error(tmp_path, capsys):
    m = tmp_path / "m.csv"
    m.write_text("path,labels\nmissing.ctns,1\n")
    assert main(["train", "--data", str(m), "--out", str(tmp_path / "o")]) == 1
    assert capsys.readouterr().err.startswith("error: data: ")
