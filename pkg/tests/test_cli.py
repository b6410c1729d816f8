import json

import pytest

from iris_aqa.cli import main, predictions_csv, read_predictions
from iris_aqa.data import load_dataset
from iris_aqa.pipeline import ScorePrediction
from iris_aqa.rubric import truth_judgment

FAST = ["--epochs", "2", "--batch-size", "4", "--train-count", "6"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["generate", "--n", "9", "--seed", "5", "--dim", "8", "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def model(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    m, log = out / "full.iris", out / "log.csv"
    assert main(["train", "--data", str(dataset), "--out", str(m), "--log", str(log), *FAST]) == 0
    return m, log


def test_generate_is_reproducible(dataset, tmp_path):
    assert main(["generate", "--n", "9", "--seed", "5", "--dim", "8", "--out", str(tmp_path)]) == 0
    for f in dataset.iterdir():
        assert (tmp_path / f.name).read_bytes() == f.read_bytes()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["generator_seed"] == 5 and len(manifest["ids"]) == 9


def test_generate_rejects_bad_config(tmp_path):
    assert main(["generate", "--n", "3", "--dim", "4", "--out", str(tmp_path / "d")]) == 1
    assert not (tmp_path / "d" / "manifest.json").exists()


def test_train_writes_model_and_log(model):
    m, log = model
    assert m.read_bytes()[:4] == b"IRIS"
    lines = log.read_text().splitlines()
    assert lines[0] == "epoch,seg,goe,pcs,score,total" and len(lines) == 3


def test_train_is_deterministic(dataset, model, tmp_path):
    m2 = tmp_path / "again.iris"
    assert main(["train", "--data", str(dataset), "--out", str(m2), *FAST]) == 0
    assert m2.read_bytes() == model[0].read_bytes()


def test_score_only_variant(dataset, tmp_path):
    m = tmp_path / "s.iris"
    assert main(["train", "--data", str(dataset), "--variant", "score-only", "--out", str(m), *FAST]) == 0
    assert main(["evaluate", "--model", str(m), "--data", str(dataset)]) == 0
    assert main(["report", "--model", str(m), "--data", str(dataset), "--record", "perf0000"]) == 1


def test_evaluate_held_out(dataset, model, tmp_path, capsys):
    out, rec, tab = tmp_path / "m.csv", tmp_path / "r.csv", tmp_path / "t.txt"
    code = main(
        ["evaluate", "--model", str(model[0]), "--data", str(dataset), "--out", str(out),
         "--records-out", str(rec), "--table-out", str(tab)]
    )
    assert code == 0
    assert out.read_text().startswith("metric,group,value")
    assert len(rec.read_text().splitlines()) == 1 + 3  # header + held-out records
    assert tab.read_text() == capsys.readouterr().out


def test_predict_and_evaluate_predictions(dataset, model, tmp_path):
    preds, jdir = tmp_path / "p.csv", tmp_path / "j"
    assert main(["predict", "--model", str(model[0]), "--data", str(dataset), "--out", str(preds), "--judgments", str(jdir)]) == 0
    assert len(read_predictions(preds)) == 9
    assert len(list(jdir.glob("*.judgment.json"))) == 9
    assert main(["evaluate", "--predictions", str(preds), "--data", str(dataset)]) == 0


def test_perfect_predictions_correlate_fully(dataset, tmp_path, capsys):
    preds = []
    for r in load_dataset(dataset):
        j = truth_judgment(r.sheet)
        preds.append(ScorePrediction(r.id, j.total_score, j.tes_total, j.pcs_total, r.truth_labels))
    path = tmp_path / "perfect.csv"
    path.write_text(predictions_csv(preds))
    metrics = tmp_path / "m.csv"
    assert main(["evaluate", "--predictions", str(path), "--data", str(dataset), "--out", str(metrics)]) == 0
    rows = [line.split(",") for line in metrics.read_text().splitlines()[1:]]
    corr = {(m, g): float(v) for m, g, v in rows if m in ("spearman", "pearson")}
    assert len(corr) == 6 and all(v == pytest.approx(1.0) for v in corr.values())
    assert {(m, g): v for m, g, v in rows}[("dice", "all")] == "1.0"


def test_two_record_evaluation_fails(dataset, tmp_path):
    path = tmp_path / "two.csv"
    path.write_text("performance_id,total\nperf0000,100\nperf0001,90\n")
    assert main(["evaluate", "--predictions", str(path), "--data", str(dataset)]) == 1


def test_unknown_prediction_ids_fail(dataset, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("performance_id,total\nnope,1\nperf0000,2\nperf0001,3\n")
    assert main(["evaluate", "--predictions", str(path), "--data", str(dataset)]) == 1


def test_report_formats(dataset, model, tmp_path, capsys):
    assert main(["report", "--model", str(model[0]), "--data", str(dataset), "--record", "perf0003"]) == 0
    assert "Total score" in capsys.readouterr().out
    html = tmp_path / "r.html"
    args = ["report", "--model", str(model[0]), "--data", str(dataset), "--record", "perf0003", "--format", "html"]
    assert main([*args, "--out", str(html)]) == 0
    assert html.read_text().startswith("<!DOCTYPE html>")
    assert main(["report", "--model", str(model[0]), "--data", str(dataset), "--record", "zzz"]) == 1


def test_missing_dataset_is_a_validation_error(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "m.iris")]) == 1


def test_unwritable_output_is_an_io_error(dataset, tmp_path):
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "no" / "dir" / "m.iris"), *FAST]) == 2


def test_corrupt_model_is_a_validation_error(dataset, tmp_path):
    bad = tmp_path / "bad.iris"
    bad.write_bytes(b"nonsense")
    assert main(["predict", "--model", str(bad), "--data", str(dataset), "--out", str(tmp_path / "p.csv")]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(dataset, tmp_path):
    args = ["train", "--data", str(dataset), "--out", str(tmp_path / "m.iris"), "--lr", "1e300", *FAST]
    assert main(args) == 3
    assert not (tmp_path / "m.iris").exists()


def test_config_file_sets_defaults(dataset, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 1, "batch_size": 4, "train_count": 6, "variant": "tes-pcs"}))
    log = tmp_path / "log.csv"
    args = ["--config", str(cfg), "train", "--data", str(dataset), "--out", str(tmp_path / "m.iris"), "--log", str(log)]
    assert main(args) == 0
    assert len(log.read_text().splitlines()) == 2
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(args) == 1


def test_ablation_command(dataset, tmp_path, capsys):
    out = tmp_path / "abl.csv"
    args = ["ablation", "--data", str(dataset), "--variants", "score-only", "subscores", "--out", str(out), *FAST]
    assert main(args) == 0
    assert "score-only" in capsys.readouterr().out
    assert len(out.read_text().splitlines()) == 3
