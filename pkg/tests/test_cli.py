import json

import numpy as np
import pandas as pd
import pytest

from pumpad.cli import main
from pumpad.evaluation import AGGREGATE_COLUMNS, REPORT_COLUMNS
from pumpad.features import load_matrix
from pumpad.signals import LabeledSignal, Segment, save_signal
from pumpad.stats import COMPARISON_COLUMNS


@pytest.fixture(scope="module")
def short_suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("short")
    assert main(["synth", "--seed", "3", "--duration", "8", "--out", str(out)]) == 0
    return out


def eval_args(d, out, *extra):
    return ["eval", "--config", str(d / "eval.yaml"), "--output", str(out),
            "--selections", "impeller", "bearing_axial", "bearing_pl", "--models", "knn", "copod", *extra]


def test_synth_writes_suite(short_suite):
    names = {p.name for p in short_suite.iterdir()}
    assert {"signal.f32", "manifest.json", "folds.json", "eval.yaml"} <= names


def test_synth_csv_format(tmp_path):
    assert main(["synth", "--seed", "3", "--duration", "2", "--format", "csv", "--out", str(tmp_path)]) == 0
    assert "signal.csv" in (tmp_path / "eval.yaml").read_text()
    assert main(["eval", "--config", str(tmp_path / "eval.yaml"), "--dry-run"]) == 0


def test_dry_run_counts(short_suite, capsys):
    assert main(["eval", "--config", str(short_suite / "eval.yaml"), "--dry-run"]) == 0
    out = capsys.readouterr().out
    # 10 standard selections (8 singles, above_oil, all) x 4 models x 1 path x 1 window x 5 folds
    assert "cells: 200" in out and "rows: 1000" in out
    assert not (short_suite / "report.csv").exists()


def test_eval_is_byte_identical(short_suite, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(eval_args(short_suite, a)) == 0
    assert main(eval_args(short_suite, b, "--workers", "2")) == 0
    for name in ("report.csv", "summary.json", "aggregates.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    head = (a / "report.csv").read_text().splitlines()
    assert head[0].startswith("# config_sha256=") and head[0].endswith("master_seed=3")
    assert head[1].split(",") == list(REPORT_COLUMNS)
    agg = pd.read_csv(a / "aggregates.csv", comment="#")
    assert list(agg.columns) == list(AGGREGATE_COLUMNS)


def test_master_seed_changes_hash(short_suite, tmp_path):
    assert main(eval_args(short_suite, tmp_path / "a")) == 0
    assert main(eval_args(short_suite, tmp_path / "b", "--master-seed", "8")) == 0
    first = lambda p: (p / "report.csv").read_text().splitlines()[0]  # noqa: E731
    assert first(tmp_path / "a") != first(tmp_path / "b")


def test_compare_and_report(short_suite, tmp_path, capsys):
    res = tmp_path / "res"
    cfg = tmp_path / "eval.yaml"
    cfg.write_text((short_suite / "eval.yaml").read_text()
                   .replace("signal.f32", str(short_suite / "signal.f32"))
                   .replace("manifest.json", str(short_suite / "manifest.json"))
                   .replace("folds.json", str(short_suite / "folds.json"))
                   .replace("windows: [[1.0, 0.0]]", "windows: [[0.5, 0.0], [1.0, 0.0], [1.0, 0.5]]"))
    sels = ["impeller", "bearing_pl", "bearing_axial"]
    assert main(["eval", "--config", str(cfg), "--output", str(res), "--selections", *sels]) == 0
    report = str(res / "report.csv")
    # the short suite saturates the impeller at AUC 1, and Shapiro-Wilk rejects a constant sample
    assert main(["compare", "--report", report, "--group-a", "impeller", "--group-b", "bearing_axial"]) == 2
    assert "ConstantSample" in capsys.readouterr().err
    out = tmp_path / "cmp.csv"
    code = main(["compare", "--report", report, "--group-a", "bearing_pl",
                 "--group-b", "bearing_axial", "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    assert "All Models" in text and "IForest" in text and "COPOD" in text
    lines = out.read_text().splitlines()
    assert "mad=mean_abs_dev_about_mean" in lines[0] and "ci=student_t_mean" in lines[0]
    frame = pd.read_csv(out, comment="#")
    assert list(frame.columns) == list(COMPARISON_COLUMNS)
    assert frame["name"].tolist() == ["All Models", "IForest", "KNN", "CBLOF", "COPOD"]
    # every model contributes one max-AUC per window configuration
    assert frame["n_a"].tolist() == [12, 3, 3, 3, 3]

    assert main(["report", "--report", str(res / "report.csv"), "--out", str(tmp_path / "tables")]) == 0
    t2 = pd.read_csv(tmp_path / "tables" / "table2.csv", comment="#")
    assert list(t2.columns) == ["selection", "mean_auc", "mean_acc", "max_auc", "max_acc"]
    assert t2["selection"].tolist() == sels
    s5 = pd.read_csv(tmp_path / "tables" / "table_s5.csv", comment="#")
    assert set(s5["n"]) == {3} and len(s5) == 12


def test_window_featurize_train_score(short_suite, tmp_path):
    data = ["--data", str(short_suite / "signal.f32"), "--manifest", str(short_suite / "manifest.json")]
    win = tmp_path / "w.csv"
    assert main(["window", *data, "--tau", "1.0", "--overlap", "0.5", "--out", str(win)]) == 0
    frame = pd.read_csv(win, comment="#")
    assert "length=4000 stride=2000" in win.read_text().splitlines()[0]
    assert np.all(frame["end_sample"] - frame["start_sample"] == 4000)

    feats = tmp_path / "f.csv"
    assert main(["featurize", *data, "--selection", "impeller", "--features", "statistical", "--out", str(feats)]) == 0
    matrix = load_matrix(feats)
    assert matrix.values.shape == (matrix.n_rows, 13)

    model = tmp_path / "m.bin"
    assert main(["train", "--features", str(feats), "--model", "knn", "--param", "k=3",
                 "--seed", "5", "--out", str(model)]) == 0
    scores = tmp_path / "s.csv"
    assert main(["score", "--model", str(model), "--features", str(feats), "--out", str(scores)]) == 0
    s = pd.read_csv(scores, comment="#")
    assert len(s) == matrix.n_rows
    assert s.loc[s.label == 1, "score"].median() > s.loc[s.label == 0, "score"].median()
    first = scores.read_bytes()
    assert main(["score", "--model", str(model), "--features", str(feats), "--out", str(scores)]) == 0
    assert scores.read_bytes() == first


def test_featurize_raw_path(short_suite, tmp_path):
    out = tmp_path / "raw.csv"
    args = ["featurize", "--data", str(short_suite / "signal.f32"), "--manifest", str(short_suite / "manifest.json"),
            "--selection", "impeller", "--features", "raw_s500", "--out", str(out)]
    assert main(args) == 0
    assert load_matrix(out).values.shape[1] == 8


# ---------------------------------------------------------------- exit codes


def test_bad_arguments_exit_1(short_suite, capsys):
    assert main(["eval"]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["train", "--features", "x", "--model", "ocsvm", "--out", "y"]) == 1
    assert main(["eval", "--config", str(short_suite / "eval.yaml"), "--models", "svm", "--dry-run"]) == 1
    assert main(["eval", "--config", str(short_suite / "nope.yaml")]) == 1
    assert "pumpad:" in capsys.readouterr().err


def test_bad_config_keys_exit_1(short_suite, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text((short_suite / "eval.yaml").read_text() + "colour: blue\n")
    assert main(["eval", "--config", str(cfg), "--dry-run"]) == 1
    cfg.write_text("data: [unclosed\n")
    assert main(["eval", "--config", str(cfg), "--dry-run"]) == 1


def test_data_errors_exit_2(short_suite, tmp_path):
    assert main(["score", "--model", str(tmp_path / "missing.bin"), "--features", "x", "--out", "y"]) == 2
    bad = tmp_path / "report.csv"
    bad.write_text("model,selection\nknn,impeller\n")
    assert main(["compare", "--report", str(bad), "--group-a", "a", "--group-b", "b"]) == 2
    man = json.loads((short_suite / "manifest.json").read_text())
    man["segments"][0]["end_sample"] = 10**9
    (tmp_path / "m.json").write_text(json.dumps(man))
    args = ["window", "--data", str(short_suite / "signal.f32"), "--manifest", str(tmp_path / "m.json"),
            "--out", str(tmp_path / "w.csv")]
    assert main(args) == 2


def test_numerical_error_exit_3(tmp_path, capsys):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(400, 2))
    x[200:] = 0.0  # the abnormal segment is silent
    segs = [Segment("a-normal", "normal", 0, 200), Segment("a-abnormal", "abnormal", 200, 400)]
    save_signal(LabeledSignal(x, 100.0, ["p", "q"], segs), tmp_path / "x.csv", tmp_path / "x.json")
    args = ["featurize", "--data", str(tmp_path / "x.csv"), "--manifest", str(tmp_path / "x.json"),
            "--tau", "0.5", "--features", "spectral", "--out", str(tmp_path / "f.csv")]
    assert main(args) == 3
    assert "no power outside DC" in capsys.readouterr().err
