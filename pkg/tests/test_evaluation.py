import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
import pumpad.evaluation as ev
from pumpad.config import grid_windows
from pumpad.detectors import PERCENTILES, ThresholdRule
from pumpad.errors import CoverageGap, MixedCoordinates, OverlapViolation, SingleClass
from pumpad.evaluation import (
    AGGREGATE_COLUMNS,
    MAX_ACROSS_FOLDS,
    MEAN_ACROSS_FOLDS,
    REPORT_COLUMNS,
    MetricRow,
    SweepSpec,
    aggregate,
    aggregates_csv,
    auc_roc,
    average_accuracy,
    build_folds,
    cell_seed,
    parse_path,
    report_csv,
    run_sweep,
    summarize,
    summary_dict,
)
from pumpad.signals import GaussianPlan, LabeledSignal, Segment
from pumpad.synth import FoldSpec

TABLE5 = [
    Segment("abrupt-25-normal", "normal", 0, 10),
    Segment("abrupt-25-abnormal", "abnormal", 10, 20),
    Segment("abrupt-50-normal", "normal", 20, 30),
    Segment("abrupt-50-abnormal", "abnormal", 30, 40),
    Segment("abrupt-75-normal", "normal", 40, 50),
    Segment("abrupt-75-abnormal", "abnormal", 50, 60),
    Segment("gradual-75-normal", "normal", 60, 70),
    Segment("gradual-75-abnormal", "abnormal", 70, 80),
    Segment("msl-normal", "normal", 80, 90),
    Segment("constflow-normal", "normal", 90, 100),
]
TABLE5_FOLDS = [
    FoldSpec(1, ("abrupt-25-normal", "abrupt-50-normal")),
    FoldSpec(2, ("abrupt-75-normal",)),
    FoldSpec(3, ("gradual-75-normal",)),
    FoldSpec(4, ("msl-normal",)),
    FoldSpec(5, ("constflow-normal",)),
]


# -------------------------------------------------------------------- folds


def test_table5_folds():
    folds = build_folds(TABLE5, TABLE5_FOLDS)
    assert len(folds) == 5
    f1 = folds[0]
    assert set(f1.test_segments) == {
        "abrupt-25-normal", "abrupt-50-normal",
        "abrupt-25-abnormal", "abrupt-50-abnormal", "abrupt-75-abnormal", "gradual-75-abnormal",
    }
    abnormal = {s.id for s in TABLE5 if s.is_abnormal}
    for f in folds:
        assert not abnormal & set(f.train_segments)
        assert abnormal <= set(f.test_segments)
        assert not set(f.train_segments) & set(f.test_segments)
    # each normal is test data in exactly one fold
    normals = [s.id for s in TABLE5 if not s.is_abnormal]
    for sid in normals:
        assert sum(sid in f.test_segments for f in folds) == 1


def test_normal_listed_twice():
    specs = TABLE5_FOLDS[:-1] + [FoldSpec(5, ("constflow-normal", "msl-normal"))]
    with pytest.raises(CoverageGap):
        build_folds(TABLE5, specs)


def test_normal_never_listed():
    with pytest.raises(CoverageGap):
        build_folds(TABLE5, TABLE5_FOLDS[:-1])


def test_abnormal_as_test_normal():
    specs = TABLE5_FOLDS[:-1] + [FoldSpec(5, ("constflow-normal", "msl-abnormal"))]
    with pytest.raises(CoverageGap):
        build_folds(TABLE5, specs)
    specs = TABLE5_FOLDS[:-1] + [FoldSpec(5, ("constflow-normal", "gradual-75-abnormal"))]
    with pytest.raises(OverlapViolation):
        build_folds(TABLE5, specs)


def test_needs_abnormal_and_train():
    normals = [s for s in TABLE5 if not s.is_abnormal]
    with pytest.raises(CoverageGap):
        build_folds(normals, TABLE5_FOLDS)
    with pytest.raises(CoverageGap):
        build_folds(TABLE5, [FoldSpec(1, tuple(s.id for s in normals))])


# ---------------------------------------------------------------------- auc


def test_auc_examples():
    assert auc_roc([0.1, 0.2, 0.9, 0.8], [0, 0, 1, 1]) == 1.0
    assert auc_roc([0.4] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert auc_roc([3, 1, 2], [1, 0, 0]) == 1.0
    assert auc_roc([2, 1, 3], [1, 0, 0]) == 0.5
    with pytest.raises(SingleClass):
        auc_roc([1.0, 2.0], [1, 1])


@settings(max_examples=300, deadline=None)
@given(
    data=st.lists(st.tuples(st.integers(0, 8), st.booleans()), min_size=2, max_size=50).filter(
        lambda d: 0 < sum(b for _, b in d) < len(d)
    )
)
def test_auc_matches_pairs(data):
    scores = [float(s) / 4 for s, _ in data]
    labels = [int(b) for _, b in data]
    assert auc_roc(scores, labels) == oracles.auc_pairs(scores, labels)


# ----------------------------------------------------------------- accuracy


def test_accuracy_examples():
    labels = np.r_[np.ones(10), np.zeros(10)]
    scores = np.r_[np.r_[np.full(8, 5.0), np.full(2, 0.0)], np.r_[np.full(9, 0.0), 5.0]]
    rule = ThresholdRule(0.1, 1.0)
    assert math.isclose(average_accuracy(scores, labels, rule), 0.85, rel_tol=1e-15)
    assert average_accuracy(labels * 2, labels, rule) == 1.0
    assert average_accuracy(np.full(20, 3.0), labels, rule) == 0.5


@settings(max_examples=100, deadline=None)
@given(
    seed=st.integers(0, 2**16),
    zeta=st.floats(-2, 2),
    f=st.sampled_from([np.exp, np.arctan, lambda v: v**3, lambda v: 7 * v - 3]),
)
def test_accuracy_monotone_invariance(seed, zeta, f):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=40)
    y = np.r_[np.ones(20), np.zeros(20)]
    a = average_accuracy(s, y, ThresholdRule(0.1, zeta))
    b = average_accuracy(f(s), y, ThresholdRule(0.1, float(f(np.float64(zeta)))))
    assert a == b


# ---------------------------------------------------------------- aggregate


def row(fold, auc, acc=0.5, model="iforest", tag=""):
    return MetricRow(model, "impeller", "statistical", 1.0, 0.0, fold, 0.1, auc, acc, error_tag=tag)


def test_aggregate_examples():
    rows = [row(i + 1, a) for i, a in enumerate([0.9, 0.8, 0.7, 0.6, 0.5])]
    (mx,) = aggregate(rows, MAX_ACROSS_FOLDS)
    (mn,) = aggregate(rows, MEAN_ACROSS_FOLDS)
    assert mx["auc_roc"] == 0.9 and math.isclose(mn["auc_roc"], 0.7, rel_tol=1e-15)
    single = [row(3, 0.42, 0.61)]
    assert aggregate(single, "max")[0]["auc_roc"] == aggregate(single, "mean")[0]["auc_roc"] == 0.42
    (a,) = summarize(rows)
    assert a.max_auc >= a.mean_auc and a.n_folds == 5


def test_aggregate_skips_failed_and_checks_coordinates():
    rows = [row(1, 0.9), row(2, math.nan, tag="Diverged")]
    (a,) = summarize(rows)
    assert a.n_folds == 1 and a.max_auc == 0.9
    with pytest.raises(MixedCoordinates):
        aggregate([row(1, 0.9), row(1, 0.8)], "max")
    with pytest.raises(ValueError):
        aggregate(rows, "median")


def test_aggregate_columns_mirror_table2():
    assert {"mean_auc", "mean_acc", "max_auc", "max_acc"} <= set(AGGREGATE_COLUMNS)


# ------------------------------------------------------------------- sweeps


def test_full_grid_row_count():
    spec = SweepSpec(
        models=tuple((m, {}) for m in ("iforest", "knn", "cblof", "copod", "autoencoder", "deepsvdd")),
        selections=tuple(f"s{i}" for i in range(10)),
        paths=("statistical", "spectral"),
        windows=grid_windows(),
        thresholds=PERCENTILES,
    )
    assert len(spec.windows) == 16
    assert spec.n_rows(5) == 48_000


def test_cell_seed_is_stable():
    a = cell_seed(7, "knn", "impeller", "statistical", 1.0, 0.0, 1)
    assert a == cell_seed(7, "knn", "impeller", "statistical", 1.0, 0.0, 1)
    assert a != cell_seed(8, "knn", "impeller", "statistical", 1.0, 0.0, 1)
    assert 0 <= a < 2**63


def test_parse_path():
    assert parse_path("both") == "both"
    assert parse_path("raw_s100") == GaussianPlan(100)
    for bad in ("raw_sx", "temporal"):
        with pytest.raises(ValueError):
            parse_path(bad)


def small_signal(seed=0):
    """Three normal segments and one louder abnormal one at 100 Hz."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(800, 2))
    x[600:] *= 3.0
    segs = [
        Segment("a-normal", "normal", 0, 200),
        Segment("b-normal", "normal", 200, 400),
        Segment("c-normal", "normal", 400, 600),
        Segment("a-abnormal", "abnormal", 600, 800),
    ]
    return LabeledSignal(x, 100.0, ["p", "q"], segs, impeller_channel=1)


SMALL_FOLDS = [FoldSpec(1, ("a-normal",)), FoldSpec(2, ("b-normal",)), FoldSpec(3, ("c-normal",))]


def small_spec(**kw):
    base = dict(
        models=(("knn", {}), ("copod", {})),
        selections=("q", "all"),
        paths=("statistical", "raw_s10"),
        windows=((0.2, 0.0), (0.2, 0.5)),
        thresholds=(0.1, 0.2),
        master_seed=3,
    )
    base.update(kw)
    return SweepSpec(**base)


def test_sweep_rows_and_determinism():
    sig, spec = small_signal(), small_spec()
    rep = run_sweep(sig, SMALL_FOLDS, spec)
    assert len(rep.rows) == spec.n_rows(3) and not rep.failed
    assert all(0 <= r.auc_roc <= 1 and 0 <= r.avg_accuracy <= 1 for r in rep.rows)
    assert all(r.n_train > 0 and r.n_test > r.n_test_abnormal > 0 for r in rep.rows)
    again = run_sweep(sig, SMALL_FOLDS, spec)
    assert report_csv(rep) == report_csv(again)
    assert aggregates_csv(rep) == aggregates_csv(again)
    assert len(rep.aggregates) == spec.n_rows(1)
    # the loud abnormal segment is easy once RMS is a feature
    assert min(a.max_auc for a in rep.aggregates if a.path == "statistical") > 0.95


def test_sweep_no_leakage(monkeypatch):
    seen = []
    real = ev.segment_windows

    def spy(signal, plan, segments=None):
        ws = real(signal, plan, segments=segments)
        seen.append(ws)
        return ws

    monkeypatch.setattr(ev, "segment_windows", spy)
    sig = small_signal()
    rep = run_sweep(sig, SMALL_FOLDS, small_spec(paths=("statistical",), selections=("all",)))
    assert len(seen) == len(rep.folds) * 2
    for i, ws in enumerate(seen):
        fold = rep.folds[i // 2]
        train = set(fold.train_segments)
        test_ids = {ws.segment_ids[r] for r in ws.rows_for_segments(fold.test_segments)}
        assert not test_ids & train


def test_standardizer_fit_on_train_only(monkeypatch):
    fitted = []
    real = ev.fit_standardizer

    def spy(signal, segments):
        fitted.append(tuple(segments))
        return real(signal, segments)

    monkeypatch.setattr(ev, "fit_standardizer", spy)
    rep = run_sweep(small_signal(), SMALL_FOLDS, small_spec(selections=("all",)))
    assert fitted == [f.train_segments for f in rep.folds]


def test_failed_cell_is_recorded():
    spec = small_spec(models=(("knn", {"k": 10_000}), ("copod", {})))
    rep = run_sweep(small_signal(), SMALL_FOLDS, spec)
    bad = [r for r in rep.rows if r.model == "knn"]
    assert bad and all(r.error_tag == "TooFewRows" and math.isnan(r.auc_roc) for r in bad)
    assert all(r.ok for r in rep.rows if r.model == "copod")
    assert {a.model for a in rep.aggregates} == {"copod"}
    assert summary_dict(rep)["failed_cells"]


def test_report_schema_and_summary():
    rep = run_sweep(small_signal(), SMALL_FOLDS, small_spec(), meta={"master_seed": 3})
    lines = report_csv(rep).splitlines()
    assert lines[0] == "# master_seed=3"
    assert lines[1].split(",") == list(REPORT_COLUMNS)
    summary = summary_dict(rep)
    cell = summary["results"]["knn"]["q"]["statistical"]["tau=0.2,o=0.0"]
    assert set(cell) == {"max_auc", "mean_auc", "n_folds", "max_acc", "mean_acc"}
    assert set(cell["max_acc"]) == {"0.1", "0.2"}
    assert summary["spec"]["models"][0] == ["knn", {"k": 5}]
    json.dumps(summary)


def test_workers_do_not_change_output():
    sig, spec = small_signal(), small_spec()
    assert report_csv(run_sweep(sig, SMALL_FOLDS, spec, workers=2)) == report_csv(run_sweep(sig, SMALL_FOLDS, spec))
