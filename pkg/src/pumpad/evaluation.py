"""Cross-validation folds, metrics and the model x sensor x window sweep.

A sweep is split into *groups*, one per (fold, channel selection). Inside a
group the selected channels are standardized on that fold's training
segments, then every window configuration, feature path and model is run.
Groups are independent and can run in worker processes; rows are sorted by
coordinates before anything is written, so output bytes never depend on
scheduling.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .bundle import resolve_params, train_model
from .detectors import ThresholdRule, classify, fit_threshold
from .errors import (
    CoverageGap,
    MixedCoordinates,
    OverlapViolation,
    PumpadError,
    SingleClass,
)
from .features import FEATURE_SETS, apply_feature_norm, extract_matrix, fit_feature_norm, raw_matrix
from .signals import (
    ChannelSelection,
    GaussianPlan,
    LabeledSignal,
    Segment,
    WindowingPlan,
    apply_standardizer,
    fit_standardizer,
    segment_windows,
)
from .synth import FoldSpec


@dataclass(frozen=True)
class Fold:
    fold: int
    train_segments: tuple[str, ...]
    test_segments: tuple[str, ...]


def build_folds(segments: Iterable[Segment], fold_specs: Sequence[FoldSpec]) -> list[Fold]:
    """Test = designated normals plus every abnormal segment; train = the other normals."""
    segments = list(segments)
    normals = [s.id for s in segments if not s.is_abnormal]
    abnormals = [s.id for s in segments if s.is_abnormal]
    known = {s.id: s for s in segments}
    if not abnormals:
        raise CoverageGap("no abnormal segment to test against")
    seen: dict[str, int] = {}
    for spec in fold_specs:
        for sid in spec.test_normal_segments:
            if sid not in known:
                raise CoverageGap(f"fold {spec.fold}: unknown segment {sid!r}")
            if known[sid].is_abnormal:
                raise OverlapViolation(f"fold {spec.fold}: {sid!r} is abnormal and cannot be a test normal")
            if sid in seen:
                raise CoverageGap(f"segment {sid!r} is a test normal in folds {seen[sid]} and {spec.fold}")
            seen[sid] = spec.fold
    missing = [sid for sid in normals if sid not in seen]
    if missing:
        raise CoverageGap(f"normal segments never used as test data: {missing}")
    folds = []
    for spec in fold_specs:
        test_normals = set(spec.test_normal_segments)
        train = tuple(sid for sid in normals if sid not in test_normals)
        test = tuple(sid for sid in normals if sid in test_normals) + tuple(abnormals)
        if not train:
            raise CoverageGap(f"fold {spec.fold} leaves no normal segment for training")
        if set(train) & set(test):
            raise OverlapViolation(f"fold {spec.fold}: train and test share segments")
        folds.append(Fold(spec.fold, train, test))
    return folds


def _two_class(labels: np.ndarray) -> tuple[np.ndarray, int, int]:
    labels = np.asarray(labels).astype(bool).ravel()
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass(f"need both classes, got {n_pos} abnormal and {n_neg} normal")
    return labels, n_pos, n_neg


def auc_roc(scores, labels) -> float:
    """P(abnormal outscores normal) + half P(tie), from midranks."""
    labels, n_pos, n_neg = _two_class(labels)
    scores = np.asarray(scores, dtype=np.float64).ravel()
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_accuracy(scores, labels, rule: ThresholdRule) -> float:
    """Mean of the abnormal-class and normal-class recall."""
    labels, _, _ = _two_class(labels)
    pred = classify(scores, rule).astype(bool)
    tpr = float(np.mean(pred[labels]))
    tnr = float(np.mean(~pred[~labels]))
    return (tpr + tnr) / 2.0


REPORT_COLUMNS = (
    "model", "selection", "path", "tau", "overlap", "fold", "threshold",
    "auc_roc", "avg_accuracy", "zeta",
    "n_train", "n_test", "n_test_abnormal",
    "seed", "wall_ms", "error_tag",
)


@dataclass(frozen=True)
class MetricRow:
    model: str
    selection: str
    path: str
    tau: float
    overlap: float
    fold: int
    threshold: float
    auc_roc: float = math.nan
    avg_accuracy: float = math.nan
    zeta: float = math.nan
    n_train: int = 0
    n_test: int = 0
    n_test_abnormal: int = 0
    seed: int = 0
    wall_ms: int | None = None
    error_tag: str = ""

    @property
    def ok(self) -> bool:
        return not self.error_tag

    @property
    def config(self) -> tuple:
        return (self.model, self.selection, self.path, self.tau, self.overlap, self.threshold)


@dataclass(frozen=True)
class SweepSpec:
    models: tuple[tuple[str, dict], ...]
    selections: tuple[str, ...]
    paths: tuple[str, ...]
    windows: tuple[tuple[float, float], ...]
    thresholds: tuple[float, ...]
    master_seed: int = 0
    timing: bool = False

    @property
    def n_cells(self) -> int:
        return len(self.models) * len(self.selections) * len(self.paths) * len(self.windows)

    def n_rows(self, n_folds: int) -> int:
        return self.n_cells * n_folds * len(self.thresholds)


def cell_seed(master_seed: int, *coords) -> int:
    """Stable 63-bit seed from the master seed and cell coordinates."""
    key = "|".join([str(master_seed), *(repr(c) for c in coords)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def _is_raw(path: str) -> bool:
    return path.startswith("raw_s")


def parse_path(path: str) -> GaussianPlan | str:
    if path in FEATURE_SETS:
        return path
    if _is_raw(path):
        try:
            return GaussianPlan(int(path[len("raw_s"):]))
        except ValueError:
            pass
    raise ValueError(f"unknown feature path {path!r}")


def _design_matrix(ws, path: str, train_rows: np.ndarray) -> np.ndarray:
    how = parse_path(path)
    if isinstance(how, GaussianPlan):
        return raw_matrix(ws, how).values
    matrix = extract_matrix(ws, how)
    return apply_feature_norm(matrix, fit_feature_norm(matrix, train_rows)).values


def _error_tag(exc: BaseException) -> str:
    return type(exc).__name__


def run_group(signal: LabeledSignal, fold: Fold, selection: str, spec: SweepSpec) -> list[MetricRow]:
    """Every (window, path, model, threshold) row for one fold and selection."""
    rows: list[MetricRow] = []

    def fail(model, params, path, tau, o, exc, n=(0, 0, 0)):
        seed = cell_seed(spec.master_seed, model, selection, path, tau, o, fold.fold)
        for k in spec.thresholds:
            rows.append(MetricRow(model, selection, path, tau, o, fold.fold, k,
                                  n_train=n[0], n_test=n[1], n_test_abnormal=n[2],
                                  seed=seed, error_tag=_error_tag(exc)))

    sel = ChannelSelection.parse(selection, signal.channel_names)
    try:
        sub = signal.take_channels(sel.columns(signal.n_channels, signal.impeller_channel))
        sub = apply_standardizer(sub, fit_standardizer(sub, fold.train_segments))
    except PumpadError as exc:
        for tau, o in spec.windows:
            for path in spec.paths:
                for model, params in spec.models:
                    fail(model, params, path, tau, o, exc)
        return rows
    train_set = set(fold.train_segments)
    for tau, o in spec.windows:
        try:
            plan = WindowingPlan(tau, o, signal.sampling_rate)
            ws = segment_windows(sub, plan, segments=fold.train_segments + fold.test_segments)
            train_rows = ws.rows_for_segments(fold.train_segments)
            test_rows = ws.rows_for_segments(fold.test_segments)
            if any(ws.segment_ids[i] in train_set for i in test_rows):
                raise OverlapViolation(f"fold {fold.fold}: a test window comes from a training segment")
            y = ws.labels[test_rows].astype(np.int64)
            _two_class(y)
        except PumpadError as exc:
            for path in spec.paths:
                for model, params in spec.models:
                    fail(model, params, path, tau, o, exc)
            continue
        counts = (len(train_rows), len(test_rows), int(y.sum()))
        for path in spec.paths:
            try:
                X = _design_matrix(ws, path, train_rows)
            except PumpadError as exc:
                for model, params in spec.models:
                    fail(model, params, path, tau, o, exc, counts)
                continue
            Xtr, Xte = X[train_rows], X[test_rows]
            for model, params in spec.models:
                seed = cell_seed(spec.master_seed, model, selection, path, tau, o, fold.fold)
                t0 = time.perf_counter()
                try:
                    fitted = train_model(model, Xtr, params, seed=seed)
                    s_train = fitted.score(Xtr)
                    s_test = fitted.score(Xte)
                    auc = auc_roc(s_test, y)
                except (PumpadError, FloatingPointError, np.linalg.LinAlgError) as exc:
                    fail(model, params, path, tau, o, exc, counts)
                    continue
                wall = int(round((time.perf_counter() - t0) * 1000)) if spec.timing else None
                for k in spec.thresholds:
                    rule = fit_threshold(s_train, k)
                    rows.append(MetricRow(
                        model, selection, path, tau, o, fold.fold, k,
                        auc_roc=auc,
                        avg_accuracy=average_accuracy(s_test, y, rule),
                        zeta=rule.zeta,
                        n_train=counts[0], n_test=counts[1], n_test_abnormal=counts[2],
                        seed=seed, wall_ms=wall,
                    ))
    return rows


@dataclass(frozen=True)
class AggregateRow:
    model: str
    selection: str
    path: str
    tau: float
    overlap: float
    threshold: float
    n_folds: int
    mean_auc: float
    mean_acc: float
    max_auc: float
    max_acc: float


AGGREGATE_COLUMNS = tuple(AggregateRow.__dataclass_fields__)

MAX_ACROSS_FOLDS = "max"
MEAN_ACROSS_FOLDS = "mean"


def _group_by_config(rows: Iterable[MetricRow]) -> dict[tuple, list[MetricRow]]:
    groups: dict[tuple, list[MetricRow]] = {}
    for r in rows:
        if not r.ok:
            continue
        bucket = groups.setdefault(r.config, [])
        if any(o.fold == r.fold for o in bucket):
            raise MixedCoordinates(f"configuration {r.config} has fold {r.fold} more than once")
        bucket.append(r)
    return groups


def aggregate(rows: Iterable[MetricRow], mode: str) -> list[dict]:
    """Reduce across folds per configuration; failed rows are skipped."""
    if mode not in (MAX_ACROSS_FOLDS, MEAN_ACROSS_FOLDS):
        raise ValueError(f"mode must be 'max' or 'mean', got {mode!r}")
    reduce = max if mode == MAX_ACROSS_FOLDS else (lambda v: math.fsum(v) / len(v))
    out = []
    for key, bucket in _group_by_config(rows).items():
        coords = dict(zip(("model", "selection", "path", "tau", "overlap", "threshold"), key))
        coords["n_folds"] = len(bucket)
        coords["auc_roc"] = reduce([r.auc_roc for r in bucket])
        coords["avg_accuracy"] = reduce([r.avg_accuracy for r in bucket])
        out.append(coords)
    return out


def summarize(rows: Iterable[MetricRow]) -> list[AggregateRow]:
    rows = list(rows)
    means = {tuple(d[k] for k in ("model", "selection", "path", "tau", "overlap", "threshold")): d
             for d in aggregate(rows, MEAN_ACROSS_FOLDS)}
    out = []
    for d in aggregate(rows, MAX_ACROSS_FOLDS):
        key = tuple(d[k] for k in ("model", "selection", "path", "tau", "overlap", "threshold"))
        m = means[key]
        out.append(AggregateRow(*key, n_folds=d["n_folds"], mean_auc=m["auc_roc"], mean_acc=m["avg_accuracy"],
                                max_auc=d["auc_roc"], max_acc=d["avg_accuracy"]))
    return out


@dataclass
class EvalReport:
    rows: list[MetricRow]
    aggregates: list[AggregateRow]
    folds: list[Fold]
    spec: SweepSpec
    meta: dict = field(default_factory=dict)

    @property
    def failed(self) -> list[MetricRow]:
        return [r for r in self.rows if not r.ok]


def _sort_key(spec: SweepSpec):
    model_pos = {m: i for i, (m, _) in enumerate(spec.models)}
    sel_pos = {s: i for i, s in enumerate(spec.selections)}
    path_pos = {p: i for i, p in enumerate(spec.paths)}
    win_pos = {w: i for i, w in enumerate(spec.windows)}
    k_pos = {k: i for i, k in enumerate(spec.thresholds)}

    def key(r):
        return (model_pos[r.model], sel_pos[r.selection], path_pos[r.path],
                win_pos[(r.tau, r.overlap)], getattr(r, "fold", 0), k_pos[r.threshold])

    return key


_WORKER_SIGNAL: LabeledSignal | None = None


def _init_worker(signal: LabeledSignal) -> None:
    global _WORKER_SIGNAL
    _WORKER_SIGNAL = signal


def _worker_group(fold: Fold, selection: str, spec: SweepSpec) -> list[MetricRow]:
    return run_group(_WORKER_SIGNAL, fold, selection, spec)


def run_sweep(signal: LabeledSignal, fold_specs: Sequence[FoldSpec], spec: SweepSpec,
              workers: int = 1, meta: dict | None = None) -> EvalReport:
    for path in spec.paths:
        parse_path(path)
    folds = build_folds(signal.segments, fold_specs)
    jobs = [(f, sel) for sel in spec.selections for f in folds]
    rows: list[MetricRow] = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(signal,)) as pool:
            futures = [pool.submit(_worker_group, f, sel, spec) for f, sel in jobs]
            for fut in futures:
                rows.extend(fut.result())
    else:
        for f, sel in jobs:
            rows.extend(run_group(signal, f, sel, spec))
    rows.sort(key=_sort_key(spec))
    aggregates = summarize(rows)
    aggregates.sort(key=_sort_key(spec))
    return EvalReport(rows, aggregates, folds, spec, dict(meta or {}))


# ----------------------------------------------------------------- writers


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def _header_comment(meta: dict) -> str:
    return "# " + " ".join(f"{k}={meta[k]}" for k in sorted(meta)) + "\n"


def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    buf.write(_header_comment(report.meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in report.rows:
        w.writerow([_fmt(getattr(r, c)) for c in REPORT_COLUMNS])
    return buf.getvalue()


def aggregates_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    buf.write(_header_comment(report.meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_COLUMNS)
    for a in report.aggregates:
        w.writerow([_fmt(getattr(a, c)) for c in AGGREGATE_COLUMNS])
    return buf.getvalue()


def window_key(tau: float, overlap: float) -> str:
    return f"tau={tau!r},o={overlap!r}"


def _json_float(x: float):
    return None if math.isnan(x) else x


def summary_dict(report: EvalReport) -> dict:
    """model -> selection -> path -> window -> fold-reduced metrics."""
    results: dict = {}
    for a in report.aggregates:
        cell = (results.setdefault(a.model, {}).setdefault(a.selection, {})
                .setdefault(a.path, {}).setdefault(window_key(a.tau, a.overlap), {}))
        cell["max_auc"] = _json_float(a.max_auc)
        cell["mean_auc"] = _json_float(a.mean_auc)
        cell["n_folds"] = a.n_folds
        k = repr(a.threshold)
        cell.setdefault("max_acc", {})[k] = _json_float(a.max_acc)
        cell.setdefault("mean_acc", {})[k] = _json_float(a.mean_acc)
    failed = sorted({(r.model, r.selection, r.path, r.tau, r.overlap, r.fold, r.error_tag) for r in report.failed})
    return {
        **report.meta,
        "spec": {
            "models": [[m, resolve_params(m, p)] for m, p in report.spec.models],
            "selections": list(report.spec.selections),
            "paths": list(report.spec.paths),
            "windows": [list(w) for w in report.spec.windows],
            "thresholds": list(report.spec.thresholds),
        },
        "folds": [asdict(f) for f in report.folds],
        "failed_cells": [list(f) for f in failed],
        "results": results,
    }


def summary_json(report: EvalReport) -> str:
    return json.dumps(summary_dict(report), indent=2, sort_keys=True) + "\n"
