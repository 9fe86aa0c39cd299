"""``pumpad`` command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure. Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .bundle import load_model, save_model, train_model
from .config import default_config_text, load_config
from .errors import BadConfig, DataError, PumpadError, TooFew
from .evaluation import (
    AggregateRow,
    EvalReport,
    MetricRow,
    REPORT_COLUMNS,
    aggregates_csv,
    report_csv,
    run_sweep,
    summarize,
    summary_json,
)
from .features import (
    FeatureMatrix,
    apply_feature_norm,
    extract_matrix,
    fit_feature_norm,
    load_matrix,
    raw_matrix,
    save_matrix,
)
from .signals import (
    ChannelSelection,
    WindowingPlan,
    apply_standardizer,
    fit_standardizer,
    load_signal,
    segment_windows,
)
from .stats import COMPARISON_COLUMNS, compare_groups, format_table
from .synth import generate_benchmark_suite, load_folds, write_suite

MODEL_LABELS = {
    "iforest": "IForest",
    "knn": "KNN",
    "cblof": "CBLOF",
    "copod": "COPOD",
    "autoencoder": "AutoEncoder",
    "deepsvdd": "DeepSVDD",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise BadConfig(f"{self.prog}: {message}")


def _args_hash(args: argparse.Namespace, inputs: list[Path]) -> str:
    """Digest of the command, its arguments and the bytes of its inputs."""
    h = hashlib.sha256()
    opts = {k: str(v) for k, v in sorted(vars(args).items()) if k not in ("func", "out", "output")}
    h.update(json.dumps(opts, sort_keys=True).encode())
    for p in inputs:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def _parse_params(items: list[str] | None) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise BadConfig(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# ------------------------------------------------------------------ commands


def cmd_synth(args) -> int:
    suite = generate_benchmark_suite(args.seed, duration=args.duration)
    out = Path(args.out)
    paths = write_suite(suite, out, fmt=args.format)
    cfg = default_config_text(args.seed)
    if args.format != "f32":
        cfg = cfg.replace("signal.f32", f"signal.{args.format}")
    _write(out / "eval.yaml", cfg)
    for key, p in paths.items():
        print(f"{key}: {p}")
    print(f"config: {out / 'eval.yaml'}")
    return 0


def _load_windows(args):
    signal = load_signal(args.data, args.manifest)
    sel = ChannelSelection.parse(args.selection, signal.channel_names)
    sub = signal.take_channels(sel.columns(signal.n_channels, signal.impeller_channel))
    plan = WindowingPlan(args.tau, args.overlap, signal.sampling_rate)
    return signal, sub, plan


def cmd_window(args) -> int:
    _, sub, plan = _load_windows(args)
    ws = segment_windows(sub, plan)
    frame = pd.DataFrame({
        "window": np.arange(len(ws)),
        "segment_id": ws.segment_ids,
        "label": ws.labels,
        "start_sample": ws.starts,
        "end_sample": ws.starts + ws.length,
    })
    meta = f"# config_sha256={_args_hash(args, [Path(args.data), Path(args.manifest)])} length={plan.length} stride={plan.stride}\n"
    _write(Path(args.out), meta + frame.to_csv(index=False, lineterminator="\n"))
    print(f"{len(ws)} windows of {plan.length} samples (stride {plan.stride}) -> {args.out}")
    return 0


def cmd_featurize(args) -> int:
    signal, sub, plan = _load_windows(args)
    fit_ids = args.fit_segments or [s.id for s in signal.segments if not s.is_abnormal]
    sub = apply_standardizer(sub, fit_standardizer(sub, fit_ids))
    ws = segment_windows(sub, plan)
    if args.features.startswith("raw_s"):
        from .evaluation import parse_path

        matrix = raw_matrix(ws, parse_path(args.features))
    else:
        matrix = extract_matrix(ws, args.features)
        matrix = apply_feature_norm(matrix, fit_feature_norm(matrix, ws.rows_for_segments(fit_ids)))
    digest = _args_hash(args, [Path(args.data), Path(args.manifest)])
    out = save_matrix(matrix, args.out, extra={"config_sha256": digest, "fit_segments": list(fit_ids),
                                               "tau": args.tau, "overlap": args.overlap,
                                               "selection": args.selection})
    print(f"{matrix.n_rows} x {matrix.values.shape[1]} features -> {out}")
    return 0


def _rows_for(matrix: FeatureMatrix, segments: list[str] | None) -> np.ndarray:
    if segments:
        return matrix.rows_for_segments(segments)
    return np.flatnonzero(np.asarray(matrix.labels) == 0)


def cmd_train(args) -> int:
    matrix = load_matrix(args.features)
    rows = _rows_for(matrix, args.segments)
    if len(rows) == 0:
        raise DataError("no training rows selected")
    model = train_model(args.model, matrix.values[rows], _parse_params(args.param), seed=args.seed)
    digest = _args_hash(args, [Path(args.features)])
    save_model(model, args.out, extra_header={"config_sha256": digest, "master_seed": args.seed,
                                              "columns": list(matrix.columns), "n_train": int(len(rows))})
    print(f"{args.model} trained on {len(rows)} rows x {model.train_dim} -> {args.out}")
    return 0


def cmd_score(args) -> int:
    model, extra, _ = load_model(args.model)
    matrix = load_matrix(args.features)
    scores = model.score(matrix.values)
    frame = pd.DataFrame({
        "row": np.arange(matrix.n_rows),
        "segment_id": list(matrix.segment_ids),
        "label": matrix.labels,
        "score": [repr(float(s)) for s in scores],
    })
    digest = _args_hash(args, [Path(args.model), Path(args.features)])
    meta = f"# config_sha256={digest} master_seed={extra.get('master_seed', model.seed)}\n"
    _write(Path(args.out), meta + frame.to_csv(index=False, lineterminator="\n"))
    print(f"scored {matrix.n_rows} rows -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    overrides = {
        "output": args.output,
        "master_seed": args.master_seed,
        "workers": args.workers,
        "timing": True if args.timing else None,
        "selections": args.selections,
        "models": args.models,
        "feature_paths": args.feature_paths,
    }
    cfg = load_config(args.config, overrides)
    spec = cfg.sweep_spec()
    folds = load_folds(cfg.folds)
    if args.dry_run:
        print(f"cells: {spec.n_cells * len(folds)}")
        print(f"rows: {spec.n_rows(len(folds))}")
        return 0
    signal = load_signal(cfg.data, cfg.manifest)
    meta = {"config_sha256": cfg.config_hash(), "master_seed": cfg.master_seed}
    report = run_sweep(signal, folds, spec, workers=cfg.workers, meta=meta)
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "report.csv", report_csv(report))
    _write(out / "summary.json", summary_json(report))
    _write(out / "aggregates.csv", aggregates_csv(report))
    n_fail = len(report.failed)
    print(f"{len(report.rows)} rows ({n_fail} failed) -> {out / 'report.csv'}")
    return 0


def load_report(path: str | Path) -> tuple[list[MetricRow], dict]:
    path = Path(path)
    with open(path) as fh:
        first = fh.readline()
    meta = {}
    if first.startswith("#"):
        for tok in first[1:].split():
            k, _, v = tok.partition("=")
            meta[k] = v
    try:
        frame = pd.read_csv(path, comment="#", dtype={"selection": str, "model": str, "path": str,
                                                      "error_tag": str}, keep_default_na=False, float_precision="round_trip")
    except (ValueError, pd.errors.ParserError) as exc:
        raise DataError(f"{path}: {exc}") from None
    missing = [c for c in REPORT_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")

    def num(v, cast=float):
        return float("nan") if v == "" else cast(v)

    rows = []
    for rec in frame.to_dict("records"):
        rows.append(MetricRow(
            model=rec["model"], selection=rec["selection"], path=rec["path"],
            tau=float(rec["tau"]), overlap=float(rec["overlap"]), fold=int(rec["fold"]),
            threshold=float(rec["threshold"]),
            auc_roc=num(rec["auc_roc"]), avg_accuracy=num(rec["avg_accuracy"]), zeta=num(rec["zeta"]),
            n_train=int(rec["n_train"]), n_test=int(rec["n_test"]), n_test_abnormal=int(rec["n_test_abnormal"]),
            seed=int(rec["seed"]), wall_ms=None if rec["wall_ms"] == "" else int(rec["wall_ms"]),
            error_tag=rec["error_tag"],
        ))
    return rows, meta


def max_auc_by_config(aggs: list[AggregateRow]) -> dict[tuple, float]:
    """Max-across-folds AUC per (model, selection, path, tau, overlap).

    AUC does not depend on the threshold, so the duplicates are dropped.
    """
    out = {}
    for a in aggs:
        out[(a.model, a.selection, a.path, a.tau, a.overlap)] = a.max_auc
    return out


def cmd_compare(args) -> int:
    rows, meta = load_report(args.report)
    per_config = max_auc_by_config(summarize(rows))
    models = sorted({k[0] for k in per_config}, key=lambda m: list(MODEL_LABELS).index(m) if m in MODEL_LABELS else 99)

    def group(sel, model=None):
        return [v for k, v in sorted(per_config.items()) if k[1] == sel and (model is None or k[0] == model)]

    a, b = group(args.group_a), group(args.group_b)
    if not a or not b:
        raise DataError(f"no results for selection {args.group_a!r} or {args.group_b!r}")
    results = [compare_groups(a, b, "All Models", args.group_a, args.group_b)]
    for m in models:
        ma, mb = group(args.group_a, m), group(args.group_b, m)
        try:
            results.append(compare_groups(ma, mb, MODEL_LABELS.get(m, m), args.group_a, args.group_b))
        except TooFew:
            print(f"skipping {m}: fewer than 3 configurations per group", file=sys.stderr)
    sys.stdout.write(format_table(results))
    if args.out:
        frame = pd.DataFrame([r.to_dict() for r in results], columns=list(COMPARISON_COLUMNS))
        head = "# " + " ".join(f"{k}={meta[k]}" for k in sorted(meta)) + " mad=mean_abs_dev_about_mean ci=student_t_mean\n"
        _write(Path(args.out), head + frame.to_csv(index=False, lineterminator="\n", float_format="%.17g"))
    return 0


def table2(aggs: list[AggregateRow]) -> pd.DataFrame:
    """Per selection: configuration-averaged fold means, best-configuration fold maxima."""
    frame = pd.DataFrame([a.__dict__ for a in aggs])
    auc = frame.drop_duplicates(["model", "selection", "path", "tau", "overlap"])
    out = pd.DataFrame({
        "mean_auc": auc.groupby("selection", sort=False)["mean_auc"].mean(),
        "mean_acc": frame.groupby("selection", sort=False)["mean_acc"].mean(),
        "max_auc": auc.groupby("selection", sort=False)["max_auc"].max(),
        "max_acc": frame.groupby("selection", sort=False)["max_acc"].max(),
    })
    return out.reset_index()


def table_s5(aggs: list[AggregateRow]) -> pd.DataFrame:
    """Model x selection grid of mean and std (ddof=1) of per-configuration max AUC."""
    frame = pd.DataFrame([a.__dict__ for a in aggs]).drop_duplicates(["model", "selection", "path", "tau", "overlap"])
    g = frame.groupby(["model", "selection"], sort=False)["max_auc"]
    out = pd.DataFrame({"mean": g.mean(), "std": g.std(ddof=1), "n": g.size()}).reset_index()
    out["model"] = out["model"].map(lambda m: MODEL_LABELS.get(m, m))
    return out


def cmd_report(args) -> int:
    rows, meta = load_report(args.report)
    aggs = summarize(rows)
    out = Path(args.out)
    head = "# " + " ".join(f"{k}={meta[k]}" for k in sorted(meta)) + "\n"
    t2 = table2(aggs)
    s5 = table_s5(aggs)
    _write(out / "table2.csv", head + t2.to_csv(index=False, lineterminator="\n", float_format="%.17g"))
    _write(out / "table_s5.csv", head + s5.to_csv(index=False, lineterminator="\n", float_format="%.17g"))
    print(t2.to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    print(f"-> {out / 'table2.csv'}, {out / 'table_s5.csv'}")
    return 0


# -------------------------------------------------------------------- parser


def _window_args(p):
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--tau", type=float, default=1.0, help="window duration in seconds")
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--selection", default="all", help="channel name, above_oil or all")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pumpad", description="Vibration anomaly-detection benchmark harness")
    parser.add_argument("--version", action="version", version=f"pumpad {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write the synthetic benchmark suite")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("f32", "csv"), default="f32")
    p.add_argument("--duration", type=float, default=120.0, help="seconds per experiment")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("window", help="list label-pure windows")
    _window_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_window)

    p = sub.add_parser("featurize", help="extract a feature matrix")
    _window_args(p)
    p.add_argument("--features", default="both", help="statistical, spectral, both or raw_s<step>")
    p.add_argument("--fit-segments", nargs="*", help="segments used for normalization (default: all normal)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train one detector on a feature matrix")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True, choices=tuple(MODEL_LABELS))
    p.add_argument("--param", action="append", help="hyperparameter override key=value")
    p.add_argument("--segments", nargs="*", help="training segments (default: all normal rows)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a feature matrix with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="run a cross-validated sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--output")
    p.add_argument("--master-seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--timing", action="store_true", help="record wall_ms (outputs stop being byte-stable)")
    p.add_argument("--selections", nargs="+")
    p.add_argument("--models", nargs="+")
    p.add_argument("--feature-paths", nargs="+")
    p.add_argument("--dry-run", action="store_true", help="validate and print the cell count")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="statistically compare two selections")
    p.add_argument("--report", required=True)
    p.add_argument("--group-a", required=True)
    p.add_argument("--group-b", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="write plot-ready summary tables")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except PumpadError as exc:
        print(f"pumpad: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"pumpad: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
