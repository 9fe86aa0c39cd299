"""YAML run configuration.

Key schema (relative paths resolve against the config file's directory)::

    data: signal.f32            # recording (.f32 or .csv)
    manifest: manifest.json     # sampling rate, channels, labeled segments
    folds: folds.json           # fold spec: test normals per fold
    output: results             # output directory
    master_seed: 7
    selections: standard        # or a list: [impeller, above_oil, all, bearing_pl, ...]
    models:                     # kind -> hyperparameter overrides
      iforest: {n_trees: 100}
      copod: {}
    feature_paths: [statistical, spectral]   # also both, raw_s100, raw_s500
    windows: grid               # or a list of [tau_seconds, overlap]
    thresholds: [0.001, 0.01, 0.05, 0.1, 0.2]
    workers: 1                  # default from PUMPAD_WORKERS
    timing: false               # fill wall_ms (breaks byte-for-byte reruns)
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .bundle import MODEL_KINDS, resolve_params
from .detectors import PERCENTILES
from .errors import BadConfig, BadPercentile
from .evaluation import SweepSpec, parse_path
from .signals import OVERLAPS, TAUS, ChannelSelection, _parse_manifest, standard_selections

WORKERS_ENV = "PUMPAD_WORKERS"

DEFAULT_MODELS = ("iforest", "knn", "cblof", "copod", "autoencoder", "deepsvdd")
DEFAULT_PATHS = ("statistical", "spectral")
KNOWN_KEYS = {
    "data", "manifest", "folds", "output", "master_seed", "selections", "models",
    "feature_paths", "windows", "thresholds", "workers", "timing",
}


def grid_windows() -> tuple[tuple[float, float], ...]:
    return tuple((tau, o) for tau in TAUS for o in OVERLAPS)


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise BadConfig(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunConfig:
    data: Path
    manifest: Path
    folds: Path
    output: Path
    master_seed: int = 0
    selections: tuple[str, ...] = ()
    models: tuple[tuple[str, dict], ...] = ()
    feature_paths: tuple[str, ...] = DEFAULT_PATHS
    windows: tuple[tuple[float, float], ...] = field(default_factory=grid_windows)
    thresholds: tuple[float, ...] = PERCENTILES
    workers: int = 1
    timing: bool = False

    def sweep_spec(self) -> SweepSpec:
        return SweepSpec(self.models, self.selections, self.feature_paths, self.windows,
                         self.thresholds, self.master_seed, self.timing)

    def config_hash(self) -> str:
        """Digest of everything that can change results.

        Paths enter through their file contents, so moving the data or the
        output directory keeps the hash; worker count is excluded.
        """
        payload = {
            "data_sha256": _file_digest(self.data),
            "manifest_sha256": _file_digest(self.manifest),
            "folds_sha256": _file_digest(self.folds),
            "master_seed": self.master_seed,
            "selections": list(self.selections),
            "models": [[m, resolve_params(m, p)] for m, p in self.models],
            "feature_paths": list(self.feature_paths),
            "windows": [list(w) for w in self.windows],
            "thresholds": list(self.thresholds),
            "timing": self.timing,
        }
        blob = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _as_float_pair(item) -> tuple[float, float]:
    try:
        tau, o = item
        return float(tau), float(o)
    except (TypeError, ValueError):
        raise BadConfig(f"window entries must be [tau, overlap], got {item!r}") from None


def _resolve(base: Path, value) -> Path:
    p = Path(str(value))
    return p if p.is_absolute() else base / p


def build_config(raw: dict, base: Path, overrides: dict | None = None) -> RunConfig:
    """Validate a raw mapping (plus flag overrides) into a :class:`RunConfig`."""
    raw = dict(raw or {})
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    unknown = set(raw) - KNOWN_KEYS
    if unknown:
        raise BadConfig(f"unknown config keys: {sorted(unknown)}")
    for key in ("data", "manifest", "folds"):
        if key not in raw:
            raise BadConfig(f"config is missing {key!r}")
    paths = {k: _resolve(base, raw[k]) for k in ("data", "manifest", "folds")}
    for key, p in paths.items():
        if not p.exists():
            raise BadConfig(f"{key}: {p} does not exist")
    output = _resolve(base, raw.get("output", "results"))

    man = _parse_manifest(paths["manifest"])
    channels = [str(c) for c in man["channels"]]
    impeller = man.get("impeller_channel")

    sel = raw.get("selections", "standard")
    if sel == "standard":
        selections = tuple(s.label(channels) for s in standard_selections(len(channels), impeller))
    elif isinstance(sel, list) and sel:
        selections = tuple(str(s) for s in sel)
        for s in selections:
            choice = ChannelSelection.parse(s, channels)
            choice.columns(len(channels), impeller)
    else:
        raise BadConfig("selections must be 'standard' or a non-empty list")

    models_raw = raw.get("models", list(DEFAULT_MODELS))
    if isinstance(models_raw, list):
        models_raw = {m: {} for m in models_raw}
    if not isinstance(models_raw, dict) or not models_raw:
        raise BadConfig("models must be a non-empty list or mapping")
    models = []
    for kind, params in models_raw.items():
        if kind not in MODEL_KINDS:
            raise BadConfig(f"unknown model {kind!r}; expected one of {MODEL_KINDS}")
        resolve_params(kind, params or {})
        models.append((kind, dict(params or {})))

    fpaths = raw.get("feature_paths", list(DEFAULT_PATHS))
    if not isinstance(fpaths, list) or not fpaths:
        raise BadConfig("feature_paths must be a non-empty list")
    for p in fpaths:
        try:
            parse_path(str(p))
        except ValueError as exc:
            raise BadConfig(str(exc)) from None

    win = raw.get("windows", "grid")
    if win == "grid":
        windows = grid_windows()
    elif isinstance(win, list) and win:
        windows = tuple(_as_float_pair(w) for w in win)
    else:
        raise BadConfig("windows must be 'grid' or a non-empty list of [tau, overlap]")
    for tau, o in windows:
        if not tau > 0 or not 0 <= o < 1:
            raise BadConfig(f"bad window ({tau}, {o}): need tau > 0 and 0 <= overlap < 1")

    thresholds = tuple(float(k) for k in raw.get("thresholds", list(PERCENTILES)))
    if not thresholds:
        raise BadConfig("thresholds must be non-empty")
    for k in thresholds:
        if not any(abs(k - p) < 1e-12 for p in PERCENTILES):
            raise BadPercentile(f"threshold {k} not in {PERCENTILES}")

    workers = raw.get("workers")
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise BadConfig("workers must be >= 1")

    return RunConfig(
        data=paths["data"],
        manifest=paths["manifest"],
        folds=paths["folds"],
        output=output,
        master_seed=int(raw.get("master_seed", 0)),
        selections=selections,
        models=tuple(models),
        feature_paths=tuple(str(p) for p in fpaths),
        windows=windows,
        thresholds=thresholds,
        workers=workers,
        timing=bool(raw.get("timing", False)),
    )


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise BadConfig(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise BadConfig(f"{path}: invalid YAML ({exc})") from None
    if not isinstance(raw, dict):
        raise BadConfig(f"{path}: top level must be a mapping")
    return build_config(raw, path.parent, overrides)


def default_config_text(master_seed: int) -> str:
    """The eval config written next to a synthesized suite."""
    return (
        "# pumpad sweep configuration\n"
        "data: signal.f32\n"
        "manifest: manifest.json\n"
        "folds: folds.json\n"
        "output: .\n"
        f"master_seed: {master_seed}\n"
        "selections: standard\n"
        "models: [iforest, knn, cblof, copod]\n"
        "feature_paths: [statistical]\n"
        "windows: [[1.0, 0.0]]\n"
        "thresholds: [0.001, 0.01, 0.05, 0.1, 0.2]\n"
    )
