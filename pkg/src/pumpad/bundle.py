"""Model dispatch and the on-disk model bundle.

Bundle layout (all integers little-endian)::

    8 bytes   magic  b"PUMPADMB"
    4 bytes   uint32 format version
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header (sorted keys)
    ...       raw array payload, offsets given in the header

Floating-point arrays are stored as ``<f8`` and integer arrays as ``<i8``,
so reloading a bundle reproduces scores bit for bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import detectors, neural
from .detectors import AnomalyModel
from .errors import BadConfig, ParseError

MAGIC = b"PUMPADMB"
VERSION = 1

MODEL_KINDS = ("iforest", "knn", "cblof", "copod", "autoencoder", "deepsvdd")

DEFAULT_PARAMS = {
    "iforest": {"n_trees": 100, "subsample": 256},
    "knn": {"k": 5},
    "cblof": {"n_clusters": 8, "alpha": 0.9, "beta": 5.0},
    "copod": {},
    "autoencoder": {"bottleneck": None, **{f.name: f.default for f in fields(neural.TrainConfig)}},
    "deepsvdd": {"embed_dim": None, **{f.name: f.default for f in fields(neural.TrainConfig)}},
}


def resolve_params(kind: str, overrides: dict | None = None) -> dict:
    if kind not in MODEL_KINDS:
        raise BadConfig(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    params = dict(DEFAULT_PARAMS[kind])
    for key, value in (overrides or {}).items():
        if key not in params:
            raise BadConfig(f"{kind}: unknown hyperparameter {key!r}")
        params[key] = value
    return params


def train_model(kind: str, X: np.ndarray, params: dict | None = None, seed: int = 0) -> AnomalyModel:
    p = resolve_params(kind, params)
    if kind == "iforest":
        return detectors.train_iforest(X, n_trees=p["n_trees"], subsample=p["subsample"], seed=seed)
    if kind == "knn":
        return detectors.train_knn(X, k=p["k"], seed=seed)
    if kind == "cblof":
        return detectors.train_cblof(X, n_clusters=p["n_clusters"], alpha=p["alpha"], beta=p["beta"], seed=seed)
    if kind == "copod":
        return detectors.train_copod(X, seed=seed)
    cfg = neural.TrainConfig(**{f.name: p[f.name] for f in fields(neural.TrainConfig)})
    if kind == "autoencoder":
        return neural.train_autoencoder(X, bottleneck=p["bottleneck"], config=cfg, seed=seed)
    return neural.train_deepsvdd(X, embed_dim=p["embed_dim"], config=cfg, seed=seed)


def _encode(arr: np.ndarray) -> tuple[str, bytes]:
    arr = np.asarray(arr)
    if arr.dtype.kind in "iub":
        return "<i8", arr.astype("<i8").tobytes()
    return "<f8", arr.astype("<f8").tobytes()


def save_model(model: AnomalyModel, path: str | Path, extra_header: dict | None = None,
               extra_arrays: dict[str, np.ndarray] | None = None) -> None:
    """Serialize ``model`` plus optional pipeline metadata and arrays."""
    arrays = {f"model.{k}": v for k, v in model.arrays().items()}
    arrays.update({f"extra.{k}": v for k, v in (extra_arrays or {}).items()})
    manifest, payload, offset = [], [], 0
    for name in sorted(arrays):
        dtype, raw = _encode(arrays[name])
        manifest.append({"name": name, "dtype": dtype, "shape": list(np.shape(arrays[name])), "offset": offset})
        payload.append(raw)
        offset += len(raw)
    header = {
        "kind": model.kind,
        "hyperparameters": model.params,
        "train_dim": model.train_dim,
        "seed": model.seed,
        "arrays": manifest,
        "extra": extra_header or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for raw in payload:
            fh.write(raw)


def load_model(path: str | Path) -> tuple[AnomalyModel, dict, dict[str, np.ndarray]]:
    """Returns ``(model, extra_header, extra_arrays)``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ParseError(f"{path}: not a model bundle")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise ParseError(f"{path}: unsupported bundle version {version}")
    header = json.loads(data[20 : 20 + hlen].decode("utf-8"))
    base = 20 + hlen
    arrays = {}
    for item in header["arrays"]:
        dt = np.dtype(item["dtype"])
        count = int(np.prod(item["shape"])) if item["shape"] else 1
        start = base + item["offset"]
        arr = np.frombuffer(data, dtype=dt, count=count, offset=start).reshape(item["shape"])
        arrays[item["name"]] = arr.astype(dt.newbyteorder("="))
    cls = AnomalyModel.registry.get(header["kind"])
    if cls is None:
        raise ParseError(f"{path}: unknown model kind {header['kind']!r}")
    model_arrays = {k[len("model."):]: v for k, v in arrays.items() if k.startswith("model.")}
    extra_arrays = {k[len("extra."):]: v for k, v in arrays.items() if k.startswith("extra.")}
    model = cls.from_arrays(header["hyperparameters"], header["train_dim"], header["seed"], model_arrays)
    return model, header["extra"], extra_arrays
