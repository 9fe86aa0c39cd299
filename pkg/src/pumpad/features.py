"""Per-window statistical and spectral features.

Every feature function works on a ``[B x N]`` batch (one channel of ``B``
windows) and returns a ``[B x n_feature]`` block, so a whole window set is
featurized with a handful of vectorized passes. The single-window helpers
:func:`statistical_features` and :func:`spectral_features` wrap the batch
versions.

Column layout of a feature matrix: one block per channel, in channel order;
inside a block the statistical features come first, then the spectral ones,
each in the order of :data:`STATISTICAL` / :data:`SPECTRAL`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import EmptyTrain, FeatureError, ParseError, ShapeMismatch, TooShort, ZeroSpectrum
from .signals import GaussianPlan, WindowSet, gaussian_subsample

STATISTICAL = (
    "abs_energy",
    "average_power",
    "entropy",
    "kurtosis",
    "max",
    "mean",
    "mean_abs_deviation",
    "median",
    "median_abs_deviation",
    "min",
    "rms",
    "skewness",
    "std",
)

SPECTRAL = (
    "max_power_spectrum",
    "max_frequency",
    "median_frequency",
    "power_bandwidth",
    "spectral_centroid",
    "spectral_decrease",
    "spectral_distance",
    "spectral_entropy",
    "spectral_kurtosis",
    "spectral_rolloff",
    "spectral_rollon",
    "spectral_skewness",
    "spectral_spread",
    "spectral_variation",
    "wavelet_abs_mean",
)

FEATURE_SETS = {
    "statistical": STATISTICAL,
    "spectral": SPECTRAL,
    "both": STATISTICAL + SPECTRAL,
}

BANDWIDTH_MASS = 0.95
ROLLOFF_MASS = 0.95
ROLLON_MASS = 0.05


@dataclass(frozen=True)
class PowerSpectrum:
    freqs: np.ndarray
    magnitude: np.ndarray
    power: np.ndarray
    bin_width: float


def periodogram(x: np.ndarray, nu: float) -> PowerSpectrum:
    """One-sided DFT magnitudes of a single channel, bins ``0..floor(N/2)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeMismatch("periodogram expects a single channel")
    n = len(x)
    if n < 2:
        raise TooShort(f"periodogram needs N >= 2, got {n}")
    mag = np.abs(np.fft.rfft(x))
    return PowerSpectrum(np.fft.rfftfreq(n, d=1.0 / nu), mag, mag**2, nu / n)


# -------------------------------------------------------------- statistical


def _moments(x: np.ndarray):
    mean = x.mean(axis=1)
    d = x - mean[:, None]
    d2 = d * d
    m2 = np.mean(d2, axis=1)
    m3 = np.mean(d2 * d, axis=1)
    m4 = np.mean(d2 * d2, axis=1)
    scale = np.max(np.abs(x), axis=1)
    degenerate = m2 <= (1e-12 * scale) ** 2
    safe = np.where(degenerate, 1.0, m2)
    skew = np.where(degenerate, 0.0, m3 / safe**1.5)
    kurt = np.where(degenerate, 0.0, m4 / safe**2)
    return mean, m2, skew, kurt, degenerate


def _entropy(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


def statistical_batch(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """13 statistical features for each row of ``x``.

    Returns ``(values, degenerate)``; ``degenerate`` marks rows whose variance
    is zero (kurtosis and skewness are reported as 0) or whose absolute sum
    is zero (entropy reported as 0).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] < 2:
        raise TooShort(f"statistical features need N >= 2, got {x.shape[1]}")
    n = x.shape[1]
    energy = np.sum(x * x, axis=1)
    mean, m2, skew, kurt, degenerate = _moments(x)
    a = np.abs(x)
    asum = a.sum(axis=1)
    zero = asum == 0
    entropy = _entropy(a / np.where(zero, 1.0, asum)[:, None])
    median = np.median(x, axis=1)
    out = np.column_stack(
        [
            energy,
            energy / n,
            entropy,
            kurt,
            x.max(axis=1),
            mean,
            np.mean(np.abs(x - mean[:, None]), axis=1),
            median,
            np.median(np.abs(x - median[:, None]), axis=1),
            x.min(axis=1),
            np.sqrt(energy / n),
            skew,
            np.sqrt(m2),
        ]
    )
    return out, degenerate | zero


def statistical_features(x: np.ndarray) -> np.ndarray:
    values, _ = statistical_batch(np.asarray(x, dtype=np.float64)[None, :])
    return values[0]


# ----------------------------------------------------------------- spectral


def _first_reaching(cum: np.ndarray, frac: float) -> np.ndarray:
    target = frac * cum[:, -1:]
    return np.argmax(cum >= target, axis=1)


def spectral_batch(x: np.ndarray, nu: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """15 spectral features for each row of ``x`` sampled at ``nu`` Hz.

    Returns ``(values, degenerate, zero_spectrum)``. Rows flagged in
    ``zero_spectrum`` carry no power outside DC and their values are NaN;
    :func:`spectral_features` and :func:`extract_matrix` turn them into
    :class:`ZeroSpectrum` errors.
    """
    x = np.asarray(x, dtype=np.float64)
    B, n = x.shape
    if n < 4:
        raise TooShort(f"spectral features need N >= 4, got {n}")
    A = np.abs(np.fft.rfft(x, axis=1))
    P = A**2
    K = P.shape[1]
    f = np.arange(K) * (nu / n)

    non_dc = P[:, 1:].sum(axis=1)
    zero_spec = non_dc <= 1e-20 * P[:, 0] + 1e-300
    P_total = P.sum(axis=1)
    A_total = A.sum(axis=1)
    ok = ~zero_spec
    # keep the arithmetic finite on rejected rows; they are overwritten with NaN
    P_tot = np.where(ok, P_total, 1.0)
    A_tot = np.where(ok, A_total, 1.0)

    cum = np.cumsum(P, axis=1)
    max_power = P.max(axis=1)
    max_freq = f[np.argmax(P, axis=1)]
    median_freq = f[_first_reaching(cum, 0.5)]
    bandwidth = f[_first_reaching(cum, BANDWIDTH_MASS)]
    rolloff = f[_first_reaching(cum, ROLLOFF_MASS)]
    rollon = f[_first_reaching(cum, ROLLON_MASS)]

    # elementwise sums rather than matmul keep each row independent of batch size
    centroid = np.sum(A * f, axis=1) / A_tot
    spread = np.sqrt(np.sum((f[None, :] - centroid[:, None]) ** 2 * A, axis=1) / A_tot)

    # first bin is DC; k runs 2..K against the DC magnitude
    k = np.arange(1, K, dtype=np.float64)
    decrease = np.sum((A[:, 1:] - A[:, :1]) / k, axis=1) / A_tot

    # least-squares line of power against bin index
    idx = np.arange(K, dtype=np.float64)
    ic = idx - idx.mean()
    slope = np.sum(P * ic, axis=1) / np.sum(ic * ic)
    fitted = P.mean(axis=1)[:, None] + slope[:, None] * ic[None, :]
    distance = np.sqrt(np.sum((P - fitted) ** 2, axis=1))

    entropy = _entropy(P / P_tot[:, None])

    pm = P.mean(axis=1)
    d = P - pm[:, None]
    d2 = d * d
    m2 = np.mean(d2, axis=1)
    flat = m2 <= (1e-12 * max_power) ** 2
    m2s = np.where(flat, 1.0, m2)
    s_kurt = np.where(flat, 0.0, np.mean(d2 * d2, axis=1) / m2s**2)
    s_skew = np.where(flat, 0.0, np.mean(d2 * d, axis=1) / m2s**1.5)

    lo, hi = A[:, :-1], A[:, 1:]
    denom = np.sqrt(np.sum(lo**2, axis=1) * np.sum(hi**2, axis=1))
    no_var = denom == 0
    variation = np.where(no_var, 1.0, 1.0 - np.sum(lo * hi, axis=1) / np.where(no_var, 1.0, denom))

    m = n // 2
    detail = (x[:, 0 : 2 * m : 2] - x[:, 1 : 2 * m : 2]) / np.sqrt(2.0)
    wavelet = np.mean(np.abs(detail), axis=1)

    out = np.column_stack(
        [
            max_power,
            max_freq,
            median_freq,
            bandwidth,
            centroid,
            decrease,
            distance,
            entropy,
            s_kurt,
            rolloff,
            rollon,
            s_skew,
            spread,
            variation,
            wavelet,
        ]
    )
    out[zero_spec] = np.nan
    return out, (flat | no_var) & ok, zero_spec


def spectral_features(x: np.ndarray, nu: float) -> np.ndarray:
    values, _, zero = spectral_batch(np.asarray(x, dtype=np.float64)[None, :], nu)
    if zero[0]:
        raise ZeroSpectrum("signal has no power outside DC")
    return values[0]


# ------------------------------------------------------------------ matrix


@dataclass(frozen=True)
class FeatureNorm:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "constant": self.constant.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "FeatureNorm":
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float), np.asarray(d["constant"], bool))


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    columns: tuple[str, ...]
    labels: np.ndarray
    segment_ids: tuple[str, ...]
    degenerate: np.ndarray | None = None
    norm: FeatureNorm | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != (len(self.labels), len(self.columns)):
            raise ShapeMismatch(
                f"values {self.values.shape} vs {len(self.labels)} rows x {len(self.columns)} columns"
            )

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def take(self, rows: np.ndarray) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return replace(
            self,
            values=self.values[rows],
            labels=self.labels[rows],
            segment_ids=tuple(self.segment_ids[i] for i in rows),
            degenerate=None if self.degenerate is None else self.degenerate[rows],
        )

    def rows_for_segments(self, seg_ids) -> np.ndarray:
        wanted = set(seg_ids)
        return np.array([i for i, s in enumerate(self.segment_ids) if s in wanted], dtype=np.int64)


def column_names(channel_names: Sequence[str], feature_set: str) -> tuple[str, ...]:
    feats = FEATURE_SETS[feature_set]
    return tuple(f"{ch}.{name}" for ch in channel_names for name in feats)


def extract_matrix(ws: WindowSet, feature_set: str = "both", chunk: int = 2048) -> FeatureMatrix:
    """Featurize every window; one row per window, channel blocks in order."""
    if feature_set not in FEATURE_SETS:
        raise ValueError(f"unknown feature set {feature_set!r}; expected one of {sorted(FEATURE_SETS)}")
    W = len(ws)
    if W == 0:
        raise EmptyTrain("window set is empty")
    want_stat = feature_set in ("statistical", "both")
    want_spec = feature_set in ("spectral", "both")
    per = len(FEATURE_SETS[feature_set])
    values = np.empty((W, per * ws.width))
    degenerate = np.zeros((W, per * ws.width), dtype=bool)
    for lo in range(0, W, chunk):
        hi = min(W, lo + chunk)
        batch = ws.batch(slice(lo, hi))
        for c in range(ws.width):
            x = np.ascontiguousarray(batch[:, :, c])
            col = c * per
            if want_stat:
                v, dg = statistical_batch(x)
                values[lo:hi, col : col + 13] = v
                degenerate[lo:hi, col : col + 13] = dg[:, None]
                col += 13
            if want_spec:
                v, dg, zero = spectral_batch(x, ws.sampling_rate)
                if zero.any():
                    row = lo + int(np.argmax(zero))
                    raise FeatureError(ZeroSpectrum("no power outside DC"), row, ws.channel_names[c])
                values[lo:hi, col : col + 15] = v
                degenerate[lo:hi, col : col + 15] = dg[:, None]
    return FeatureMatrix(
        values=values,
        columns=column_names(ws.channel_names, feature_set),
        labels=np.asarray(ws.labels, dtype=np.int8),
        segment_ids=ws.segment_ids,
        degenerate=degenerate,
        meta={"path": feature_set, "window_length": ws.length, "channels": list(ws.channel_names)},
    )


def raw_matrix(ws: WindowSet, plan: GaussianPlan, chunk: int = 2048) -> FeatureMatrix:
    """Gaussian-subsampled raw windows flattened channel by channel."""
    W = len(ws)
    if W == 0:
        raise EmptyTrain("window set is empty")
    L = ws.length // plan.step
    if L == 0:
        raise TooShort(f"window length {ws.length} is shorter than step {plan.step}")
    values = np.empty((W, L * ws.width))
    for lo in range(0, W, chunk):
        hi = min(W, lo + chunk)
        sub = gaussian_subsample(ws.batch(slice(lo, hi)), plan, axis=1)  # [B x L x C']
        values[lo:hi] = sub.transpose(0, 2, 1).reshape(hi - lo, -1)
    cols = tuple(f"{ch}.t{j}" for ch in ws.channel_names for j in range(L))
    return FeatureMatrix(
        values=values,
        columns=cols,
        labels=np.asarray(ws.labels, dtype=np.int8),
        segment_ids=ws.segment_ids,
        degenerate=np.zeros_like(values, dtype=bool),
        meta={"path": f"raw_s{plan.step}", "window_length": ws.length, "channels": list(ws.channel_names)},
    )


def fit_feature_norm(matrix: FeatureMatrix, training_rows: np.ndarray) -> FeatureNorm:
    rows = np.asarray(training_rows)
    if rows.size == 0:
        raise EmptyTrain("no training rows for feature normalization")
    train = matrix.values[rows]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    return FeatureNorm(mean, np.where(constant, 1.0, std), constant)


def apply_feature_norm(matrix: FeatureMatrix, norm: FeatureNorm) -> FeatureMatrix:
    if norm.mean.shape != (matrix.values.shape[1],):
        raise ShapeMismatch(f"norm has {norm.mean.shape[0]} columns, matrix has {matrix.values.shape[1]}")
    z = (matrix.values - norm.mean) / norm.std
    z[:, norm.constant] = 0.0
    return replace(matrix, values=z, norm=norm)


# ---------------------------------------------------------------------- io


def save_matrix(matrix: FeatureMatrix, path: str | Path, extra: dict | None = None) -> Path:
    """Write ``path`` (``.csv`` or ``.f32``) plus a ``<path>.json`` sidecar."""
    path = Path(path)
    if path.suffix == ".f32":
        matrix.values.astype("<f4").tofile(path)
    else:
        pd.DataFrame(matrix.values, columns=list(matrix.columns)).to_csv(path, index=False, float_format="%.17g")
    side = {
        "columns": list(matrix.columns),
        "n_rows": matrix.n_rows,
        "labels": matrix.labels.astype(int).tolist(),
        "segment_ids": list(matrix.segment_ids),
        "norm_stats": None if matrix.norm is None else matrix.norm.to_json(),
        "meta": matrix.meta,
    }
    if extra:
        side.update(extra)
    sidecar = path.with_name(path.name + ".json")
    with open(sidecar, "w") as fh:
        json.dump(side, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return sidecar


def load_matrix(path: str | Path) -> FeatureMatrix:
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    try:
        with open(sidecar) as fh:
            side = json.load(fh)
    except FileNotFoundError as exc:
        raise ParseError(f"missing sidecar {sidecar}") from exc
    cols = tuple(side["columns"])
    if path.suffix == ".f32":
        values = np.fromfile(path, dtype="<f4").astype(np.float64)
        if values.size != side["n_rows"] * len(cols):
            raise ParseError(f"{path}: {values.size} values for {side['n_rows']} x {len(cols)}")
        values = values.reshape(side["n_rows"], len(cols))
    else:
        frame = pd.read_csv(path, dtype=np.float64, float_precision="round_trip")
        if tuple(frame.columns) != cols:
            raise ParseError(f"{path}: header does not match sidecar columns")
        values = frame.to_numpy()
    norm = None if side.get("norm_stats") is None else FeatureNorm.from_json(side["norm_stats"])
    return FeatureMatrix(
        values=values,
        columns=cols,
        labels=np.asarray(side["labels"], dtype=np.int8),
        segment_ids=tuple(side["segment_ids"]),
        norm=norm,
        meta=side.get("meta", {}),
    )
