"""Signal ingestion, per-channel standardization, label-pure windowing and
Gaussian-kernel subsampling.

Signals are held as ``[T x C]`` float64 arrays. Windows are never copied out
eagerly: a :class:`WindowSet` keeps a reference to its (column-projected)
source array plus the start index of every window, and materializes batches
on demand. This keeps heavily overlapping configurations (stride 100 on a
15-minute recording) inside a few hundred megabytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import pandas as pd

from .errors import (
    BadSelection,
    ConstantChannel,
    DegeneratePlan,
    MissingChannel,
    ParseError,
    RateMismatch,
    SegmentOutOfRange,
    ShapeMismatch,
    TooShort,
    WindowTooLong,
)

NORMAL = "normal"
ABNORMAL = "abnormal"
LABELS = (NORMAL, ABNORMAL)

# The window durations and overlaps of the benchmark grid.
TAUS = (0.25, 0.5, 1.0, 3.0)
OVERLAPS = (0.9, 0.75, 0.5, 0.0)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class Segment:
    id: str
    label: str
    start_sample: int
    end_sample: int
    experiment: str = ""

    def __post_init__(self):
        if self.label not in LABELS:
            raise ParseError(f"segment {self.id!r}: label must be one of {LABELS}, got {self.label!r}")
        if not self.start_sample < self.end_sample:
            raise SegmentOutOfRange(
                f"segment {self.id!r}: start {self.start_sample} must precede end {self.end_sample}"
            )

    @property
    def length(self) -> int:
        return self.end_sample - self.start_sample

    @property
    def is_abnormal(self) -> bool:
        return self.label == ABNORMAL

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "start_sample": self.start_sample,
            "end_sample": self.end_sample,
            "experiment": self.experiment,
        }


@dataclass(frozen=True)
class LabeledSignal:
    """Multi-channel recording with labeled, non-overlapping segments."""

    samples: np.ndarray
    sampling_rate: float
    channel_names: tuple[str, ...]
    segments: tuple[Segment, ...]
    impeller_channel: int | None = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64).view()
        if samples.ndim != 2:
            raise ShapeMismatch(f"samples must be 2-D [T x C], got shape {samples.shape}")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "segments", tuple(sorted(self.segments, key=lambda s: s.start_sample)))
        T, C = samples.shape
        if T < 1 or C < 1:
            raise ShapeMismatch(f"need T >= 1 and C >= 1, got {samples.shape}")
        if self.sampling_rate <= 0:
            raise RateMismatch(f"sampling rate must be positive, got {self.sampling_rate}")
        if len(self.channel_names) != C:
            raise MissingChannel(f"{len(self.channel_names)} channel names for {C} columns")
        if self.impeller_channel is not None and not 0 <= self.impeller_channel < C:
            raise BadSelection(f"impeller channel {self.impeller_channel} out of range for {C} channels")
        ids = set()
        prev_end = 0
        for seg in self.segments:
            if seg.id in ids:
                raise ParseError(f"duplicate segment id {seg.id!r}")
            ids.add(seg.id)
            if seg.start_sample < 0 or seg.end_sample > T:
                raise SegmentOutOfRange(f"segment {seg.id!r} [{seg.start_sample}, {seg.end_sample}) outside [0, {T})")
            if seg.start_sample < prev_end:
                raise SegmentOutOfRange(f"segment {seg.id!r} overlaps its predecessor")
            prev_end = seg.end_sample

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    def segment(self, seg_id: str) -> Segment:
        for seg in self.segments:
            if seg.id == seg_id:
                return seg
        raise KeyError(seg_id)

    def with_samples(self, samples: np.ndarray) -> "LabeledSignal":
        return LabeledSignal(samples, self.sampling_rate, self.channel_names, self.segments, self.impeller_channel)

    def take_channels(self, cols: Sequence[int]) -> "LabeledSignal":
        """Signal restricted to ``cols``; the impeller index follows if kept."""
        cols = list(cols)
        imp = cols.index(self.impeller_channel) if self.impeller_channel in cols else None
        samples = self.samples if cols == list(range(self.n_channels)) else self.samples[:, cols]
        names = [self.channel_names[c] for c in cols]
        return LabeledSignal(samples, self.sampling_rate, names, self.segments, imp)

    def manifest(self) -> dict:
        return {
            "sampling_rate_hz": self.sampling_rate,
            "channels": list(self.channel_names),
            "impeller_channel": self.impeller_channel,
            "n_samples": self.n_samples,
            "segments": [s.to_json() for s in self.segments],
        }


# --------------------------------------------------------------------- I/O


def _parse_manifest(manifest_path: str | Path) -> dict:
    try:
        with open(manifest_path) as fh:
            man = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{manifest_path}: invalid JSON ({exc})") from exc
    for key in ("sampling_rate_hz", "channels", "segments"):
        if key not in man:
            raise ParseError(f"{manifest_path}: missing key {key!r}")
    try:
        rate = float(man["sampling_rate_hz"])
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{manifest_path}: bad sampling_rate_hz") from exc
    if not rate > 0:
        raise RateMismatch(f"{manifest_path}: sampling_rate_hz must be > 0, got {rate}")
    man["sampling_rate_hz"] = rate
    return man


def _segments_from_json(items: Iterable[dict]) -> list[Segment]:
    segs = []
    for item in items:
        try:
            segs.append(
                Segment(
                    id=str(item["id"]),
                    label=str(item["label"]).lower(),
                    start_sample=int(item["start_sample"]),
                    end_sample=int(item["end_sample"]),
                    experiment=str(item.get("experiment", "")),
                )
            )
        except KeyError as exc:
            raise ParseError(f"segment entry missing {exc}") from exc
    return segs


def load_signal(data_path: str | Path, manifest_path: str | Path) -> LabeledSignal:
    """Read a CSV or ``.f32`` recording and validate it against its manifest.

    CSV files carry a header of channel names; columns are reordered to the
    manifest's channel order. ``.f32`` files are little-endian float32,
    row-major ``[T x C]`` with ``C`` taken from the manifest.
    """
    man = _parse_manifest(manifest_path)
    channels = [str(c) for c in man["channels"]]
    data_path = Path(data_path)
    if data_path.suffix == ".f32":
        raw = np.fromfile(data_path, dtype="<f4")
        if raw.size % len(channels):
            raise ParseError(f"{data_path}: {raw.size} values is not a multiple of {len(channels)} channels")
        samples = raw.reshape(-1, len(channels)).astype(np.float64)
    else:
        try:
            frame = pd.read_csv(data_path, dtype=np.float64, comment="#", float_precision="round_trip")
        except (ValueError, pd.errors.ParserError) as exc:
            raise ParseError(f"{data_path}: {exc}") from exc
        missing = [c for c in channels if c not in frame.columns]
        if missing:
            raise MissingChannel(f"{data_path}: channels {missing} not in header")
        samples = frame[channels].to_numpy(dtype=np.float64)
    if "n_samples" in man and int(man["n_samples"]) != samples.shape[0]:
        raise ParseError(f"{data_path}: {samples.shape[0]} rows but manifest declares {man['n_samples']}")
    if not np.all(np.isfinite(samples)):
        raise ParseError(f"{data_path}: non-finite sample values")
    segments = _segments_from_json(man["segments"])
    imp = man.get("impeller_channel")
    return LabeledSignal(samples, man["sampling_rate_hz"], channels, segments, None if imp is None else int(imp))


def save_signal(signal: LabeledSignal, data_path: str | Path, manifest_path: str | Path) -> None:
    data_path = Path(data_path)
    if data_path.suffix == ".f32":
        signal.samples.astype("<f4").tofile(data_path)
    else:
        pd.DataFrame(signal.samples, columns=list(signal.channel_names)).to_csv(data_path, index=False)
    with open(manifest_path, "w") as fh:
        json.dump(signal.manifest(), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------- standardization


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))


def _resolve_segments(signal: LabeledSignal, segments: Iterable[Segment | str]) -> list[Segment]:
    out = []
    for s in segments:
        out.append(signal.segment(s) if isinstance(s, str) else s)
    return out


def fit_standardizer(signal: LabeledSignal, training_segments: Sequence[Segment | str]) -> ChannelStats:
    """Per-channel mean and population std over the training segments only."""
    segs = _resolve_segments(signal, training_segments)
    if not segs:
        raise ConstantChannel("no training segments to fit the standardizer on")
    n = sum(s.length for s in segs)
    total = np.zeros(signal.n_channels)
    for s in segs:
        total += signal.samples[s.start_sample : s.end_sample].sum(axis=0)
    mean = total / n
    ss = np.zeros(signal.n_channels)
    for s in segs:
        ss += ((signal.samples[s.start_sample : s.end_sample] - mean) ** 2).sum(axis=0)
    std = np.sqrt(ss / n)
    dead = np.flatnonzero(std <= 1e-12 * np.maximum(1.0, np.abs(mean)))
    if dead.size:
        names = [signal.channel_names[i] for i in dead]
        raise ConstantChannel(f"channels {names} are constant over the training segments")
    return ChannelStats(mean, std)


def apply_standardizer(signal: LabeledSignal, stats: ChannelStats) -> LabeledSignal:
    if stats.mean.shape != (signal.n_channels,) or stats.std.shape != (signal.n_channels,):
        raise ShapeMismatch(f"stats for {stats.mean.shape} channels, signal has {signal.n_channels}")
    return signal.with_samples((signal.samples - stats.mean) / stats.std)


# ---------------------------------------------------------------- channels


@dataclass(frozen=True)
class ChannelSelection:
    """Which columns a window set carries: one channel, all above oil, or all."""

    kind: str  # "single" | "above_oil" | "all"
    index: int | None = None

    def __post_init__(self):
        if self.kind not in ("single", "above_oil", "all"):
            raise BadSelection(f"unknown selection kind {self.kind!r}")
        if (self.kind == "single") != (self.index is not None):
            raise BadSelection("a single-channel selection needs exactly one index")

    @classmethod
    def single(cls, i: int) -> "ChannelSelection":
        return cls("single", int(i))

    @classmethod
    def above_oil(cls) -> "ChannelSelection":
        return cls("above_oil")

    @classmethod
    def all(cls) -> "ChannelSelection":
        return cls("all")

    def columns(self, n_channels: int, impeller: int | None = None) -> tuple[int, ...]:
        if self.kind == "all":
            return tuple(range(n_channels))
        if self.kind == "single":
            if not 0 <= self.index < n_channels:
                raise BadSelection(f"channel index {self.index} out of range for {n_channels} channels")
            return (self.index,)
        if impeller is None:
            raise BadSelection("above-oil selection needs a designated impeller channel")
        if n_channels < 2:
            raise BadSelection("above-oil selection needs at least two channels")
        return tuple(i for i in range(n_channels) if i != impeller)

    def label(self, channel_names: Sequence[str]) -> str:
        if self.kind == "single":
            return channel_names[self.index]
        return self.kind

    @classmethod
    def parse(cls, text: str, channel_names: Sequence[str]) -> "ChannelSelection":
        """``"all"``, ``"above_oil"``, a channel name, or a column index."""
        if text in ("all", "above_oil"):
            return cls(text)
        if text in channel_names:
            return cls.single(list(channel_names).index(text))
        try:
            return cls.single(int(text))
        except ValueError:
            raise BadSelection(f"unknown channel selection {text!r}; channels are {list(channel_names)}") from None


def standard_selections(n_channels: int, impeller: int | None) -> list[ChannelSelection]:
    """The ten selections of the benchmark: each channel, above-oil, all."""
    sels = [ChannelSelection.single(i) for i in range(n_channels)]
    if impeller is not None:
        sels.append(ChannelSelection.above_oil())
    sels.append(ChannelSelection.all())
    return sels


# --------------------------------------------------------------- windowing


@dataclass(frozen=True)
class WindowingPlan:
    tau: float
    overlap: float
    nu: float

    def __post_init__(self):
        if not 0.0 <= self.overlap < 1.0:
            raise DegeneratePlan(f"overlap must lie in [0, 1), got {self.overlap}")
        if self.tau <= 0 or self.nu <= 0:
            raise DegeneratePlan("tau and nu must be positive")
        if self.length < 2:
            raise DegeneratePlan(f"window length round(tau*nu) = {self.length} < 2")

    @property
    def length(self) -> int:
        return round_half_up(self.tau * self.nu)

    @property
    def stride(self) -> int:
        return max(1, round_half_up((1.0 - self.overlap) * self.length))

    def count(self, segment_length: int) -> int:
        if segment_length < self.length:
            return 0
        return (segment_length - self.length) // self.stride + 1


@dataclass(frozen=True)
class WindowSet:
    """Label-pure windows over a column-projected source array.

    ``source`` is ``[T x C']``; window ``i`` is
    ``source[starts[i] : starts[i] + length]``.
    """

    source: np.ndarray
    starts: np.ndarray
    length: int
    labels: np.ndarray  # 1 = abnormal
    segment_ids: tuple[str, ...]
    columns: tuple[int, ...]
    channel_names: tuple[str, ...]
    selection: ChannelSelection
    sampling_rate: float

    def __len__(self) -> int:
        return len(self.starts)

    @property
    def width(self) -> int:
        return len(self.columns)

    def window(self, i: int) -> np.ndarray:
        s = self.starts[i]
        return self.source[s : s + self.length]

    def __iter__(self) -> Iterator[np.ndarray]:
        for i in range(len(self)):
            yield self.window(i)

    def batch(self, idx: Sequence[int] | slice | np.ndarray) -> np.ndarray:
        """Materialize windows ``idx`` as a ``[B x N x C']`` array."""
        starts = self.starts[idx]
        view = np.lib.stride_tricks.sliding_window_view(self.source, self.length, axis=0)
        # view[t] has shape [C' x N]
        return np.ascontiguousarray(view[starts].transpose(0, 2, 1))

    def take(self, idx: np.ndarray) -> "WindowSet":
        idx = np.asarray(idx)
        return WindowSet(
            self.source,
            self.starts[idx],
            self.length,
            self.labels[idx],
            tuple(self.segment_ids[i] for i in idx),
            self.columns,
            self.channel_names,
            self.selection,
            self.sampling_rate,
        )

    def rows_for_segments(self, seg_ids: Iterable[str]) -> np.ndarray:
        wanted = set(seg_ids)
        return np.array([i for i, s in enumerate(self.segment_ids) if s in wanted], dtype=np.int64)


def segment_windows(
    signal: LabeledSignal,
    plan: WindowingPlan,
    selection: ChannelSelection | None = None,
    segments: Iterable[Segment | str] | None = None,
) -> WindowSet:
    """Cut each segment into sliding windows that never cross its boundaries."""
    if abs(plan.nu - signal.sampling_rate) > 1e-9 * signal.sampling_rate:
        raise RateMismatch(f"plan nu={plan.nu} but signal is sampled at {signal.sampling_rate} Hz")
    selection = selection or ChannelSelection.all()
    cols = selection.columns(signal.n_channels, signal.impeller_channel)
    segs = signal.segments if segments is None else _resolve_segments(signal, segments)
    starts, labels, ids = [], [], []
    N, stride = plan.length, plan.stride
    for seg in segs:
        n = plan.count(seg.length)
        if n == 0:
            continue
        starts.append(seg.start_sample + stride * np.arange(n, dtype=np.int64))
        labels.append(np.full(n, int(seg.is_abnormal), dtype=np.int8))
        ids.extend([seg.id] * n)
    if not starts:
        raise WindowTooLong(f"no segment is long enough for a {N}-sample window")
    source = signal.samples if len(cols) == signal.n_channels else signal.samples[:, list(cols)]
    return WindowSet(
        source=source,
        starts=np.concatenate(starts),
        length=N,
        labels=np.concatenate(labels),
        segment_ids=tuple(ids),
        columns=tuple(cols),
        channel_names=tuple(signal.channel_names[c] for c in cols),
        selection=selection,
        sampling_rate=signal.sampling_rate,
    )


def select_channels(ws: WindowSet, selection: ChannelSelection, impeller: int | None = None) -> WindowSet:
    """Project a window set onto a channel selection.

    Selection indices refer to the original recording's channel numbering, so
    the requested columns must be present in ``ws``.
    """
    if selection.kind == "all":
        wanted = ws.columns
    else:
        wanted = selection.columns(max(ws.columns) + 1, impeller)
    pos = {c: i for i, c in enumerate(ws.columns)}
    try:
        keep = [pos[c] for c in wanted]
    except KeyError as exc:
        raise BadSelection(f"column {exc.args[0]} is not present in this window set") from None
    if keep == list(range(ws.width)):
        return replace(ws, selection=selection)
    return WindowSet(
        source=ws.source[:, keep],
        starts=ws.starts,
        length=ws.length,
        labels=ws.labels,
        segment_ids=ws.segment_ids,
        columns=tuple(wanted),
        channel_names=tuple(ws.channel_names[k] for k in keep),
        selection=selection,
        sampling_rate=ws.sampling_rate,
    )


# ---------------------------------------------------------------- gaussian


@dataclass(frozen=True)
class GaussianPlan:
    step: int
    sigma: float | None = None

    def __post_init__(self):
        if int(self.step) != self.step or self.step < 1:
            raise DegeneratePlan(f"subsampling step must be a positive integer, got {self.step}")
        if self.sigma is None:
            object.__setattr__(self, "sigma", self.step / 6.0)
        if not self.sigma > 0:
            raise DegeneratePlan(f"sigma must be positive, got {self.sigma}")


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized Gaussian truncated at radius ceil(3 sigma)."""
    radius = int(math.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (offsets / sigma) ** 2)
    return k / k.sum()


def _smooth_at(x: np.ndarray, kernel: np.ndarray, positions: np.ndarray) -> np.ndarray:
    # x: [..., N]; reflect-padded correlation evaluated at the given positions
    radius = (len(kernel) - 1) // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(radius, radius)]
    xp = np.pad(x, pad, mode="symmetric")
    view = np.lib.stride_tricks.sliding_window_view(xp, len(kernel), axis=-1)
    return view[..., positions, :] @ kernel[::-1]


def gaussian_filter(x: np.ndarray, sigma: float, axis: int = 0) -> np.ndarray:
    """Full-rate Gaussian smoothing along ``axis`` with reflected boundaries."""
    x = np.moveaxis(np.asarray(x, dtype=np.float64), axis, -1)
    out = _smooth_at(x, gaussian_kernel(sigma), np.arange(x.shape[-1]))
    return np.moveaxis(out, -1, axis)


def gaussian_subsample(x: np.ndarray, plan: GaussianPlan, axis: int = 0) -> np.ndarray:
    """Smooth along ``axis`` and keep every ``step``-th sample from index 0.

    The output length along ``axis`` is ``floor(N / step)``. Works on a single
    channel, a ``[N x C]`` window, or a ``[B x N x C]`` batch (``axis=1``).
    """
    x = np.moveaxis(np.asarray(x, dtype=np.float64), axis, -1)
    n = x.shape[-1]
    if n < plan.step:
        raise TooShort(f"length {n} is shorter than the subsampling step {plan.step}")
    positions = np.arange(n // plan.step) * plan.step
    out = _smooth_at(x, gaussian_kernel(plan.sigma), positions)
    return np.moveaxis(out, -1, axis)
