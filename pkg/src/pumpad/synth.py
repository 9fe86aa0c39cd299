"""Deterministic synthetic pump-vibration recordings.

Each channel carries harmonics of the shaft rotation plus Gaussian noise.
A fault has an intensity ``q(t)`` that is zero while the pump runs normally.
Once the fault starts, every channel responds in proportion to its
sensitivity:

* harmonic amplitudes scale by ``1 + harmonic_gain * s * q``
* a vane-pass tone appears at ``vane_count * rotation_hz``
* high-pass broadband noise is injected
* the noise floor rises

The impeller channel has sensitivity 1 and the motor channels are the most
attenuated, so the impeller is by construction the most informative sensor.
None of the magnitudes are meant to be physically faithful.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadConfig
from .signals import ABNORMAL, NORMAL, LabeledSignal, Segment, save_signal

CHANNELS = (
    "motor_outboard_pl",
    "motor_outboard_pp",
    "motor_inboard_pl",
    "motor_inboard_pp",
    "bearing_pl",
    "bearing_pp",
    "bearing_axial",
    "impeller",
)
IMPELLER = 7
SENSITIVITY = (0.01, 0.01, 0.015, 0.015, 0.02, 0.02, 0.03, 1.0)
VALVE_FRACTIONS = (0.25, 0.5, 0.75)


@dataclass(frozen=True)
class AbruptValve:
    fraction: float
    t_onset: float


@dataclass(frozen=True)
class GradualValve:
    """Intensity ramps linearly from ``t_start`` and holds from ``t_end``."""

    fraction: float
    t_start: float
    t_end: float


@dataclass(frozen=True)
class LevelDrop:
    """Oil level falls below the intake at ``t_onset``; ``dry`` means no flow."""

    t_onset: float
    dry: bool = False


Fault = AbruptValve | GradualValve | LevelDrop | None


@dataclass(frozen=True)
class SynthConfig:
    duration: float = 120.0
    nu: float = 4000.0
    channels: tuple[str, ...] = CHANNELS
    impeller_channel: int = IMPELLER
    rotation_hz: float = 29.5
    harmonics: tuple[float, ...] = (1.0, 0.45, 0.25, 0.15)
    noise_sigma: float = 0.35
    fault: Fault = None
    sensitivity: tuple[float, ...] = SENSITIVITY
    gain_jitter: float = 0.0
    valve_gain: float = 1.6
    level_gain: float = 1.0
    harmonic_gain: float = 0.8
    vane_count: int = 6
    vane_amplitude: float = 0.5
    broadband: float = 0.4
    noise_shift: float = 0.6
    dry_harmonic_drop: float = 0.5
    phase_seed: int = 0
    name: str = "run"
    seed: int = 0

    def __post_init__(self):
        n = self.duration * self.nu
        if not n >= 1:
            raise BadConfig(f"duration * nu must be >= 1, got {n}")
        if len(self.sensitivity) != len(self.channels):
            raise BadConfig("one sensitivity per channel is required")
        if not 0 <= self.impeller_channel < len(self.channels):
            raise BadConfig(f"impeller channel {self.impeller_channel} out of range")
        f = self.fault
        if isinstance(f, (AbruptValve, GradualValve)) and f.fraction not in VALVE_FRACTIONS:
            raise BadConfig(f"valve fraction must be one of {VALVE_FRACTIONS}, got {f.fraction}")
        onset = self.onset
        if onset is not None and not 0 <= onset < self.duration:
            raise BadConfig(f"fault onset {onset} s outside [0, {self.duration})")
        if isinstance(f, GradualValve) and not f.t_start < f.t_end:
            raise BadConfig("gradual closure needs t_start < t_end")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.nu))

    @property
    def onset(self) -> float | None:
        f = self.fault
        if f is None:
            return None
        return f.t_start if isinstance(f, GradualValve) else f.t_onset


def _intensity(cfg: SynthConfig, t: np.ndarray) -> np.ndarray:
    f = cfg.fault
    if f is None:
        return np.zeros_like(t)
    if isinstance(f, AbruptValve):
        return np.where(t >= f.t_onset, cfg.valve_gain * f.fraction, 0.0)
    if isinstance(f, GradualValve):
        ramp = np.clip((t - f.t_start) / (f.t_end - f.t_start), 0.0, 1.0)
        return np.where(t >= f.t_start, cfg.valve_gain * f.fraction * ramp, 0.0)
    return np.where(t >= f.t_onset, cfg.level_gain, 0.0)


def _onset_sample(cfg: SynthConfig) -> int | None:
    onset = cfg.onset
    if onset is None:
        return None
    return int(np.ceil(onset * cfg.nu - 1e-9))


def generate(config: SynthConfig) -> LabeledSignal:
    """Render one recording; segments split at the fault onset sample."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    # harmonic phases belong to the machine, not the run: shared across seeds
    phase_rng = np.random.default_rng(cfg.phase_seed)
    all_phases = phase_rng.uniform(0.0, 2.0 * np.pi, size=(len(cfg.channels), len(cfg.harmonics) + 1))
    T = cfg.n_samples
    t = np.arange(T) / cfg.nu
    q = _intensity(cfg, t)
    dry = isinstance(cfg.fault, LevelDrop) and cfg.fault.dry
    C = len(cfg.channels)
    out = np.empty((T, C))
    for c in range(C):
        s = cfg.sensitivity[c]
        gain = 1.0 + cfg.gain_jitter * rng.standard_normal() if cfg.gain_jitter > 0 else 1.0
        phases = all_phases[c]
        envelope = 1.0 + cfg.harmonic_gain * s * q
        if dry:
            envelope = envelope - cfg.dry_harmonic_drop * s * (q > 0)
        x = np.zeros(T)
        for h, amp in enumerate(cfg.harmonics, start=1):
            x += amp * np.sin(2.0 * np.pi * h * cfg.rotation_hz * t + phases[h - 1])
        x *= envelope
        if cfg.vane_amplitude > 0:
            vane = np.sin(2.0 * np.pi * cfg.vane_count * cfg.rotation_hz * t + phases[-1])
            x += cfg.vane_amplitude * s * q * vane
        if cfg.noise_sigma > 0:
            x += cfg.noise_sigma * (1.0 + cfg.noise_shift * s * q) * rng.standard_normal(T)
        if cfg.broadband > 0:
            e = rng.standard_normal(T + 1)
            x += cfg.broadband * s * q * np.diff(e)
        out[:, c] = gain * x
    k = _onset_sample(cfg)
    if k is None or k >= T:
        segs = [Segment(f"{cfg.name}-normal", NORMAL, 0, T, cfg.name)]
    elif k <= 0:
        segs = [Segment(f"{cfg.name}-abnormal", ABNORMAL, 0, T, cfg.name)]
    else:
        segs = [
            Segment(f"{cfg.name}-normal", NORMAL, 0, k, cfg.name),
            Segment(f"{cfg.name}-abnormal", ABNORMAL, k, T, cfg.name),
        ]
    return LabeledSignal(out, cfg.nu, cfg.channels, segs, cfg.impeller_channel)


@dataclass(frozen=True)
class FoldSpec:
    fold: int
    test_normal_segments: tuple[str, ...]

    def to_json(self) -> dict:
        return {"fold": self.fold, "test_normal_segments": list(self.test_normal_segments)}

    @classmethod
    def from_json(cls, d: dict) -> "FoldSpec":
        return cls(int(d["fold"]), tuple(d["test_normal_segments"]))


# (group, composition, experiment name, fault factory); onset at half the duration
def _suite_experiments(duration: float) -> list[tuple[str, str, str, Fault]]:
    mid = duration / 2.0
    return [
        ("abrupt", "normal+abnormal", "abrupt-25", AbruptValve(0.25, mid)),
        ("abrupt", "normal+abnormal", "abrupt-50", AbruptValve(0.5, mid)),
        ("abrupt", "normal+abnormal", "abrupt-75", AbruptValve(0.75, mid)),
        ("gradual", "normal+abnormal", "gradual-75", GradualValve(0.75, mid, mid + duration / 4.0)),
        ("msl", "normal", "msl", None),
        ("bmsl", "abnormal", "bmsl", LevelDrop(0.0)),
        ("noflow", "abnormal", "noflow", LevelDrop(0.0, dry=True)),
        ("constflow", "normal", "constflow", None),
    ]


SUITE_FOLDS = (
    FoldSpec(1, ("abrupt-25-normal", "abrupt-50-normal")),
    FoldSpec(2, ("abrupt-75-normal",)),
    FoldSpec(3, ("gradual-75-normal",)),
    FoldSpec(4, ("msl-normal",)),
    FoldSpec(5, ("constflow-normal",)),
)


@dataclass
class BenchmarkSuite:
    signal: LabeledSignal
    folds: tuple[FoldSpec, ...]
    master_seed: int
    experiments: list[dict] = field(default_factory=list)


def generate_benchmark_suite(master_seed: int = 7, duration: float = 120.0, nu: float = 4000.0) -> BenchmarkSuite:
    """Eight recordings concatenated into one signal with a five-fold spec.

    Samples are rounded to float32 so the in-memory suite equals what
    :func:`write_suite` puts on disk.
    """
    parts, segs, experiments = [], [], []
    offset = 0
    for i, (group, comp, name, fault) in enumerate(_suite_experiments(duration)):
        seed = int(np.random.SeedSequence([master_seed, i]).generate_state(1)[0])
        sig = generate(SynthConfig(duration=duration, nu=nu, fault=fault, name=name, seed=seed))
        parts.append(sig.samples)
        for s in sig.segments:
            segs.append(Segment(s.id, s.label, s.start_sample + offset, s.end_sample + offset, s.experiment))
        experiments.append({"name": name, "group": group, "composition": comp, "seed": seed,
                            "start_sample": offset, "end_sample": offset + sig.n_samples})
        offset += sig.n_samples
    samples = np.concatenate(parts).astype(np.float32).astype(np.float64)
    signal = LabeledSignal(samples, nu, CHANNELS, segs, IMPELLER)
    return BenchmarkSuite(signal, SUITE_FOLDS, master_seed, experiments)


def roster(signal: LabeledSignal) -> list[tuple[str, str, int]]:
    """Per experiment group: (group, composition, number of experiments)."""
    groups: dict[str, set] = {}
    labels: dict[str, set] = {}
    for s in signal.segments:
        g = s.experiment.split("-")[0]
        groups.setdefault(g, set()).add(s.experiment)
        labels.setdefault(g, set()).add(s.label)
    out = []
    for g in groups:
        comp = "+".join(lab for lab in (NORMAL, ABNORMAL) if lab in labels[g])
        out.append((g, comp, len(groups[g])))
    return out


def write_suite(suite: BenchmarkSuite, out_dir: str | Path, fmt: str = "f32") -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "data": out / f"signal.{fmt}",
        "manifest": out / "manifest.json",
        "folds": out / "folds.json",
    }
    save_signal(suite.signal, paths["data"], paths["manifest"])
    man = json.loads(paths["manifest"].read_text())
    man["generator"] = {"master_seed": suite.master_seed, "experiments": suite.experiments}
    paths["manifest"].write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    folds = {"master_seed": suite.master_seed, "folds": [f.to_json() for f in suite.folds]}
    paths["folds"].write_text(json.dumps(folds, indent=2, sort_keys=True) + "\n")
    return paths


def load_folds(path: str | Path) -> tuple[FoldSpec, ...]:
    data = json.loads(Path(path).read_text())
    items = data["folds"] if isinstance(data, dict) else data
    return tuple(FoldSpec.from_json(d) for d in items)
