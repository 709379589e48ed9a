"""Sensor recordings, sliding windows, input views and scaling.

Channel order is fixed everywhere as ax, ay, az, wx, wy, wz (accelerometer
then gyroscope).
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IngestionError, InputError

LOG = logging.getLogger(__name__)

CHANNELS = ("ax", "ay", "az", "wx", "wy", "wz")
MAGNITUDE_CHANNELS = ("acc", "gyro")
MONOLITHIC_CHANNEL = "f"
CSV_COLUMNS = ("subject_id", "label", "t") + CHANNELS

NORMAL = "normal"
FALL = "fall"

MONOLITHIC = "monolithic"
SIX_RAW = "six_raw"
TWO_MAGNITUDE = "two_magnitude"
VIEWS = (MONOLITHIC, SIX_RAW, TWO_MAGNITUDE)


@dataclass
class SensorRecording:
    subject_id: str
    sample_rate_hz: float
    t: np.ndarray  # (N,) seconds
    samples: np.ndarray  # (N, 6) in CHANNELS order
    labels: np.ndarray  # (N,) raw activity labels
    is_fall: np.ndarray  # (N,) bool, from the label map

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[1] != 6:
            raise ConfigError("samples must have exactly 6 channel columns")
        if not self.sample_rate_hz > 0:
            raise ConfigError("sample_rate_hz must be > 0")
        n = len(self.samples)
        self.t = np.asarray(self.t, dtype=float)
        self.labels = np.asarray(self.labels, dtype=object)
        self.is_fall = np.asarray(self.is_fall, dtype=bool)
        if not (len(self.t) == len(self.labels) == len(self.is_fall) == n):
            raise ConfigError("t, samples, labels and is_fall must have equal length")

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, SensorRecording):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.sample_rate_hz == other.sample_rate_hz
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.samples, other.samples)
            and list(self.labels) == list(other.labels)
            and np.array_equal(self.is_fall, other.is_fall)
        )


@dataclass(frozen=True)
class WindowConfig:
    window_seconds: float = 1.28
    overlap_fraction: float = 0.5
    fall_label_rule: str = "majority"

    def __post_init__(self):
        if not self.window_seconds > 0:
            raise ConfigError("window_seconds must be > 0")
        if not 0 <= self.overlap_fraction < 1:
            raise ConfigError("overlap_fraction must lie in [0, 1)")
        if self.fall_label_rule not in ("majority", "any"):
            raise ConfigError(f"unknown fall_label_rule {self.fall_label_rule!r}")

    def length(self, sample_rate_hz: float) -> int:
        n = int(round(self.window_seconds * sample_rate_hz))
        if n < 2:
            raise ConfigError(f"window of {self.window_seconds}s at {sample_rate_hz}Hz is shorter than 2 samples")
        return n

    def stride(self, sample_rate_hz: float) -> int:
        return max(1, int(round(self.length(sample_rate_hz) * (1 - self.overlap_fraction))))


@dataclass
class Window:
    subject_id: str
    label: str
    view: str
    channels: dict = field(default_factory=dict)
    start: int = 0

    def __post_init__(self):
        expected = {
            MONOLITHIC: (MONOLITHIC_CHANNEL,),
            SIX_RAW: CHANNELS,
            TWO_MAGNITUDE: MAGNITUDE_CHANNELS,
        }.get(self.view)
        if expected is None:
            raise ConfigError(f"unknown view {self.view!r}")
        if tuple(self.channels) != expected:
            raise ConfigError(f"{self.view} window needs channels {expected}, got {tuple(self.channels)}")
        if len({len(v) for v in self.channels.values()}) != 1:
            raise ConfigError("all channel vectors must have the same length")

    @property
    def n(self) -> int:
        """Samples per channel (for a monolithic window, its length / 6)."""
        length = len(next(iter(self.channels.values())))
        return length // 6 if self.view == MONOLITHIC else length

    @property
    def is_fall(self) -> bool:
        return self.label == FALL


# -- ingestion -------------------------------------------------------------


def load_label_map(path) -> dict:
    """Read a two-column CSV ``label,class`` where class is normal or fall."""
    mapping = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["label", "class"]:
            raise IngestionError("label map header must be 'label,class'", row=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise IngestionError(f"expected 2 fields, got {len(row)}", row=lineno)
            label, cls = row[0].strip(), row[1].strip().lower()
            if cls not in (NORMAL, FALL):
                raise IngestionError(f"class must be normal or fall, got {cls!r}", row=lineno)
            mapping[label] = cls
    if not mapping:
        raise IngestionError("label map is empty")
    return mapping


def write_label_map(mapping: dict, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "class"])
        for label in sorted(mapping):
            w.writerow([label, mapping[label]])


def _infer_rate(t, default):
    if len(t) < 2:
        return default
    dt = float(np.median(np.diff(t)))
    if dt <= 0:
        return default
    return round(1.0 / dt, 6)


def load_csv(path, label_map: dict, default_rate_hz: float = 100.0) -> list:
    """Load recordings, one per subject in order of first appearance.

    The sample rate is inferred from the median time step.
    """
    per_subject = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError("file is empty")
        header = [h.strip() for h in header]
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise IngestionError(f"missing column(s): {', '.join(missing)}", row=1)
        idx = [header.index(c) for c in CSV_COLUMNS]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(f"expected {len(header)} fields, got {len(row)}", row=lineno)
            sid, label, *numeric = (row[i].strip() for i in idx)
            if label not in label_map:
                raise IngestionError(f"label {label!r} is not in the label map", row=lineno)
            try:
                values = [float(v) for v in numeric]
            except ValueError:
                raise IngestionError(f"non-numeric value in {numeric!r}", row=lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise IngestionError("non-finite value", row=lineno)
            rec = per_subject.setdefault(sid, ([], [], [], []))
            if rec[0] and values[0] < rec[0][-1]:
                raise IngestionError(f"time goes backwards for subject {sid!r}", row=lineno)
            rec[0].append(values[0])
            rec[1].append(values[1:])
            rec[2].append(label)
            rec[3].append(label_map[label] == FALL)
    if not per_subject:
        raise IngestionError("file has a header but no data rows")
    out = []
    for sid, (t, samples, labels, falls) in per_subject.items():
        t = np.asarray(t)
        out.append(SensorRecording(sid, _infer_rate(t, default_rate_hz), t, np.asarray(samples), labels, falls))
    return out


def write_csv(recordings, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in recordings:
            for t, row, label in zip(rec.t, rec.samples, rec.labels):
                w.writerow([rec.subject_id, label, repr(float(t))] + [repr(float(v)) for v in row])


# -- windows and views -----------------------------------------------------


def window_count(n_samples: int, length: int, stride: int) -> int:
    if n_samples < length:
        return 0
    return (n_samples - length) // stride + 1


def slide_windows(rec: SensorRecording, cfg: WindowConfig | None = None) -> list:
    """Cut a recording into fixed-length SixRaw windows; trailing partials are dropped."""
    cfg = cfg or WindowConfig()
    length = cfg.length(rec.sample_rate_hz)
    stride = cfg.stride(rec.sample_rate_hz)
    windows = []
    for k in range(window_count(len(rec), length, stride)):
        s = k * stride
        falls = int(rec.is_fall[s : s + length].sum())
        if cfg.fall_label_rule == "majority":
            label = FALL if falls > length / 2 else NORMAL
        else:
            label = FALL if falls > 0 else NORMAL
        chunk = rec.samples[s : s + length]
        channels = {c: chunk[:, i].copy() for i, c in enumerate(CHANNELS)}
        windows.append(Window(rec.subject_id, label, SIX_RAW, channels, start=s))
    return windows


def _require_six_raw(w: Window):
    if w.view != SIX_RAW:
        raise InputError(f"expected a six_raw window, got {w.view}")


def monolithic_vector(w: Window) -> Window:
    """Concatenate the six channels into one vector of length 6n."""
    _require_six_raw(w)
    f = np.concatenate([w.channels[c] for c in CHANNELS])
    return Window(w.subject_id, w.label, MONOLITHIC, {MONOLITHIC_CHANNEL: f}, start=w.start)


def magnitude_channels(w: Window) -> Window:
    """Euclidean norm of the accelerometer and of the gyroscope triples."""
    _require_six_raw(w)
    acc = np.sqrt(w.channels["ax"] ** 2 + w.channels["ay"] ** 2 + w.channels["az"] ** 2)
    gyro = np.sqrt(w.channels["wx"] ** 2 + w.channels["wy"] ** 2 + w.channels["wz"] ** 2)
    return Window(w.subject_id, w.label, TWO_MAGNITUDE, {"acc": acc, "gyro": gyro}, start=w.start)


def to_view(w: Window, view: str) -> Window:
    if w.view == view:
        return w
    if view == MONOLITHIC:
        return monolithic_vector(w)
    if view == TWO_MAGNITUDE:
        return magnitude_channels(w)
    raise InputError(f"cannot convert a {w.view} window to {view}")


def channel_matrix(windows, channel: str) -> np.ndarray:
    """Stack one channel of many windows into an (n_windows, n) array."""
    return np.stack([w.channels[channel] for w in windows])


# -- scaling ---------------------------------------------------------------


@dataclass
class Scaler:
    """Per-dimension min-max map to [0, 1]; constant dimensions map to 0.5."""

    min: np.ndarray
    max: np.ndarray

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Scaler":
        return cls(np.asarray(d["min"], dtype=float), np.asarray(d["max"], dtype=float))


def fit_scaler(X) -> Scaler:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise InputError("cannot fit a scaler on an empty training set")
    return Scaler(X.min(axis=0), X.max(axis=0))


def apply_scaler(scaler: Scaler, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != len(scaler.min):
        raise InputError(f"vector length {x.shape[-1]} does not match scaler dimension {len(scaler.min)}")
    span = scaler.max - scaler.min
    const = span == 0
    out = (x - scaler.min) / np.where(const, 1.0, span)
    out = np.where(const, 0.5, out)
    return np.clip(out, 0.0, 1.0)


# -- synthetic data --------------------------------------------------------

# (name, motion amplitude relative to walking, gait-frequency multiplier)
_ACTIVITIES = (
    ("standing", 0.15, 0.5),
    ("sitting", 0.1, 0.4),
    ("walking", 1.0, 1.0),
    ("stairs", 1.3, 0.8),
)
_ACC_SCALE = 1.0  # g
_GYRO_SCALE = 3.0  # rad/s


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for :func:`generate_synthetic`.

    ``duration_s`` is the length of the daily-living part of each subject's
    session; falls are recorded afterwards as a block of short trials.
    Spurious readings arrive as bursts of ``spike_len`` samples so that
    ``noise_rate`` of the normal samples per channel are affected.
    """

    subjects: int = 5
    duration_s: float = 120.0
    noise_rate: float = 0.01
    fall_count: int = 20
    seed: int = 0
    sample_rate_hz: float = 100.0
    spike_len: int = 8
    spike_amplitude: tuple = (6.0, 10.0)
    fall_amplitude: tuple = (2.0, 3.5)
    fall_seconds: tuple = (1.0, 1.6)

    def __post_init__(self):
        if self.subjects < 1:
            raise ConfigError("subjects must be >= 1")
        if not self.duration_s > 0:
            raise ConfigError("duration_s must be > 0")
        if not 0 <= self.noise_rate < 1:
            raise ConfigError("noise_rate must lie in [0, 1)")
        if self.fall_count < 0:
            raise ConfigError("fall_count must be >= 0")
        if not self.sample_rate_hz > 0 or self.spike_len < 1:
            raise ConfigError("sample_rate_hz and spike_len must be positive")


SYNTH_LABEL_MAP = {name: NORMAL for name, _, _ in _ACTIVITIES} | {"fall": FALL}


def _activity_stream(rng, n, rate):
    gravity = rng.normal(size=3)
    gravity /= np.linalg.norm(gravity)
    gait = rng.uniform(1.6, 2.2)
    subject_gain = rng.uniform(0.85, 1.15)
    out = np.empty((n, 6))
    labels = np.empty(n, dtype=object)
    pos = 0
    while pos < n:
        name, amp, fmul = _ACTIVITIES[rng.integers(len(_ACTIVITIES))]
        seg = min(n - pos, int(rng.uniform(8, 20) * rate))
        tt = np.arange(seg) / rate
        f0 = gait * fmul
        for c in range(6):
            scale = _ACC_SCALE * 0.3 if c < 3 else _GYRO_SCALE * 0.3
            phases = rng.uniform(0, 2 * np.pi, size=3)
            weights = rng.uniform(0.3, 1.0, size=3) / np.arange(1, 4)
            sig = sum(w * np.sin(2 * np.pi * (k + 1) * f0 * tt + p) for k, (w, p) in enumerate(zip(weights, phases)))
            sig = amp * subject_gain * scale * sig
            sig += rng.normal(0, 0.02 * scale, size=seg)
            if c < 3:
                sig += gravity[c] * _ACC_SCALE
            out[pos : pos + seg, c] = sig
        labels[pos : pos + seg] = name
        pos += seg
    return out, labels, gravity * _ACC_SCALE


def _add_spikes(rng, samples, cfg):
    """Overwrite bursts of samples with high-amplitude glitches, per channel."""
    n = len(samples)
    p_start = cfg.noise_rate / cfg.spike_len
    spiked = np.zeros(samples.shape, dtype=bool)
    for c in range(6):
        scale = _ACC_SCALE if c < 3 else _GYRO_SCALE
        for s in np.flatnonzero(rng.random(n) < p_start):
            e = min(n, s + cfg.spike_len)
            sign = rng.choice((-1.0, 1.0))
            samples[s:e, c] = sign * scale * rng.uniform(*cfg.spike_amplitude, size=e - s)
            spiked[s:e, c] = True
    return spiked


def _fall_block(rng, cfg, gravity):
    rate = cfg.sample_rate_hz
    parts = []
    for _ in range(cfg.fall_count):
        m = max(2, int(rng.uniform(*cfg.fall_seconds) * rate))
        tt = np.arange(m) / rate
        env = np.sin(np.pi * np.arange(m) / (m - 1)) ** 2
        seg = np.empty((m, 6))
        for c in range(6):
            scale = _ACC_SCALE if c < 3 else _GYRO_SCALE
            amp = rng.choice((-1.0, 1.0)) * rng.uniform(*cfg.fall_amplitude) * scale
            wobble = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(2, 6) * tt + rng.uniform(0, 2 * np.pi))
            seg[:, c] = amp * env * wobble + rng.normal(0, 0.05 * scale, size=m)
            if c < 3:
                seg[:, c] += gravity[c]
        parts.append(seg)
    return np.concatenate(parts) if parts else np.empty((0, 6))


def generate_synthetic(cfg: SynthConfig | None = None, return_spikes=False):
    """Synthetic inertial sessions, one recording per subject.

    Normal activity per channel is a sum of low-frequency sinusoids plus a
    little Gaussian noise; a ``noise_rate`` fraction of normal samples is
    replaced by spikes. Falls are high-amplitude transients on all channels,
    labeled ``fall``. With ``return_spikes`` a list of (N, 6) boolean spike
    masks is returned alongside.
    """
    cfg = cfg or SynthConfig()
    rate = cfg.sample_rate_hz
    n_normal = int(round(cfg.duration_s * rate))
    recordings, masks = [], []
    streams = np.random.SeedSequence(int(cfg.seed) & (2**64 - 1)).spawn(cfg.subjects)
    for i, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        samples, labels, gravity = _activity_stream(rng, n_normal, rate)
        spiked = _add_spikes(rng, samples, cfg)
        falls = _fall_block(rng, cfg, gravity)
        samples = np.concatenate([samples, falls])
        labels = np.concatenate([labels, np.full(len(falls), "fall", dtype=object)])
        spiked = np.concatenate([spiked, np.zeros(falls.shape, dtype=bool)])
        t = np.arange(len(samples)) / rate
        is_fall = np.array([lab == "fall" for lab in labels], dtype=bool)
        recordings.append(SensorRecording(f"s{i + 1:02d}", rate, t, samples, labels, is_fall))
        masks.append(spiked)
    LOG.debug("generated %d synthetic subjects", len(recordings))
    return (recordings, masks) if return_spikes else recordings
