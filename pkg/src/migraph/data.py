"""Synthetic MI-EEG trials, preprocessing, features and the EPOC1 file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_FEATURES = 18
BANDS = ((0.5, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 20.0), (20.0, 30.0), (30.0, 45.0))
EPS = 1e-12

MAGIC = b"EPOC1\0"
_HEADER = struct.Struct("<6sIIIfI")

# generator amplitudes, microvolts
MU_FREQ = 10.0
MU_AMPLITUDE = 10.0
_BACKGROUND_BANKS = ((1.0, 7.0, 6.0), (14.0, 30.0, 3.0), (30.0, 45.0, 1.5))
_SINES_PER_BANK = 4


class EpochFormatError(ValueError):
    """Raised when an EPOC1 file cannot be decoded."""


def default_channel_names(n: int) -> list[str]:
    return [f"ch{i:02d}" for i in range(n)]


@dataclass
class EpochSet:
    data: np.ndarray  # [trials, channels, samples]
    labels: np.ndarray  # [trials]
    fs: float
    n_classes: int
    channel_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.data.ndim != 3:
            raise ValueError(f"epoch data must be [trials, channels, samples], got {self.data.shape}")
        t, c, _ = self.data.shape
        if not self.channel_names:
            self.channel_names = default_channel_names(c)
        if self.labels.shape != (t,):
            raise ValueError(f"{t} trials but {self.labels.shape} labels")
        if t and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in 0..{self.n_classes - 1}")
        if self.fs <= 0:
            raise ValueError(f"sampling rate must be positive, got {self.fs}")
        if c < 2:
            raise ValueError(f"need at least 2 channels, got {c}")
        if len(self.channel_names) != c:
            raise ValueError(f"{len(self.channel_names)} channel names for {c} channels")

    @property
    def n_trials(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_samples(self) -> int:
        return self.data.shape[2]

    def subset(self, idx) -> "EpochSet":
        idx = np.asarray(idx)
        return EpochSet(self.data[idx], self.labels[idx], self.fs, self.n_classes, list(self.channel_names))


@dataclass(frozen=True)
class WindowConfig:
    omega: int = 500
    s: int = 62

    def __post_init__(self):
        if self.omega < 2:
            raise ValueError(f"window length must be >= 2, got {self.omega}")
        # s > omega is allowed: the window grid includes (125, 250), which skips samples
        if self.s < 1:
            raise ValueError(f"step must be >= 1, got s={self.s}")


def _default_erd_channels() -> list[list[int]]:
    # left hand, right hand, feet, tongue on a 22-electrode montage
    return [[11, 12, 17], [7, 8, 13], [9, 10, 15], [2, 3, 4]]


@dataclass
class SyntheticSpec:
    n_classes: int = 4
    n_channels: int = 22
    n_samples: int = 750
    fs: float = 250.0
    trials_per_class: int = 72
    erd_channels: list[list[int]] = field(default_factory=_default_erd_channels)
    erd_depth: float = 0.6
    noise_std: float = 4.0
    seed: int = 42

    def validate(self) -> None:
        if self.n_classes < 2 or self.n_channels < 2 or self.n_samples < 2 or self.trials_per_class < 1:
            raise ValueError("synthetic spec needs >= 2 classes, >= 2 channels, >= 2 samples, >= 1 trial per class")
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        if not 0.0 <= self.erd_depth <= 1.0:
            raise ValueError(f"erd_depth must lie in [0, 1], got {self.erd_depth}")
        if len(self.erd_channels) != self.n_classes:
            raise ValueError(f"{len(self.erd_channels)} erd channel lists for {self.n_classes} classes")
        for chans in self.erd_channels:
            for ch in chans:
                if not 0 <= ch < self.n_channels:
                    raise ValueError(f"erd channel {ch} out of range for {self.n_channels} channels")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


def generate_synthetic(spec: SyntheticSpec) -> EpochSet:
    """Balanced trials with a 10 Hz rhythm suppressed on class-specific channels.

    Every channel carries its own background activity from three sinusoid
    banks (slow, beta, gamma) plus white noise. A single mu-band rhythm, with
    a random frequency offset and phase per trial, is present on all
    channels; on a trial of class ``k`` its amplitude on
    ``spec.erd_channels[k]`` is scaled by ``1 - erd_depth``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_trials = spec.n_classes * spec.trials_per_class
    c, s = spec.n_channels, spec.n_samples
    t = np.arange(s) / spec.fs
    labels = np.tile(np.arange(spec.n_classes), spec.trials_per_class)
    data = np.empty((n_trials, c, s), dtype=np.float64)
    for trial, label in enumerate(labels):
        x = rng.normal(0.0, spec.noise_std, size=(c, s)) if spec.noise_std > 0 else np.zeros((c, s))
        for lo, hi, amp in _BACKGROUND_BANKS:
            freqs = rng.uniform(lo, hi, size=(c, _SINES_PER_BANK, 1))
            phases = rng.uniform(0, 2 * np.pi, size=(c, _SINES_PER_BANK, 1))
            x += (amp / np.sqrt(_SINES_PER_BANK)) * np.sin(2 * np.pi * freqs * t + phases).sum(axis=1)
        gain = np.ones((c, 1))
        gain[spec.erd_channels[label]] = 1.0 - spec.erd_depth
        freq = MU_FREQ + rng.uniform(-0.25, 0.25)
        phase = rng.uniform(0, 2 * np.pi)
        x += gain * MU_AMPLITUDE * np.sin(2 * np.pi * freq * t + phase)
        data[trial] = x
    return EpochSet(data.astype(np.float32), labels, float(np.float32(spec.fs)), spec.n_classes)


def common_average_reference(e: EpochSet) -> EpochSet:
    if e.n_channels < 2:
        raise ValueError("common average reference needs at least 2 channels")
    data = e.data - e.data.mean(axis=1, keepdims=True)
    return EpochSet(data.astype(e.data.dtype), e.labels.copy(), e.fs, e.n_classes, list(e.channel_names))


def window_starts(n_samples: int, w: WindowConfig) -> np.ndarray:
    if w.omega > n_samples:
        raise ValueError(f"window length omega={w.omega} exceeds trial length S={n_samples}")
    return np.arange(0, n_samples - w.omega + 1, w.s)


def sliding_windows(e: EpochSet, w: WindowConfig):
    """Cut every trial into windows.

    Returns ``(index, windows, labels)`` where ``index`` holds
    ``(trial_index, start_sample)`` rows and ``windows`` is
    ``[W, channels, omega]``. Trailing samples that do not fill a window are
    dropped.
    """
    starts = window_starts(e.n_samples, w)
    trials = np.repeat(np.arange(e.n_trials), len(starts))
    begin = np.tile(starts, e.n_trials)
    view = np.lib.stride_tricks.sliding_window_view(e.data, w.omega, axis=2)  # [T,C,S-omega+1,omega]
    windows = view[:, :, starts, :].transpose(0, 2, 1, 3).reshape(-1, e.n_channels, w.omega)
    index = np.stack([trials, begin], axis=1)
    return index, np.ascontiguousarray(windows), e.labels[trials]


def _hjorth(x: np.ndarray):
    dx = np.diff(x, axis=-1)
    ddx = np.diff(dx, axis=-1)
    var_x = x.var(axis=-1)
    var_dx = dx.var(axis=-1)
    var_ddx = ddx.var(axis=-1)
    mobility = np.sqrt(var_dx / (var_x + EPS))
    mobility_dx = np.sqrt(var_ddx / (var_dx + EPS))
    complexity = mobility_dx / (mobility + EPS)
    return var_x, mobility, complexity


def extract_features(window: np.ndarray, fs: float) -> np.ndarray:
    """18 features per channel for ``window[..., C, omega]``.

    Order: mean, variance, Hjorth mobility, Hjorth complexity, zero-crossing
    rate, mean absolute first difference; then log band power and relative
    band power for each band in ``BANDS``. Leading axes are batched.
    """
    x = np.asarray(window, dtype=np.float64)
    omega = x.shape[-1]
    if omega < 8:
        raise ValueError(f"feature extraction needs windows of at least 8 samples, got {omega}")
    mean = x.mean(axis=-1)
    var, mobility, complexity = _hjorth(x)
    centred = x - mean[..., None]
    crossings = (centred[..., :-1] * centred[..., 1:] < 0).sum(axis=-1)
    zcr = crossings / (omega - 1)
    line_length = np.abs(np.diff(x, axis=-1)).mean(axis=-1)

    power = np.abs(np.fft.rfft(x, axis=-1)) ** 2
    freqs = np.fft.rfftfreq(omega, d=1.0 / fs)
    band_power = np.stack(
        [power[..., (freqs >= lo) & (freqs < hi)].sum(axis=-1) for lo, hi in BANDS], axis=-1
    )
    log_power = np.log(band_power + EPS)
    rel_power = band_power / (band_power.sum(axis=-1, keepdims=True) + EPS)
    time_feats = np.stack([mean, var, mobility, complexity, zcr, line_length], axis=-1)
    return np.concatenate([time_feats, log_power, rel_power], axis=-1)


@dataclass
class FeatureTensor:
    x: np.ndarray  # [W, C, F]
    labels: np.ndarray  # [W]
    trial_index: np.ndarray  # [W], source trial of each window
    scale_bounds: np.ndarray | None = None  # [F, 2] (min, max) once scaled

    def subset(self, mask_or_idx) -> "FeatureTensor":
        return FeatureTensor(
            self.x[mask_or_idx], self.labels[mask_or_idx], self.trial_index[mask_or_idx], self.scale_bounds
        )

    def __len__(self) -> int:
        return len(self.labels)


def build_features(e: EpochSet, w: WindowConfig) -> FeatureTensor:
    """Windows every trial and extracts per-channel features (unscaled)."""
    index, windows, labels = sliding_windows(e, w)
    feats = extract_features(windows, e.fs)
    return FeatureTensor(feats, labels, index[:, 0])


def fit_scale_bounds(train: FeatureTensor) -> np.ndarray:
    if len(train) == 0:
        raise ValueError("cannot fit scaling on an empty partition")
    flat = train.x.reshape(-1, train.x.shape[-1])
    return np.stack([flat.min(axis=0), flat.max(axis=0)], axis=1)


def apply_scale(f: FeatureTensor, bounds: np.ndarray) -> FeatureTensor:
    lo, hi = bounds[:, 0], bounds[:, 1]
    span = hi - lo
    constant = span == 0
    scaled = (f.x - lo) / np.where(constant, 1.0, span)
    scaled = np.where(constant, 0.0, scaled)
    scaled = np.clip(scaled, 0.0, 1.0)
    return FeatureTensor(scaled, f.labels, f.trial_index, bounds)


def minmax_scale(fit_on: FeatureTensor, *partitions: FeatureTensor) -> list[FeatureTensor]:
    """Fit per-feature bounds on ``fit_on`` and transform it plus ``partitions``."""
    bounds = fit_scale_bounds(fit_on)
    return [apply_scale(p, bounds) for p in (fit_on, *partitions)]


def stratified_trial_split(labels: np.ndarray, frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices ``(keep, held_out)`` with ``frac`` of each class held out."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    keep, held = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        n_held = int(round(frac * len(idx)))
        held.append(idx[:n_held])
        keep.append(idx[n_held:])
    return np.sort(np.concatenate(keep)), np.sort(np.concatenate(held))


def pearson_adjacency(e: EpochSet) -> np.ndarray:
    """Channel-by-channel Pearson correlation of the trial-averaged series."""
    avg = e.data.astype(np.float64).mean(axis=0)  # [C, S]
    centred = avg - avg.mean(axis=1, keepdims=True)
    norms = np.sqrt((centred * centred).sum(axis=1))
    flat = norms < 1e-12
    safe = np.where(flat, 1.0, norms)
    corr = (centred @ centred.T) / np.outer(safe, safe)
    corr[flat, :] = 0.0
    corr[:, flat] = 0.0
    corr = np.clip((corr + corr.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def write_epochs(path, e: EpochSet) -> None:
    header = _HEADER.pack(MAGIC, e.n_trials, e.n_channels, e.n_samples, e.fs, e.n_classes)
    labels = e.labels.astype("<u4").tobytes()
    samples = np.ascontiguousarray(e.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + labels + samples)


_HEADER_FIELDS = ("magic", "n_trials", "n_channels", "n_samples", "fs", "n_classes")
_FIELD_END = (6, 10, 14, 18, 22, 26)


def read_epochs(path) -> EpochSet:
    raw = Path(path).read_bytes()
    if len(raw) < 6 or raw[:6] != MAGIC:
        raise EpochFormatError(f"{path}: bad magic {raw[:6]!r}, expected {MAGIC!r}")
    if len(raw) < _HEADER.size:
        missing = next(name for name, end in zip(_HEADER_FIELDS, _FIELD_END) if end > len(raw))
        raise EpochFormatError(f"{path}: truncated header, field {missing} missing")
    _, n_trials, n_channels, n_samples, fs, n_classes = _HEADER.unpack_from(raw)
    if n_channels < 2:
        raise EpochFormatError(f"{path}: header field n_channels={n_channels}, need at least 2")
    if n_samples < 1:
        raise EpochFormatError(f"{path}: header field n_samples={n_samples} must be positive")
    if not fs > 0:
        raise EpochFormatError(f"{path}: header field fs={fs} must be positive")
    if n_classes < 1:
        raise EpochFormatError(f"{path}: header field n_classes={n_classes} must be positive")
    expected = _HEADER.size + 4 * n_trials + 4 * n_trials * n_channels * n_samples
    if len(raw) < expected:
        raise EpochFormatError(
            f"{path}: truncated payload, header declares {n_trials} trials "
            f"({expected} bytes) but file has {len(raw)} bytes"
        )
    if len(raw) > expected:
        raise EpochFormatError(f"{path}: {len(raw) - expected} trailing bytes after payload")
    off = _HEADER.size
    labels = np.frombuffer(raw, dtype="<u4", count=n_trials, offset=off).astype(np.int64)
    bad = labels >= n_classes
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise EpochFormatError(f"{path}: label {labels[i]} of trial {i} >= n_classes={n_classes}")
    off += 4 * n_trials
    data = np.frombuffer(raw, dtype="<f4", count=n_trials * n_channels * n_samples, offset=off)
    data = data.reshape(n_trials, n_channels, n_samples).astype(np.float32)
    return EpochSet(data, labels, float(fs), int(n_classes))
