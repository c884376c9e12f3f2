"""Epoch datasets: binary file format, subject-wise splits, batching and a
synthetic two-domain generator."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import FormatError, SpecError, SplitError

UNLABELED = 255
EPOCH_MAGIC = b"ADST"
EPOCH_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class EpochRecord:
    subject_id: int
    signal: np.ndarray
    stage: int

    @property
    def labeled(self) -> bool:
        return self.stage != UNLABELED


@dataclass(eq=False)
class DomainDataset:
    """Columnar store of single-channel epochs for one domain.

    Equality compares what the epoch file persists (records, T, K); split
    assignment and metadata are not part of it.
    """

    subject_ids: np.ndarray  # int64 [n]
    signals: np.ndarray  # float32 [n, T]
    stages: np.ndarray  # uint8 [n], UNLABELED for missing labels
    epoch_len: int
    n_classes: int = 5
    domain_name: str = ""
    sampling_rate_hz: float = 10.0
    splits: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.subject_ids = np.asarray(self.subject_ids, dtype=np.int64).reshape(-1)
        self.signals = np.asarray(self.signals, dtype=np.float32).reshape(-1, self.epoch_len)
        self.stages = np.asarray(self.stages, dtype=np.uint8).reshape(-1)
        if not (len(self.subject_ids) == len(self.signals) == len(self.stages)):
            raise SpecError("subject_ids, signals and stages must have equal length")

    def __len__(self) -> int:
        return len(self.stages)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DomainDataset):
            return NotImplemented
        return (
            self.epoch_len == other.epoch_len
            and self.n_classes == other.n_classes
            and np.array_equal(self.subject_ids, other.subject_ids)
            and np.array_equal(self.stages, other.stages)
            and self.signals.tobytes() == other.signals.tobytes()
        )

    @classmethod
    def from_records(cls, records, epoch_len: int, n_classes: int = 5, **meta) -> "DomainDataset":
        records = list(records)
        return cls(
            np.array([r.subject_id for r in records], dtype=np.int64),
            np.array([r.signal for r in records], dtype=np.float32).reshape(len(records), epoch_len),
            np.array([r.stage for r in records], dtype=np.uint8),
            epoch_len, n_classes, **meta,
        )

    @property
    def records(self) -> list[EpochRecord]:
        return [EpochRecord(int(s), self.signals[i], int(y))
                for i, (s, y) in enumerate(zip(self.subject_ids, self.stages))]

    @property
    def subjects(self) -> np.ndarray:
        return np.unique(self.subject_ids)

    def split_indices(self, split: str) -> np.ndarray:
        if split == "all":
            return np.arange(len(self))
        if not self.splits:
            raise SplitError("dataset has no split assignment; run subject_split first")
        members = [s for s, name in self.splits.items() if name == split]
        return np.flatnonzero(np.isin(self.subject_ids, members))

    def is_labeled(self, split: str = "all") -> bool:
        return bool(np.all(self.stages[self.split_indices(split)] != UNLABELED))

    def class_histogram(self) -> np.ndarray:
        labeled = self.stages[self.stages != UNLABELED]
        return np.bincount(labeled, minlength=self.n_classes)

    def without_labels(self, split: str = "all") -> "DomainDataset":
        """Copy with the labels of ``split`` replaced by the sentinel."""
        stages = self.stages.copy()
        stages[self.split_indices(split)] = UNLABELED
        return replace(self, stages=stages, splits=dict(self.splits))


# -- file format ---------------------------------------------------------
_HEADER = struct.Struct("<4sIIII")


def save_dataset(ds: DomainDataset, path) -> None:
    n, t = len(ds), ds.epoch_len
    rec = np.zeros(n, dtype=np.dtype([("subject", "<u4"), ("stage", "u1"), ("signal", "<f4", (t,))]))
    rec["subject"] = ds.subject_ids
    rec["stage"] = ds.stages
    rec["signal"] = ds.signals
    header = _HEADER.pack(EPOCH_MAGIC, EPOCH_VERSION, n, t, ds.n_classes)
    Path(path).write_bytes(header + rec.tobytes())


def load_dataset(path, domain_name: str | None = None, sampling_rate_hz: float | None = None) -> DomainDataset:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != EPOCH_MAGIC:
        raise FormatError("not an epoch file: bad magic", 0)
    if len(blob) < _HEADER.size:
        raise FormatError("truncated header", len(blob))
    _, version, n, t, k = _HEADER.unpack_from(blob)
    if version != EPOCH_VERSION:
        raise FormatError(f"unsupported epoch file version {version}", 4)
    if t < 1 or k < 1 or k > UNLABELED:
        raise FormatError(f"invalid geometry T={t}, K={k}", 12)
    rec_size = 5 + 4 * t
    expected = _HEADER.size + n * rec_size
    if len(blob) < expected:
        raise FormatError(f"truncated payload: expected {expected} bytes, got {len(blob)}", len(blob))
    if len(blob) > expected:
        raise FormatError("trailing bytes after last record", expected)
    dt = np.dtype([("subject", "<u4"), ("stage", "u1"), ("signal", "<f4", (t,))])
    rec = np.frombuffer(blob, dtype=dt, count=n, offset=_HEADER.size)
    bad = np.flatnonzero((rec["stage"] >= k) & (rec["stage"] != UNLABELED))
    if bad.size:
        i = int(bad[0])
        raise FormatError(f"record {i}: stage {rec['stage'][i]} exceeds K-1={k - 1}",
                          _HEADER.size + i * rec_size + 4)
    return DomainDataset(
        rec["subject"].astype(np.int64), rec["signal"].astype(np.float32), rec["stage"].copy(),
        t, k,
        domain_name=domain_name if domain_name is not None else Path(path).stem,
        sampling_rate_hz=sampling_rate_hz if sampling_rate_hz is not None else t / 30.0,
    )


# -- splitting and batching ---------------------------------------------
def split_counts(n_subjects: int, fractions=(0.6, 0.2, 0.2)) -> list[int]:
    """Floor each share, then hand leftovers out by largest remainder (ties: earlier split)."""
    raw = [n_subjects * f for f in fractions]
    counts = [int(np.floor(r + 1e-9)) for r in raw]
    remainders = [r - c for r, c in zip(raw, counts)]
    for i in sorted(range(len(raw)), key=lambda i: (-remainders[i], i))[: n_subjects - sum(counts)]:
        counts[i] += 1
    return counts


def subject_split(ds: DomainDataset, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> DomainDataset:
    subjects = ds.subjects
    if len(subjects) < 5:
        raise SplitError(f"need at least 5 subjects for a subject-wise split, got {len(subjects)}")
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise SplitError(f"split fractions must be three non-negative shares summing to 1, got {fractions}")
    order = np.random.default_rng(seed).permutation(subjects)
    counts = split_counts(len(subjects), fractions)
    splits: dict[int, str] = {}
    start = 0
    for name, c in zip(SPLITS, counts):
        for s in order[start : start + c]:
            splits[int(s)] = name
        start += c
    return replace(ds, splits=splits)


def batches(ds: DomainDataset, split: str, batch_size: int, seed: int, epoch_index: int,
            shuffle: bool = True, with_index: bool = False) -> Iterator[tuple]:
    """Yield ``(signals[B, 1, T], stages[B])`` (plus dataset indices if asked).

    Order is reshuffled per ``(seed, epoch_index)``; the last short batch is kept.
    """
    idx = ds.split_indices(split)
    if shuffle:
        idx = idx[np.random.default_rng([seed, epoch_index]).permutation(len(idx))]
    for start in range(0, len(idx), batch_size):
        sel = idx[start : start + batch_size]
        x = ds.signals[sel].astype(np.float64)[:, None, :]
        y = ds.stages[sel].astype(np.int64)
        yield (x, y, sel) if with_index else (x, y)


def n_batches(ds: DomainDataset, split: str, batch_size: int) -> int:
    return -(-len(ds.split_indices(split)) // batch_size)


# -- synthetic domains ---------------------------------------------------
DEFAULT_PRIORS = (0.12, 0.10, 0.42, 0.20, 0.16)
# W, N1, N2, N3, REM; ordered roughly like the real spectral ordering
DEFAULT_BANDS = ((3.1, 3.6), (2.4, 2.9), (1.7, 2.2), (0.3, 0.8), (1.0, 1.5))


@dataclass
class SyntheticShiftSpec:
    seed: int = 0
    n_subjects: int = 20
    epochs_per_subject: int = 200
    epoch_len: int = 300
    epoch_seconds: float = 30.0
    priors: tuple[float, ...] = DEFAULT_PRIORS
    bands: tuple[tuple[float, float], ...] = DEFAULT_BANDS
    base_noise_sigma: float = 0.5
    # applied to the target role only
    amplitude_scale: float = 0.7
    frequency_offset_hz: float = 0.25
    noise_sigma: float = 0.5
    resample_factor: float = 0.8

    @property
    def sampling_rate_hz(self) -> float:
        return self.epoch_len / self.epoch_seconds

    @property
    def n_classes(self) -> int:
        return len(self.priors)

    def neutral(self) -> "SyntheticShiftSpec":
        return replace(self, amplitude_scale=1.0, frequency_offset_hz=0.0, noise_sigma=0.0,
                       resample_factor=1.0)

    def validate(self) -> list[str]:
        out = []
        p = np.asarray(self.priors, dtype=float)
        if p.ndim != 1 or p.size < 2 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            out.append(f"synth.priors must be >= 0 and sum to 1, got {self.priors}")
        if len(self.bands) != len(self.priors):
            out.append("synth.bands needs one (lo, hi) pair per class")
        else:
            ordered = sorted(self.bands)
            if any(lo >= hi or lo < 0 for lo, hi in ordered):
                out.append("synth.bands: each band needs 0 <= lo < hi")
            if any(a[1] >= b[0] for a, b in zip(ordered, ordered[1:])):
                out.append("synth.bands must be disjoint across classes")
            nyquist = self.sampling_rate_hz / 2
            if ordered[-1][1] + max(self.frequency_offset_hz, 0) >= nyquist:
                out.append(f"synth.bands (plus offset) must stay below Nyquist {nyquist:g} Hz")
        if self.n_subjects < 1 or self.epochs_per_subject < 1 or self.epoch_len < 2:
            out.append("synth: n_subjects, epochs_per_subject must be >= 1 and epoch_len >= 2")
        if self.resample_factor <= 0 or self.amplitude_scale <= 0:
            out.append("synth.resample_factor and synth.amplitude_scale must be > 0")
        if self.noise_sigma < 0 or self.base_noise_sigma < 0:
            out.append("synth noise levels must be >= 0")
        return out


def _resample_roundtrip(x: np.ndarray, factor: float) -> np.ndarray:
    """Sample at ``factor`` times the rate by linear interpolation, then back to T."""
    t = x.shape[-1]
    m = max(2, int(round(t * factor)))
    grid = np.linspace(0.0, t - 1.0, t)
    coarse = np.linspace(0.0, t - 1.0, m)
    down = np.array([np.interp(coarse, grid, row) for row in x])
    return np.array([np.interp(grid, coarse, row) for row in down])


def _zscore(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    return (x - mu) / np.where(sd > 0, sd, 1.0)


def generate_synthetic(spec: SyntheticShiftSpec, role: str = "source") -> DomainDataset:
    """Each epoch: two sinusoids from its class band with per-subject phases,
    plus Gaussian noise; the target role also gets the shift applied.
    Signals are z-scored per epoch and stored as float32."""
    problems = spec.validate()
    if problems:
        raise SpecError("; ".join(problems))
    if role not in ("source", "target"):
        raise SpecError(f"role must be 'source' or 'target', got {role!r}")
    target = role == "target"
    rng = np.random.default_rng([spec.seed, 1 if target else 0])
    n = spec.n_subjects * spec.epochs_per_subject
    t = np.arange(spec.epoch_len) / spec.sampling_rate_hz
    bands = np.asarray(spec.bands, dtype=float)

    subject_ids = np.repeat(np.arange(spec.n_subjects), spec.epochs_per_subject)
    phases = rng.uniform(0.0, 2 * np.pi, size=(spec.n_subjects, 2))[subject_ids]
    stages = rng.choice(spec.n_classes, size=n, p=np.asarray(spec.priors, dtype=float))
    lo, hi = bands[stages, 0], bands[stages, 1]
    freqs = lo[:, None] + (hi - lo)[:, None] * rng.random((n, 2))
    base_noise = rng.standard_normal((n, spec.epoch_len))
    extra_noise = rng.standard_normal((n, spec.epoch_len))

    if target:
        freqs = freqs + spec.frequency_offset_hz
    waves = np.sin(2 * np.pi * freqs[:, :, None] * t[None, None, :] + phases[:, :, None]).sum(axis=1)
    x = waves + spec.base_noise_sigma * base_noise
    if target:
        x = spec.amplitude_scale * x
        if spec.resample_factor != 1.0:
            x = _resample_roundtrip(x, spec.resample_factor)
        x = x + spec.noise_sigma * extra_noise
    return DomainDataset(
        subject_ids, _zscore(x).astype(np.float32), stages.astype(np.uint8),
        spec.epoch_len, spec.n_classes, domain_name=role, sampling_rate_hz=spec.sampling_rate_hz,
    )


def spectral_distance(a: DomainDataset, b: DomainDataset) -> float:
    """Mean per-bin L1 gap between the domains' average magnitude spectra."""
    sa = np.abs(np.fft.rfft(a.signals.astype(np.float64), axis=1)).mean(axis=0)
    sb = np.abs(np.fft.rfft(b.signals.astype(np.float64), axis=1)).mean(axis=0)
    return float(np.abs(sa - sb).mean())
