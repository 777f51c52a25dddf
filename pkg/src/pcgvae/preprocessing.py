"""Recording ingestion, the clip -> low-pass -> rescale chain, cropping and mu-law."""

from __future__ import annotations

import csv
import logging
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CLASSES = ("Normal", "Murmur", "Extrasystole")
REFERENCE_CROP_LENGTHS = (6144, 9216, 12288)


class IngestionError(OSError):
    pass


class ManifestError(ValueError):
    pass


class FormatError(ValueError):
    pass


@dataclass
class AudioRecord:
    samples: np.ndarray
    sample_rate: int
    label: str
    source_path: str

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ValueError(f"{self.source_path}: empty recording")
        if self.sample_rate <= 0:
            raise ValueError(f"{self.source_path}: sample rate must be positive")
        if self.label not in CLASSES:
            raise ManifestError(f"unknown label {self.label!r}")


@dataclass
class PreprocessConfig:
    clip_percentile: float = 99.9
    cutoff_hz: float = 195.0
    crop_length: int = 12288
    crops_per_signal: int = 10
    rng_seed: int = 0
    filter_taps: int = 101

    def __post_init__(self):
        if not 0 < self.clip_percentile <= 100:
            raise ValueError("clip_percentile must lie in (0, 100]")
        if self.cutoff_hz <= 0:
            raise ValueError("cutoff_hz must be positive")
        if self.crop_length <= 0 or self.crop_length % 64:
            raise ValueError(f"crop_length {self.crop_length} must be a positive multiple of 64")
        if self.crops_per_signal < 1:
            raise ValueError("crops_per_signal must be >= 1")


@dataclass
class CropBatch:
    crops: np.ndarray
    record_ids: np.ndarray
    quantized: np.ndarray = field(init=False)

    def __post_init__(self):
        self.crops = np.asarray(self.crops, dtype=np.float32)
        self.record_ids = np.asarray(self.record_ids, dtype=np.int64)
        self.quantized = mulaw_encode(self.crops)

    def __len__(self):
        return len(self.crops)


# ------------------------------------------------------------------ ingestion

def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a 16-bit mono PCM WAV as float amplitudes in [-1, 1)."""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"cannot read recording: {path}")
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            frames = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a PCM WAV file ({exc})") from exc
    if channels != 1:
        raise FormatError(f"{path}: expected mono, found {channels} channels")
    if width != 2:
        raise FormatError(f"{path}: expected 16-bit samples, found {8 * width}-bit")
    return np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0, rate


def write_wav(path, samples: np.ndarray, sample_rate: int = 4000):
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def load_manifest(manifest_path) -> list[AudioRecord]:
    """Read a ``path,label`` CSV; relative paths resolve against the CSV's folder."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    records = []
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return records
        if [f.strip() for f in reader.fieldnames] != ["path", "label"]:
            raise ManifestError(f"{manifest_path}: header must be 'path,label'")
        for row_no, row in enumerate(reader, start=1):
            label = row["label"].strip()
            if label not in CLASSES:
                raise ManifestError(f"{manifest_path}: row {row_no}: unknown label {label!r}")
            path = Path(row["path"].strip())
            if not path.is_absolute():
                path = base / path
            samples, rate = read_wav(path)
            records.append(AudioRecord(samples, rate, label, str(path)))
    return records


# ------------------------------------------------------------ preprocessing

def clip_percentile(signal, p: float = 99.9) -> np.ndarray:
    """Saturate at +/- the ``p``-th percentile of ``|signal|``."""
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0:
        raise ValueError("clip_percentile: empty signal")
    if not 0 < p <= 100:
        raise ValueError("clip_percentile: p must lie in (0, 100]")
    t = np.percentile(np.abs(x), p, method="linear")
    return np.clip(x, -t, t)


def lowpass_taps(cutoff_hz: float, sample_rate: float, taps: int = 101) -> np.ndarray:
    """Hamming-windowed sinc with unit DC gain."""
    if not 0 < cutoff_hz < sample_rate / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({sample_rate / 2} Hz)")
    if taps % 2 == 0:
        raise ValueError("tap count must be odd for a centred filter")
    fc = cutoff_hz / sample_rate
    n = np.arange(taps) - (taps - 1) / 2
    h = 2 * fc * np.sinc(2 * fc * n) * np.hamming(taps)
    return h / h.sum()


def lowpass_filter(signal, cutoff_hz: float = 195.0, sample_rate: float = 4000.0, taps: int = 101) -> np.ndarray:
    """Zero-phase FIR low-pass; reflect padding keeps the input length."""
    h = lowpass_taps(cutoff_hz, sample_rate, taps)
    x = np.asarray(signal, dtype=np.float64)
    half = (taps - 1) // 2
    mode = "reflect" if x.size > 1 else "edge"
    xp = np.pad(x, half, mode=mode)
    return np.convolve(xp, h, mode="valid")


def rescale_unit(signal) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    peak = np.max(np.abs(x)) if x.size else 0.0
    return np.zeros_like(x) if peak == 0 else x / peak


def preprocess_signal(signal, sample_rate: float, cfg: PreprocessConfig) -> np.ndarray:
    x = clip_percentile(signal, cfg.clip_percentile)
    x = lowpass_filter(x, cfg.cutoff_hz, sample_rate, cfg.filter_taps)
    return rescale_unit(x)


def _pad_to(x: np.ndarray, length: int) -> np.ndarray:
    if len(x) >= length:
        return x
    return np.pad(x, (0, length - len(x)), mode="reflect" if len(x) > 1 else "edge")


def record_rng(seed: int, record_index: int) -> np.random.Generator:
    """Per-record stream so crops do not depend on processing order."""
    return np.random.default_rng([int(seed), int(record_index)])


def random_crops(signal, cfg: PreprocessConfig, record_index: int = 0) -> np.ndarray:
    """``crops_per_signal`` windows of ``crop_length`` at uniform random offsets."""
    x = _pad_to(np.asarray(signal, dtype=np.float64), cfg.crop_length)
    rng = record_rng(cfg.rng_seed, record_index)
    starts = rng.integers(0, len(x) - cfg.crop_length + 1, size=cfg.crops_per_signal)
    return np.stack([x[s:s + cfg.crop_length] for s in starts])


def make_crop_batch(records: list[AudioRecord], cfg: PreprocessConfig, record_ids=None) -> CropBatch:
    """Preprocess and crop each record; ``record_ids`` index the manifest."""
    record_ids = range(len(records)) if record_ids is None else record_ids
    crops, ids = [], []
    for rid, rec in zip(record_ids, records):
        x = preprocess_signal(rec.samples, rec.sample_rate, cfg)
        c = random_crops(x, cfg, rid)
        crops.append(c)
        ids.extend([rid] * len(c))
    if not crops:
        return CropBatch(np.zeros((0, cfg.crop_length)), np.zeros(0))
    return CropBatch(np.clip(np.concatenate(crops), -1.0, 1.0), np.asarray(ids))


# --------------------------------------------------------------------- mu-law

def mulaw_encode(x, levels: int = 256, counter: dict | None = None) -> np.ndarray:
    """Compand with mu = levels - 1 and quantise to ``levels`` equal bins.

    Bins are half-open over the companded range [-1, 1], the last one
    closed. Inputs outside [-1, 1] are clamped and counted in
    ``counter['clamped']`` when a counter is given.
    """
    x = np.asarray(x, dtype=np.float64)
    outside = int(np.count_nonzero((x < -1) | (x > 1)))
    if outside:
        if counter is not None:
            counter["clamped"] = counter.get("clamped", 0) + outside
        x = np.clip(x, -1.0, 1.0)
    mu = levels - 1
    c = np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)
    idx = np.floor((c + 1) / 2 * levels).astype(np.int64)
    return np.minimum(idx, levels - 1)


def mulaw_expand(c, levels: int = 256) -> np.ndarray:
    mu = levels - 1
    c = np.asarray(c, dtype=np.float64)
    return np.sign(c) * np.expm1(np.abs(c) * np.log1p(mu)) / mu


def mulaw_decode(indices, levels: int = 256) -> np.ndarray:
    """Amplitude at the companded centre of each bin."""
    idx = np.asarray(indices, dtype=np.float64)
    return mulaw_expand(-1 + (idx + 0.5) * 2 / levels, levels)


def mulaw_bin_bound(x, levels: int = 256) -> np.ndarray:
    """Worst-case |decode(encode(x)) - x| inside x's bin."""
    k = mulaw_encode(x, levels)
    lo = mulaw_expand(-1 + k * 2 / levels, levels)
    hi = mulaw_expand(-1 + (k + 1) * 2 / levels, levels)
    centre = mulaw_decode(k, levels)
    return np.maximum(centre - lo, hi - centre)


# ------------------------------------------------------------------- splits

def stratified_split(labels, val_fraction: float, rng_seed: int = 0) -> tuple[list[int], list[int]]:
    """Per-class shuffled split of record indices into (train, validation)."""
    if not 0 <= val_fraction < 1:
        raise ValueError("val_fraction must lie in [0, 1)")
    labels = list(labels)
    rng = np.random.default_rng(rng_seed)
    train, val = [], []
    for cls in sorted(set(labels), key=lambda c: CLASSES.index(c) if c in CLASSES else len(CLASSES)):
        idx = [i for i, lab in enumerate(labels) if lab == cls]
        if len(idx) < 2:
            if val_fraction > 0:
                log.warning("class %s has %d record(s); kept in training", cls, len(idx))
            train.extend(idx)
            continue
        idx = list(rng.permutation(idx))
        n_val = min(int(np.floor(len(idx) * val_fraction + 0.5)), len(idx) - 1)
        val.extend(int(i) for i in idx[:n_val])
        train.extend(int(i) for i in idx[n_val:])
    return sorted(train), sorted(val)
