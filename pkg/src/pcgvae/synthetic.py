"""Synthetic heart-sound records for smoke runs.

Normal records are periodic S1/S2-like pulses band-limited below 195 Hz.
Anomalous records add irregular bursts: noisy systolic bursts (labelled
Murmur) or extra premature beats (labelled Extrasystole).
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import numpy as np

from .preprocessing import lowpass_filter, write_wav

FS = 4000


def _pulse(n, centre, width, freq, amp):
    u = np.arange(n) - centre
    return amp * np.exp(-0.5 * (u / width) ** 2) * np.sin(2 * np.pi * freq * u / FS)


def normal_signal(rng: np.random.Generator, seconds: float) -> tuple[np.ndarray, list[int]]:
    n = int(seconds * FS)
    period = rng.uniform(0.7, 1.0) * FS
    x = np.zeros(n)
    beats = []
    t = rng.uniform(0, period)
    f1, f2 = rng.uniform(40, 70), rng.uniform(60, 110)
    while t < n:
        c = int(t + rng.normal(0, 0.01 * FS))
        beats.append(c)
        x += _pulse(n, c, 0.012 * FS, f1, 1.0)
        x += _pulse(n, c + 0.3 * FS, 0.010 * FS, f2, 0.6)
        t += period
    x += 0.02 * rng.standard_normal(n)
    return lowpass_filter(x, 190.0, FS), beats


def anomalous_signal(rng: np.random.Generator, seconds: float, kind: str) -> np.ndarray:
    x, beats = normal_signal(rng, seconds)
    n = len(x)
    if kind == "Murmur":
        for c in beats:
            if rng.random() < 0.8:
                start = int(c + rng.uniform(0.05, 0.1) * FS)
                length = int(rng.uniform(0.1, 0.2) * FS)
                burst = np.zeros(n)
                end = min(n, start + length)
                if end > start:
                    burst[start:end] = rng.standard_normal(end - start) * np.hanning(end - start)
                x += rng.uniform(0.4, 0.7) * lowpass_filter(burst, 180.0, FS)
    else:
        for c in beats:
            if rng.random() < 0.5:
                e = c + rng.uniform(0.45, 0.6) * FS
                x += _pulse(n, e, 0.015 * FS, rng.uniform(30, 60), rng.uniform(0.8, 1.2))
                x += _pulse(n, e + 0.2 * FS, 0.01 * FS, rng.uniform(60, 110), 0.5)
    return x


def make_dataset(out_dir, n_normal: int = 60, n_murmur: int = 15, n_extrasystole: int = 15, seed: int = 0,
                 seconds: tuple = (4.0, 7.0)) -> Path:
    """Write WAVs and a ``manifest.csv``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    plan = ["Normal"] * n_normal + ["Murmur"] * n_murmur + ["Extrasystole"] * n_extrasystole
    for i, label in enumerate(plan):
        dur = rng.uniform(*seconds)
        x = normal_signal(rng, dur)[0] if label == "Normal" else anomalous_signal(rng, dur, label)
        x = 0.8 * x / np.max(np.abs(x))
        name = f"{label.lower()}_{i:03d}.wav"
        write_wav(out_dir / name, x, FS)
        rows.append((name, label))
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "label"])
        w.writerows(rows)
    return manifest


def main(argv=None):
    ap = argparse.ArgumentParser(description="write a synthetic PCG dataset")
    ap.add_argument("out")
    ap.add_argument("--normal", type=int, default=60)
    ap.add_argument("--murmur", type=int, default=15)
    ap.add_argument("--extrasystole", type=int, default=15)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args(argv)
    print(make_dataset(a.out, a.normal, a.murmur, a.extrasystole, a.seed))


if __name__ == "__main__":
    main()
