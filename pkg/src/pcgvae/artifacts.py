"""On-disk artifacts: float matrices with JSON sidecars, CSV tables, run locks."""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

PIPELINE_VERSION = "1"


class RunDirError(RuntimeError):
    pass


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def write_array(prefix, array: np.ndarray, meta: dict):
    """``prefix.bin`` holds little-endian float32, row-major; ``prefix.json`` the sidecar."""
    prefix = Path(prefix)
    arr = np.ascontiguousarray(array, dtype="<f4")
    prefix.with_suffix(".bin").write_bytes(arr.tobytes())
    side = {"shape": list(arr.shape), "dtype": "float32-le", "pipeline_version": PIPELINE_VERSION}
    side.update(meta)
    prefix.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))


def read_array(prefix) -> tuple[np.ndarray, dict]:
    prefix = Path(prefix)
    meta = json.loads(prefix.with_suffix(".json").read_text())
    raw = prefix.with_suffix(".bin").read_bytes()
    arr = np.frombuffer(raw, dtype="<f4").reshape(meta["shape"]).astype(np.float32)
    return arr, meta


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def write_csv(path, header: list, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def fmt(x) -> str:
    """Stable text for floats in CSV output."""
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


@contextlib.contextmanager
def run_dir(path):
    """Claim a fresh output directory for one command.

    Directories are append-only: an existing non-empty directory is
    refused, and a lock file guards against a concurrent writer.
    """
    path = Path(path)
    if path.exists() and any(p.name != ".lock" for p in path.iterdir()):
        raise RunDirError(f"{path} already holds artifacts; use a fresh output directory")
    path.mkdir(parents=True, exist_ok=True)
    lock = path / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise RunDirError(f"{path} is locked by another command") from exc
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    try:
        yield path
    finally:
        lock.unlink(missing_ok=True)
