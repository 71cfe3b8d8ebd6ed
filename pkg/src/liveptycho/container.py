"""On-disk dataset container and run manifests.

Container layout (all little-endian)::

    meta.json      {"version", "K", "probe_shape", "object_shape", "frame_dtype", "endianness"}
    positions.bin  K records of two float64: (y, x) probe-window centre
    frames.bin     K contiguous h*w intensity frames, float32 or float64

Simulated datasets additionally carry ``object.npy`` and ``probe.npy`` with
the ground truth.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import ScanDataset
from .errors import DataError

CONTAINER_VERSION = 1
_DTYPES = {"f32": "<f4", "f64": "<f8"}


def write_json(path: Path, data: dict) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_dataset(directory, dataset: ScanDataset, frame_dtype: str = "f64") -> Path:
    if frame_dtype not in _DTYPES:
        raise DataError(f"frame dtype must be one of {sorted(_DTYPES)}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    h, w = dataset.probe_shape
    meta = {
        "version": CONTAINER_VERSION,
        "K": len(dataset),
        "probe_shape": [h, w],
        "object_shape": list(dataset.object_shape),
        "frame_dtype": frame_dtype,
        "endianness": "LE",
    }
    write_json(directory / "meta.json", meta)
    centres = dataset.positions.astype(np.float64) + np.array([h / 2, w / 2])
    (directory / "positions.bin").write_bytes(centres.astype("<f8").tobytes())
    (directory / "frames.bin").write_bytes(
        dataset.intensities.astype(_DTYPES[frame_dtype]).tobytes())
    return directory


def read_meta(directory) -> dict:
    path = Path(directory) / "meta.json"
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for key in ("K", "probe_shape", "object_shape", "frame_dtype"):
        if key not in meta:
            raise DataError(f"meta.json lacks {key!r}")
    if meta.get("endianness", "LE") != "LE" or meta["frame_dtype"] not in _DTYPES:
        raise DataError("unsupported frame encoding")
    return meta


def read_dataset(directory) -> ScanDataset:
    directory = Path(directory)
    meta = read_meta(directory)
    K = int(meta["K"])
    h, w = (int(v) for v in meta["probe_shape"])
    try:
        centres = np.frombuffer((directory / "positions.bin").read_bytes(), dtype="<f8")
        frames = np.frombuffer((directory / "frames.bin").read_bytes(),
                               dtype=_DTYPES[meta["frame_dtype"]])
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read container {directory}: {exc}") from exc
    if centres.size != 2 * K or frames.size != K * h * w:
        raise DataError(
            f"container sizes disagree with K={K}: {centres.size // 2} positions, "
            f"{frames.size / (h * w):g} frames")
    topleft = np.rint(centres.reshape(K, 2) - np.array([h / 2, w / 2])).astype(np.int64)
    return ScanDataset(frames.reshape(K, h, w).astype(np.float64), topleft,
                       tuple(meta["object_shape"]))


def read_truth(directory) -> tuple[np.ndarray | None, np.ndarray | None]:
    directory = Path(directory)
    obj = np.load(directory / "object.npy") if (directory / "object.npy").exists() else None
    probe = np.load(directory / "probe.npy") if (directory / "probe.npy").exists() else None
    return obj, probe


def load_array(path) -> np.ndarray:
    try:
        return np.load(Path(path))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load array {path}: {exc}") from exc


def directory_hash(directory) -> str:
    """SHA-256 over the names and bytes of every file under ``directory``."""
    digest = hashlib.sha256()
    root = Path(directory)
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(str(path.relative_to(root)).encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def manifest(command: str, args: dict) -> dict:
    return {"tool": "liveptycho", "version": __version__, "command": command, "args": args}


def write_manifest(directory, command: str, args: dict) -> None:
    write_json(Path(directory) / "manifest.json", manifest(command, args))
