"""On-disk record format.

A record is a directory::

    <record>/frames/000000.png ...   lossless RGB frames, decoded in name order
    <record>/bvp.csv                 header ``t_seconds,value``
    <record>/meta.json               {"fps": .., "identity": .., "hr_bpm": .. (optional)}

A dataset root is any directory tree containing such records.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EmptyDataset, EmptyTrace, LabelMismatch, MalformedMeta, MissingFrames

FRAME_DIR = "frames"
BVP_FILE = "bvp.csv"
META_FILE = "meta.json"
IMAGE_SUFFIXES = (".png", ".bmp", ".tif", ".tiff")


@dataclass
class Record:
    """One video with its physiological labels.

    ``frames`` is a uint8 array of shape (T, 3, H, W).
    """

    frames: np.ndarray
    fps: float
    bvp: np.ndarray
    bvp_fs: float
    identity: int
    hr_bpm: float | None = None
    meta: dict = field(default_factory=dict)
    path: Path | None = None

    def __post_init__(self):
        if not self.fps > 0:
            raise MalformedMeta(f"fps must be positive, got {self.fps}")
        if self.frames.ndim != 4 or self.frames.shape[0] < 2:
            raise MissingFrames(f"need at least 2 frames, got shape {self.frames.shape}")
        if self.identity < 0:
            raise MalformedMeta(f"identity must be >= 0, got {self.identity}")
        if not self.bvp_fs > 0:
            raise LabelMismatch(f"bvp sampling rate must be positive, got {self.bvp_fs}")
        expected = self.duration * self.bvp_fs
        if len(self.bvp) == 0 or abs(len(self.bvp) - expected) > 1 + 1e-6:
            raise LabelMismatch(
                f"bvp has {len(self.bvp)} samples, expected {expected:.1f} "
                f"for {self.duration:.3f} s at {self.bvp_fs} Hz"
            )

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def duration(self) -> float:
        return self.num_frames / self.fps

    def bvp_at_video_rate(self) -> np.ndarray:
        """Ground-truth BVP resampled onto the frame grid (length = num_frames)."""
        if np.isclose(self.bvp_fs, self.fps) and len(self.bvp) == self.num_frames:
            return self.bvp.astype(np.float64)
        out = resample_labels(self.bvp, self.bvp_fs, self.fps)
        if len(out) < self.num_frames:
            out = np.pad(out, (0, self.num_frames - len(out)), mode="edge")
        return out[: self.num_frames]


@dataclass(frozen=True)
class RecordDescriptor:
    path: Path
    identity: int
    source_identity: int
    duration: float


@dataclass
class DatasetIndex:
    records: list[RecordDescriptor]
    num_identities: int

    def __len__(self):
        return len(self.records)

    def subset(self, items) -> "DatasetIndex":
        """Index over a subset of descriptors, keeping the identity arity."""
        return DatasetIndex(list(items), self.num_identities)


def resample_labels(trace, src_fs: float, dst_fs: float) -> np.ndarray:
    """Linearly interpolate ``trace`` from ``src_fs`` onto a uniform ``dst_fs`` grid.

    The output covers the same time span, ``len(trace) / src_fs`` seconds, and has
    ``round(duration * dst_fs)`` samples. Grid points past the last input
    sample hold its value.
    """
    x = np.asarray(trace, dtype=np.float64)
    if x.ndim != 1 or len(x) < 2:
        raise EmptyTrace(f"need at least 2 samples, got {x.size}")
    if not (src_fs > 0 and dst_fs > 0):
        raise ValueError("sampling rates must be positive")
    duration = len(x) / src_fs
    n_out = int(round(duration * dst_fs))
    t_src = np.arange(len(x)) / src_fs
    t_dst = np.arange(n_out) / dst_fs
    return np.interp(t_dst, t_src, x)


def _read_meta(path: Path) -> dict:
    try:
        meta = json.loads((path / META_FILE).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedMeta(f"{path / META_FILE}: {exc}") from exc
    if not isinstance(meta, dict):
        raise MalformedMeta(f"{path / META_FILE}: expected an object")
    for key in ("fps", "identity"):
        if key not in meta:
            raise MalformedMeta(f"{path / META_FILE}: missing key '{key}'")
    try:
        fps = float(meta["fps"])
        identity = int(meta["identity"])
        hr = meta.get("hr_bpm")
        hr = None if hr is None else float(hr)
    except (TypeError, ValueError) as exc:
        raise MalformedMeta(f"{path / META_FILE}: {exc}") from exc
    if not fps > 0 or identity < 0:
        raise MalformedMeta(f"{path / META_FILE}: fps must be > 0 and identity >= 0")
    meta["fps"], meta["identity"], meta["hr_bpm"] = fps, identity, hr
    return meta


def _frame_files(path: Path) -> list[Path]:
    frame_dir = path / FRAME_DIR
    if not frame_dir.is_dir():
        return []
    return sorted(p for p in frame_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _read_bvp(path: Path) -> tuple[np.ndarray, float]:
    try:
        with open(path / BVP_FILE, newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
    except OSError as exc:
        raise LabelMismatch(f"{path / BVP_FILE}: {exc}") from exc
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    if len(rows) < 2:
        raise LabelMismatch(f"{path / BVP_FILE}: need at least 2 samples, got {len(rows)}")
    try:
        data = np.array([[float(r[0]), float(r[1])] for r in rows])
    except (IndexError, ValueError) as exc:
        raise LabelMismatch(f"{path / BVP_FILE}: {exc}") from exc
    t, values = data[:, 0], data[:, 1]
    span = t[-1] - t[0]
    if span <= 0:
        raise LabelMismatch(f"{path / BVP_FILE}: timestamps must increase")
    return values, (len(t) - 1) / span


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_record(path) -> Record:
    path = Path(path)
    meta = _read_meta(path)
    files = _frame_files(path)
    if not files:
        raise MissingFrames(f"no image files under {path / FRAME_DIR}")
    frames = np.stack([np.asarray(Image.open(f).convert("RGB")) for f in files])
    frames = np.ascontiguousarray(frames.transpose(0, 3, 1, 2))
    bvp, bvp_fs = _read_bvp(path)
    extra = {k: v for k, v in meta.items() if k not in ("fps", "identity", "hr_bpm")}
    return Record(
        frames=frames,
        fps=meta["fps"],
        bvp=bvp,
        bvp_fs=bvp_fs,
        identity=meta["identity"],
        hr_bpm=meta["hr_bpm"],
        meta=extra,
        path=path,
    )


def write_record(path, frames: np.ndarray, fps: float, bvp, bvp_fs: float, identity: int,
                 hr_bpm: float | None = None, meta: dict | None = None) -> Path:
    """Write a record directory. ``frames`` is uint8 (T, 3, H, W)."""
    path = Path(path)
    frame_dir = path / FRAME_DIR
    frame_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        Image.fromarray(np.ascontiguousarray(frame.transpose(1, 2, 0))).save(
            frame_dir / f"{i:06d}.png", optimize=False
        )
    with open(path / BVP_FILE, "w", newline="") as fh:
        fh.write("t_seconds,value\n")
        for i, v in enumerate(np.asarray(bvp, dtype=np.float64)):
            fh.write(f"{i / bvp_fs!r},{float(v)!r}\n")
    doc = dict(meta or {})
    doc.update(fps=fps, identity=int(identity))
    if hr_bpm is not None:
        doc["hr_bpm"] = float(hr_bpm)
    (path / META_FILE).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def index_dataset(root) -> DatasetIndex:
    """Find every record under ``root`` and remap identities onto ``range(K)``."""
    root = Path(root)
    if not root.is_dir():
        raise EmptyDataset(f"{root} is not a directory")
    found = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        if META_FILE in filenames and os.path.isdir(os.path.join(dirpath, FRAME_DIR)):
            found.append(Path(dirpath))
    if not found:
        raise EmptyDataset(f"no records under {root}")
    found.sort(key=lambda p: p.as_posix())

    entries = []
    for path in found:
        meta = _read_meta(path)
        n_frames = len(_frame_files(path))
        entries.append((path, meta["identity"], n_frames / meta["fps"]))
    mapping = {ident: i for i, ident in enumerate(sorted({e[1] for e in entries}))}
    records = [RecordDescriptor(p, mapping[ident], ident, dur) for p, ident, dur in entries]
    return DatasetIndex(records, len(mapping))
