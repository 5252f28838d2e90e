"""Clip normalization, training windows and evaluation segments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ClipTooLong, NoSpectralPeak, RecordTooShort
from .ingest import Record
from .spectral import DEFAULT_BAND, HrBand, estimate_hr

STD_FLOOR = 1e-6
MIN_EVAL_SECONDS = 2.0


@dataclass
class FrameClip:
    """A standardized (T, 3, H, W) window with its aligned labels.

    ``raw`` is the uint8 source slice, kept for the classical baselines which
    need positive intensities.
    """

    data: np.ndarray
    fps: float
    identity: int
    bvp: np.ndarray
    hr_bpm: float
    start: int = 0
    raw: np.ndarray | None = None

    def __post_init__(self):
        t, c, h, w = self.data.shape
        if t < 2 or c != 3 or h < 8 or w < 8:
            raise ValueError(f"bad clip shape {self.data.shape}")
        if len(self.bvp) != t:
            raise ValueError(f"bvp length {len(self.bvp)} != clip length {t}")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]


def standardize_clip(raw) -> np.ndarray:
    """Per-channel z-score over (T, H, W); near-constant channels become zeros."""
    x = np.asarray(raw, dtype=np.float64)
    if x.ndim != 4 or x.shape[0] < 2:
        raise ValueError(f"expected (T>=2, C, H, W), got {x.shape}")
    mean = x.mean(axis=(0, 2, 3), keepdims=True)
    std = x.std(axis=(0, 2, 3), keepdims=True)
    out = (x - mean) / np.where(std < STD_FLOOR, 1.0, std)
    out[:, (std < STD_FLOOR).ravel()] = 0.0
    return out.astype(np.float32)


def _segment_hr(bvp: np.ndarray, fps: float, band: HrBand) -> float:
    try:
        return estimate_hr(bvp, fps, band)
    except NoSpectralPeak:
        return 0.0


def make_clip(record: Record, start: int, length: int, identity: int | None = None,
              bvp: np.ndarray | None = None, band: HrBand = DEFAULT_BAND) -> FrameClip:
    if bvp is None:
        bvp = record.bvp_at_video_rate()
    raw = record.frames[start:start + length]
    seg_bvp = bvp[start:start + length]
    return FrameClip(
        data=standardize_clip(raw),
        fps=record.fps,
        identity=record.identity if identity is None else identity,
        bvp=seg_bvp,
        hr_bpm=_segment_hr(seg_bvp, record.fps, band),
        start=start,
        raw=raw,
    )


def window_starts(num_frames: int, length: int, stride: int) -> list[int]:
    if length > num_frames:
        raise ClipTooLong(f"clip of {length} frames exceeds record of {num_frames}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return list(range(0, num_frames - length + 1, stride))


def window_clips(record: Record, length: int, stride: int, identity: int | None = None,
                 band: HrBand = DEFAULT_BAND) -> list[FrameClip]:
    """Sliding training windows, each standardized and labelled."""
    bvp = record.bvp_at_video_rate()
    return [
        make_clip(record, s, length, identity, bvp, band)
        for s in window_starts(record.num_frames, length, stride)
    ]


def eval_segment_count(duration: float, target_seconds: float = 8.0) -> int:
    if duration < 3 * target_seconds:
        return max(1, math.floor(duration / target_seconds))
    return min(4, max(3, round(duration / target_seconds)))


def eval_segment_frames(num_frames: int, fps: float, target_seconds: float = 8.0) -> int:
    """Frames per evaluation segment for a record of ``num_frames``."""
    duration = num_frames / fps
    n = eval_segment_count(duration, target_seconds)
    if n * target_seconds <= duration and duration < 3 * target_seconds:
        return int(round(target_seconds * fps))
    return num_frames // n


def segment_for_eval(record: Record, target_seconds: float = 8.0, identity: int | None = None,
                     band: HrBand = DEFAULT_BAND) -> list[FrameClip]:
    """Split a record into 3-4 equal segments of roughly ``target_seconds``.

    Records shorter than three targets get ``floor(duration / target)``
    segments of exactly ``target_seconds`` (at least one).
    """
    if record.duration < MIN_EVAL_SECONDS:
        raise RecordTooShort(f"record of {record.duration:.2f} s is shorter than {MIN_EVAL_SECONDS} s")
    n = eval_segment_count(record.duration, target_seconds)
    length = min(eval_segment_frames(record.num_frames, record.fps, target_seconds),
                 record.num_frames)
    bvp = record.bvp_at_video_rate()
    return [make_clip(record, i * length, length, identity, bvp, band) for i in range(n)]
