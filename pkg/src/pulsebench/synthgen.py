"""Synthetic face videos with known pulse and identity.

Each identity owns a fixed ellipse (the "face contour"). Pixels inside it
carry a skin tone modulated by the ground-truth BVP with a realistic
per-channel pulse signature; pixels outside are a flat background. Heart
rates sit on exact FFT bins of the evaluation segment length, so the
ground-truth HR is what the spectral estimator reads off the true BVP.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContourOutOfFrame, IoFailure
from .ingest import DatasetIndex, Record, index_dataset, write_record
from .preprocess import eval_segment_frames
from .spectral import DEFAULT_BAND, BvpTrace, HrBand

# relative pulsatile strength of normalized R, G, B for skin
PULSE_SIGNATURE = np.array([0.33, 0.77, 0.53])
HARMONIC_GAIN = 0.3
DRIFT_HZ = 0.1


def _frac(x: float) -> float:
    return x - math.floor(x)


@dataclass(frozen=True)
class Ellipse:
    """Center, semi-axes and rotation in fractions of the frame size."""

    cx: float
    cy: float
    a: float
    b: float
    theta: float

    def extents(self) -> tuple[float, float]:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return math.hypot(self.a * c, self.b * s), math.hypot(self.a * s, self.b * c)

    def fits(self) -> bool:
        ex, ey = self.extents()
        return self.cx - ex >= 0 and self.cx + ex <= 1 and self.cy - ey >= 0 and self.cy + ey <= 1

    def mask(self, height: int, width: int) -> np.ndarray:
        v, u = np.mgrid[0:height, 0:width]
        u = (u + 0.5) / width - self.cx
        v = (v + 0.5) / height - self.cy
        c, s = math.cos(self.theta), math.sin(self.theta)
        du = c * u + s * v
        dv = -s * u + c * v
        return (du / self.a) ** 2 + (dv / self.b) ** 2 <= 1.0


def identity_contour(identity: int) -> Ellipse:
    """Deterministic, well-spread ellipse per identity (low-discrepancy sequences)."""
    g = identity + 1
    return Ellipse(
        cx=0.5 + 0.12 * (_frac(g * 0.41421356) - 0.5),
        cy=0.5 + 0.12 * (_frac(g * 0.73205081) - 0.5),
        a=0.32 + 0.12 * _frac(g * 0.61803399),
        b=0.22 + 0.12 * _frac(g * 0.75487767 + 0.3),
        theta=math.pi * _frac(g * 0.56984029 + 0.1),
    )


@dataclass
class SyntheticSpec:
    identity: int
    hr_bpm: float
    fps: float = 30.0
    duration: float = 8.0
    resolution: tuple[int, int] = (64, 64)
    noise_std: float = 0.0
    illum_drift_amp: float = 0.0
    contour: Ellipse | None = None
    skin_base_rgb: tuple[float, float, float] = (185.0, 135.0, 110.0)
    background_rgb: tuple[float, float, float] = (20.0, 20.0, 20.0)
    modulation_amp: tuple[float, float, float] | None = None
    pulse_strength: float = 0.03
    phase: float = 0.0
    band: HrBand = field(default_factory=lambda: DEFAULT_BAND)

    def __post_init__(self):
        if self.contour is None:
            self.contour = identity_contour(self.identity)
        if self.modulation_amp is None:
            self.modulation_amp = tuple(
                float(v) for v in np.asarray(self.skin_base_rgb) * self.pulse_strength * PULSE_SIGNATURE
            )
        f = self.hr_bpm / 60.0
        if not self.band.lo < f < self.band.hi:
            raise ValueError(f"hr {self.hr_bpm} bpm outside the HR band")
        if self.noise_std < 0 or self.illum_drift_amp < 0:
            raise ValueError("noise_std and illum_drift_amp must be >= 0")
        if not self.contour.fits():
            raise ContourOutOfFrame(f"ellipse {self.contour} does not fit inside the frame")

    @property
    def num_frames(self) -> int:
        return int(round(self.duration * self.fps))

    def to_meta(self) -> dict:
        d = asdict(self)
        d.pop("band")
        return {"synthetic": d}


def synth_bvp(hr_bpm: float, fps: float, duration: float, phase: float = 0.0,
              phase2: float | None = None) -> BvpTrace:
    """Fundamental plus a 0.3-gain second harmonic, scaled to unit peak."""
    n = int(round(duration * fps))
    t = np.arange(n) / fps
    f = hr_bpm / 60.0
    if phase2 is None:
        phase2 = 2 * phase
    x = np.sin(2 * np.pi * f * t + phase) + HARMONIC_GAIN * np.sin(4 * np.pi * f * t + phase2)
    return BvpTrace(x / np.max(np.abs(x)), fps)


def render_frames(spec: SyntheticSpec, bvp: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """uint8 (T, 3, H, W) frames for the given pulse trace."""
    h, w = spec.resolution
    n = len(bvp)
    inside = spec.contour.mask(h, w)
    t = np.arange(n) / spec.fps
    drift = spec.illum_drift_amp * np.sin(2 * np.pi * DRIFT_HZ * t)
    skin = (np.asarray(spec.skin_base_rgb)[None, :] + np.outer(bvp, spec.modulation_amp)
            + drift[:, None])  # (T, 3)
    background = np.asarray(spec.background_rgb, dtype=np.float64)
    frames = np.where(inside[None, None], skin[:, :, None, None], background[None, :, None, None])
    if spec.noise_std > 0:
        frames = frames + rng.normal(0.0, spec.noise_std, size=frames.shape)
    return np.clip(np.rint(frames), 0, 255).astype(np.uint8)


def generate_record(spec: SyntheticSpec, seed: int = 0) -> Record:
    rng = np.random.default_rng(seed)
    bvp = synth_bvp(spec.hr_bpm, spec.fps, spec.duration, spec.phase).values
    frames = render_frames(spec, bvp, rng)
    return Record(
        frames=frames,
        fps=spec.fps,
        bvp=bvp,
        bvp_fs=spec.fps,
        identity=spec.identity,
        hr_bpm=spec.hr_bpm,
        meta=spec.to_meta(),
    )


def bin_aligned_hrs(hr_range, fps: float, num_frames: int, band: HrBand = DEFAULT_BAND) -> np.ndarray:
    """HRs (bpm) inside ``hr_range`` that fall on FFT bins of the eval segment length."""
    seg = eval_segment_frames(num_frames, fps)
    k = np.arange(1, seg // 2 + 1)
    hrs = 60.0 * k * fps / seg
    lo, hi = hr_range
    ok = (hrs >= lo) & (hrs <= hi) & band.mask(hrs / 60.0)
    if not ok.any():
        raise ValueError(f"no bin-aligned HR inside {hr_range} for {seg}-frame segments")
    return hrs[ok]


def random_spec(identity: int, hr_bpm: float, rng: np.random.Generator, **overrides) -> SyntheticSpec:
    """Spec with per-record skin tone, background and pulse phase drawn from ``rng``."""
    skin = np.array([185.0, 135.0, 110.0]) + rng.uniform(-20, 20, size=3)
    background = rng.uniform(5, 40, size=3)
    return SyntheticSpec(
        identity=identity,
        hr_bpm=hr_bpm,
        skin_base_rgb=tuple(float(v) for v in skin),
        background_rgb=tuple(float(v) for v in background),
        phase=float(rng.uniform(0, 2 * np.pi)),
        **overrides,
    )


def _write_one(job) -> str:
    path, spec, seed = job
    rec = generate_record(spec, seed)
    try:
        write_record(path, rec.frames, rec.fps, rec.bvp, rec.bvp_fs, rec.identity, rec.hr_bpm, rec.meta)
    except OSError as exc:
        raise IoFailure(f"writing {path}: {exc}") from exc
    return str(path)


def plan_dataset(num_identities: int, records_per_identity: int, hr_range=(60.0, 120.0),
                 seed: int = 0, fps: float = 30.0, duration: float = 24.0,
                 resolution=(32, 32), noise_std: float = 0.0, illum_drift_amp: float = 0.0):
    """(relative path, spec, noise seed) for every record of a synthetic dataset."""
    if num_identities < 2:
        raise ValueError("need at least 2 identities")
    n_frames = int(round(duration * fps))
    hrs = bin_aligned_hrs(hr_range, fps, n_frames)
    jobs = []
    for g in range(num_identities):
        for j in range(records_per_identity):
            rng = np.random.default_rng([seed, g, j])
            spec = random_spec(g, float(rng.choice(hrs)), rng, fps=fps, duration=duration,
                               resolution=tuple(resolution), noise_std=noise_std,
                               illum_drift_amp=illum_drift_amp)
            jobs.append((f"id{g:03d}/rec{j:03d}", spec, int(rng.integers(2**31))))
    return jobs


def generate_dataset(num_identities: int, records_per_identity: int, hr_range=(60.0, 120.0),
                     seed: int = 0, root="data", workers: int = 1, **kwargs) -> DatasetIndex:
    """Write a synthetic dataset in the ingest layout and index it."""
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {root}: {exc}") from exc
    jobs = [(root / rel, spec, s) for rel, spec, s in
            plan_dataset(num_identities, records_per_identity, hr_range, seed, **kwargs)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            list(pool.map(_write_one, jobs))
    else:
        for job in jobs:
            _write_one(job)
    return index_dataset(root)
