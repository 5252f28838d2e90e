"""Classical rPPG extractors: GREEN, CHROM and POS.

All three work on the per-frame spatial mean of the full (pre-cropped) frame.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import BaselineTraceTooShort, DegenerateColor
from .spectral import BvpTrace

EPS = 1e-9


def mean_rgb(clip) -> np.ndarray:
    """(T, 3, H, W) -> (T, 3) spatial means."""
    x = np.asarray(clip, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected (T, 3, H, W), got {x.shape}")
    return x.mean(axis=(2, 3))


def _check_len(n, minimum, name):
    if n < minimum:
        raise BaselineTraceTooShort(f"{name} needs >= {minimum} frames, got {n}")


def green_trace(clip, fs: float) -> BvpTrace:
    rgb = mean_rgb(clip)
    _check_len(len(rgb), 16, "GREEN")
    g = rgb[:, 1]
    return BvpTrace(g - g.mean(), fs)


def chrom_trace(clip, fs: float) -> BvpTrace:
    """Chrominance projection; the X/Y mix ratio is the ratio of their stds."""
    rgb = mean_rgb(clip)
    _check_len(len(rgb), 32, "CHROM")
    mu = rgb.mean(axis=0)
    if np.any(mu <= 0):
        raise DegenerateColor("channel with non-positive mean")
    r, g, b = (rgb / mu).T
    x = 3 * r - 2 * g
    y = 1.5 * r + g - 1.5 * b
    sy = y.std()
    if sy < 1e-9:
        raise DegenerateColor("chrominance Y has no temporal variation")
    s = x - (x.std() / sy) * y
    return BvpTrace(s - s.mean(), fs)


def pos_trace(clip, fs: float, window_seconds: float = 1.6) -> BvpTrace:
    """Plane-orthogonal-to-skin projection with overlap-added 1.6 s windows."""
    rgb = mean_rgb(clip)
    n = len(rgb)
    win = math.ceil(window_seconds * fs)
    _check_len(n, max(win, 16), "POS")
    proj = np.array([[0.0, 1.0, -1.0], [-2.0, 1.0, 1.0]])
    out = np.zeros(n)
    for start in range(0, n - win + 1):
        c = rgb[start:start + win]
        mu = c.mean(axis=0)
        cn = c / np.where(mu > 0, mu, 1.0)
        s1, s2 = proj @ cn.T
        h = s1 + (s1.std() / (s2.std() + EPS)) * s2
        out[start:start + win] += h - h.mean()
    return BvpTrace(out - out.mean(), fs)


BASELINES = {"green": green_trace, "chrom": chrom_trace, "pos": pos_trace}
