"""HR error statistics and Bland-Altman agreement."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyList, LengthMismatch, ZeroVariance

LOA_Z = 1.96


@dataclass
class MetricsReport:
    sd: float
    mae: float
    rmse: float
    rho: float
    n: int
    per_video: list[tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_video"] = [list(p) for p in self.per_video]
        for k in ("sd", "mae", "rmse", "rho"):
            if not math.isfinite(d[k]):
                d[k] = None
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        vals = {k: (math.nan if d[k] is None else float(d[k])) for k in ("sd", "mae", "rmse", "rho")}
        return cls(n=int(d["n"]), per_video=[tuple(p) for p in d.get("per_video", [])], **vals)


@dataclass
class BlandAltmanStats:
    mean_diff: float
    sd_diff: float
    loa_lo: float
    loa_hi: float
    points: list[tuple[float, float]]

    @property
    def half_width(self) -> float:
        return LOA_Z * self.sd_diff

    def to_dict(self) -> dict:
        d = asdict(self)
        d["points"] = [list(p) for p in self.points]
        return d


def _pairs(preds, gts) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=np.float64).ravel()
    g = np.asarray(gts, dtype=np.float64).ravel()
    if p.shape != g.shape:
        raise LengthMismatch(f"{len(p)} predictions vs {len(g)} ground truths")
    return p, g


def error_stats(preds, gts, strict: bool = True) -> MetricsReport:
    """SD (n-1), MAE, RMSE of ``pred - gt`` and Pearson rho.

    With ``strict=False`` undefined statistics (one pair, constant series)
    come back as NaN instead of raising.
    """
    p, g = _pairs(preds, gts)
    n = len(p)
    if n < (2 if strict else 1):
        raise LengthMismatch(f"need at least {2 if strict else 1} pairs, got {n}")
    e = p - g
    mae = float(np.mean(np.abs(e)))
    rmse = float(np.sqrt(np.mean(e**2)))
    sd = float(np.std(e, ddof=1)) if n >= 2 else math.nan
    pc, gc = p - p.mean(), g - g.mean()
    denom = math.sqrt(float(np.sum(pc**2)) * float(np.sum(gc**2))) if n >= 2 else 0.0
    if denom == 0 or not math.isfinite(denom):
        if strict:
            raise ZeroVariance("correlation undefined for a constant series")
        rho = math.nan
    else:
        rho = float(np.sum(pc * gc) / denom)
    return MetricsReport(sd, mae, rmse, rho, n, list(zip(p.tolist(), g.tolist())))


def bland_altman(preds, gts) -> BlandAltmanStats:
    p, g = _pairs(preds, gts)
    if len(p) < 2:
        raise LengthMismatch(f"need at least 2 pairs, got {len(p)}")
    diffs = p - g
    md = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    points = list(zip(((p + g) / 2).tolist(), diffs.tolist()))
    return BlandAltmanStats(md, sd, md - LOA_Z * sd, md + LOA_Z * sd, points)


def video_level_hr(segment_hrs) -> float:
    hrs = list(segment_hrs)
    if not hrs:
        raise EmptyList("no segment heart rates")
    return float(np.mean(hrs))
