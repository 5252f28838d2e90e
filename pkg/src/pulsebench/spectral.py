"""Power spectrum and spectral heart-rate estimation.

``estimate_hr`` is the hard peak picker used for evaluation. ``soft_hr`` is a
softmax-weighted version of the same spectrum that torch can differentiate,
used for the heart-rate term of the training loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import EmptyBand, NoSpectralPeak, TraceTooShort

MIN_TRACE_LEN = 16
DEFAULT_TEMPERATURE = 0.05


@dataclass(frozen=True)
class HrBand:
    """Open frequency interval (Hz) searched for the pulse peak."""

    lo: float = 0.5
    hi: float = 4.2

    def __post_init__(self):
        if not 0 < self.lo < self.hi:
            raise ValueError(f"invalid band ({self.lo}, {self.hi})")

    def mask(self, freqs):
        return (freqs > self.lo) & (freqs < self.hi)


DEFAULT_BAND = HrBand()


@dataclass
class BvpTrace:
    values: np.ndarray
    fs: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or len(self.values) < MIN_TRACE_LEN:
            raise TraceTooShort(
                f"trace needs >= {MIN_TRACE_LEN} samples, got shape {self.values.shape}"
            )
        if not self.fs > 0:
            raise ValueError(f"fs must be positive, got {self.fs}")

    def __len__(self):
        return len(self.values)


def _as_trace(trace, fs):
    if isinstance(trace, BvpTrace):
        return trace
    if fs is None:
        raise TypeError("fs is required when passing a raw array")
    return BvpTrace(trace, fs)


def power_spectrum(trace, fs: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One-sided power spectrum of the mean-removed trace (rectangular window).

    Returns ``(freqs, power)`` with ``freqs[k] = k * fs / T`` for
    ``k = 0 .. T // 2``.
    """
    trace = _as_trace(trace, fs)
    x = trace.values - trace.values.mean()
    power = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), d=1.0 / trace.fs)
    return freqs, power


def _is_flat(x: np.ndarray) -> bool:
    return np.ptp(x) <= 1e-12 * max(1.0, float(np.max(np.abs(x))))


def estimate_hr(trace, fs: float | None = None, band: HrBand = DEFAULT_BAND) -> float:
    """Heart rate in bpm: 60 x frequency of the strongest in-band bin.

    Ties go to the lower frequency.
    """
    trace = _as_trace(trace, fs)
    freqs, power = power_spectrum(trace)
    in_band = band.mask(freqs)
    if not in_band.any():
        raise EmptyBand(f"no frequency bin inside ({band.lo}, {band.hi}) Hz for T={len(trace)}")
    total = power.sum()
    band_power = power[in_band]
    if _is_flat(trace.values) or total <= 0 or band_power.sum() < 1e-10 * total:
        raise NoSpectralPeak("no in-band spectral energy")
    k = int(np.argmax(band_power))
    return float(60.0 * freqs[in_band][k])


def soft_hr(
    trace: torch.Tensor,
    fs: float,
    band: HrBand = DEFAULT_BAND,
    temperature: float = DEFAULT_TEMPERATURE,
) -> torch.Tensor:
    """Differentiable heart-rate estimate (bpm) over the last axis of ``trace``.

    Computes ``60 * sum_k f_k softmax_k(P_k / (temperature * max_k P_k))``
    where the sum, softmax and max run over in-band bins only. Works on any
    leading batch shape.
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if not torch.is_tensor(trace):
        trace = torch.as_tensor(np.asarray(trace, dtype=np.float64))
    n = trace.shape[-1]
    if n < MIN_TRACE_LEN:
        raise TraceTooShort(f"trace needs >= {MIN_TRACE_LEN} samples, got {n}")
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    in_band = band.mask(freqs)
    if not in_band.any():
        raise EmptyBand(f"no frequency bin inside ({band.lo}, {band.hi}) Hz for T={n}")
    idx = torch.as_tensor(np.flatnonzero(in_band), device=trace.device)

    x = trace - trace.mean(dim=-1, keepdim=True)
    spec = torch.fft.rfft(x, dim=-1)
    power = spec.real**2 + spec.imag**2
    band_power = power.index_select(-1, idx)
    with torch.no_grad():
        total = power.sum(dim=-1)
        if bool((band_power.sum(dim=-1) < 1e-10 * total).any()) or bool((total == 0).any()):
            raise NoSpectralPeak("no in-band spectral energy")
    peak = band_power.amax(dim=-1, keepdim=True)
    weights = torch.softmax(band_power / (temperature * peak), dim=-1)
    f = torch.as_tensor(freqs[in_band], dtype=trace.dtype, device=trace.device)
    return 60.0 * (weights * f).sum(dim=-1)
