"""Temporal Compressor Unit: collapse a clip's time axis into one 2D map."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class TemporalCompressor(nn.Module):
    """(B, T, C, H, W) -> (B, C, H, W) by adaptive average pooling over time.

    The frames are permuted so the spatio-temporal axes come last, pooled to
    temporal size 1 at full spatial resolution, then flattened back to 2D.
    """

    def forward(self, clip: torch.Tensor) -> torch.Tensor:
        b, t, c, h, w = clip.shape
        dtype = clip.dtype
        # float64 accumulation maps a time-constant clip to itself exactly;
        # summing in sorted order makes the result bitwise independent of frame order
        x = clip.permute(0, 2, 1, 3, 4).double()  # B, C, T, H, W
        x = torch.sort(x, dim=2).values
        x = F.adaptive_avg_pool3d(x, (1, h, w))
        return x.flatten(1, 2).to(dtype)


_compressor = TemporalCompressor()


def tcu_compress(clip: torch.Tensor) -> torch.Tensor:
    """Temporal mean of a (T, C, H, W) clip, or batched (B, T, C, H, W)."""
    clip = torch.as_tensor(clip)
    if clip.dim() == 4:
        return _compressor(clip.unsqueeze(0)).squeeze(0)
    return _compressor(clip)


def tcu_upsample(spatial_map: torch.Tensor, factor: int) -> torch.Tensor:
    """Bilinear resize of a (C, H, W) or (B, C, H, W) map by an integer factor."""
    if factor < 1 or int(factor) != factor:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    if factor == 1:
        return spatial_map
    x = spatial_map.unsqueeze(0) if spatial_map.dim() == 3 else spatial_map
    out = F.interpolate(x, scale_factor=int(factor), mode="bilinear", align_corners=False)
    return out.squeeze(0) if spatial_map.dim() == 3 else out
