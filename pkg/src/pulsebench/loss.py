"""Multi-task likelihood loss with learned homoscedastic uncertainties.

The three task weights are stored as log-variances ``s_i = log sigma_i^2``:

    exp(-s1)/2 * ||bvp_gt - bvp_pred||^2 + s1/2
  + exp(-s2)/2 * (hr_gt - soft_hr(bvp_pred))^2 + s2/2
  + exp(-s3)   * CE(id_logits, id_gt)      + s3/2
"""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn.functional as F

from .errors import InvalidClass, ShapeError, ZeroResidual
from .spectral import DEFAULT_BAND, DEFAULT_TEMPERATURE, HrBand, soft_hr


class LossTerms(NamedTuple):
    total: torch.Tensor
    bvp: torch.Tensor
    hr: torch.Tensor
    identity: torch.Tensor
    hr_pred: torch.Tensor


def multitask_terms(
    bvp_pred: torch.Tensor,
    bvp_gt: torch.Tensor,
    hr_gt: torch.Tensor,
    id_logits: torch.Tensor,
    id_gt: torch.Tensor,
    log_vars: torch.Tensor,
    fs: float,
    band: HrBand = DEFAULT_BAND,
    temperature: float = DEFAULT_TEMPERATURE,
) -> LossTerms:
    """Batched loss; data terms are averaged over the batch.

    Shapes: bvp (B, T) or (T,), hr_gt (B,) or scalar, id_logits (B, K) or
    (K,), id_gt (B,) or scalar, log_vars (3,).
    """
    bvp_pred = torch.atleast_2d(bvp_pred)
    bvp_gt = torch.as_tensor(bvp_gt, dtype=bvp_pred.dtype, device=bvp_pred.device)
    bvp_gt = torch.atleast_2d(bvp_gt)
    id_logits = torch.atleast_2d(id_logits)
    hr_gt = torch.as_tensor(hr_gt, dtype=bvp_pred.dtype, device=bvp_pred.device).reshape(-1)
    id_gt = torch.as_tensor(id_gt, dtype=torch.long, device=bvp_pred.device).reshape(-1)
    b = bvp_pred.shape[0]
    if bvp_gt.shape != bvp_pred.shape:
        raise ShapeError(f"bvp shapes differ: {tuple(bvp_pred.shape)} vs {tuple(bvp_gt.shape)}")
    if id_logits.shape[0] != b or hr_gt.shape[0] != b or id_gt.shape[0] != b:
        raise ShapeError("batch sizes differ between inputs")
    if log_vars.shape != (3,):
        raise ShapeError(f"log_vars must have shape (3,), got {tuple(log_vars.shape)}")
    k = id_logits.shape[1]
    if bool(((id_gt < 0) | (id_gt >= k)).any()):
        raise InvalidClass(f"identity labels must lie in [0, {k})")

    s1, s2, s3 = log_vars[0], log_vars[1], log_vars[2]
    sq_err = ((bvp_gt - bvp_pred) ** 2).sum(dim=-1).mean()
    hr_pred = soft_hr(bvp_pred, fs, band, temperature)
    hr_err = ((hr_gt - hr_pred) ** 2).mean()
    ce = F.cross_entropy(id_logits, id_gt)

    bvp_term = 0.5 * torch.exp(-s1) * sq_err + 0.5 * s1
    hr_term = 0.5 * torch.exp(-s2) * hr_err + 0.5 * s2
    id_term = torch.exp(-s3) * ce + 0.5 * s3
    return LossTerms(bvp_term + hr_term + id_term, bvp_term, hr_term, id_term, hr_pred)


def multitask_loss(bvp_pred, bvp_gt, hr_gt, id_logits, id_gt, log_vars, fs,
                   band: HrBand = DEFAULT_BAND, temperature: float = DEFAULT_TEMPERATURE) -> torch.Tensor:
    return multitask_terms(bvp_pred, bvp_gt, hr_gt, id_logits, id_gt, log_vars, fs, band, temperature).total


def optimal_sigma_check(residual_sq: float) -> float:
    """sigma^2 minimizing r / (2 sigma^2) + log sigma, which is r itself."""
    if not residual_sq > 0:
        raise ZeroResidual("residual must be positive")
    return float(residual_sq)
