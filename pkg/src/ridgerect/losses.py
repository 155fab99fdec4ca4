"""Training losses: focal orientation classification, orientation coherence,
field regression, and field smoothness, combined by a weighted sum.

All losses are averaged over the cells of the block-resolution mask
(occupancy >= 0.5 counts).  Tensors are channel-first: probabilities
(B, T, H, W), fields (B, 2, H, W), masks (B, 1, H, W) or (B, H, W).
"""

from dataclasses import dataclass

import torch
from torch.nn import functional as F

from .errors import ShapeMismatch

LOG_CLAMP = 1e-12
COHERENCE_GUARD = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Loss hyper-parameters; defaults follow the published configuration."""

    alpha: float = 1.0
    gamma: float = 2.0
    lambda_ori: float = 1.0
    lambda_dis: float = 1.0
    w_ori: float = 0.5
    w_dis: float = 1.0


def _mask_2d(mask):
    if mask.ndim == 4:
        mask = mask[:, 0]
    return (mask > 0.5).to(torch.get_default_dtype() if not mask.is_floating_point() else mask.dtype)


def _mask_count(mask2d):
    n = mask2d.sum()
    return torch.clamp(n, min=1.0)


def focal_orientation_loss(probs, labels, mask, alpha=1.0, gamma=2.0):
    """Focal classification loss over 180 orientation classes.

    ``q_t = y_t p_t + (1 - y_t)(1 - p_t)`` per class; the loss sums
    ``-alpha (1 - q_t)^gamma log(q_t)`` over classes and averages over mask
    cells.  ``labels`` is an integer class grid (B, H, W).
    """
    if probs.ndim != 4:
        raise ShapeMismatch("probs must be (B, T, H, W)")
    if labels.shape != (probs.shape[0], probs.shape[2], probs.shape[3]):
        raise ShapeMismatch("labels must be (B, H, W) matching the probability grid")
    m = _mask_2d(mask)
    if m.shape != labels.shape:
        raise ShapeMismatch("mask must match the label grid")
    y = F.one_hot(labels.long(), num_classes=probs.shape[1]).permute(0, 3, 1, 2).to(probs.dtype)
    q = y * probs + (1.0 - y) * (1.0 - probs)
    per_class = -alpha * (1.0 - q) ** gamma * torch.log(torch.clamp(q, min=LOG_CLAMP))
    per_cell = per_class.sum(dim=1)
    return (per_cell * m).sum() / _mask_count(m)


def coherence_map(probs, guard=COHERENCE_GUARD):
    """Differentiable orientation-coherence map, (B, H, W) in [0, 1].

    Class t (1-based) maps to the unit vector at 360*t/T degrees (the
    double-angle encoding); coherence is the norm of the 3x3 box-summed mean
    vector over the box sum of per-cell norms, clamped replicate at borders.
    Cells with denominator below ``guard`` are vacuously coherent (1).
    """
    b, t, h, w = probs.shape
    ang = torch.deg2rad(360.0 * torch.arange(1, t + 1, dtype=probs.dtype, device=probs.device) / t)
    d_cos = torch.tensordot(probs, torch.cos(ang), dims=([1], [0])) / t
    d_sin = torch.tensordot(probs, torch.sin(ang), dims=([1], [0])) / t
    d_norm = torch.sqrt(d_cos**2 + d_sin**2 + 1e-30)
    stack = torch.stack([d_cos, d_sin, d_norm], dim=1)
    kernel = torch.ones(3, 1, 3, 3, dtype=probs.dtype, device=probs.device)
    summed = F.conv2d(F.pad(stack, (1, 1, 1, 1), mode="replicate"), kernel, groups=3)
    num = torch.sqrt(summed[:, 0] ** 2 + summed[:, 1] ** 2 + 1e-30)
    den = summed[:, 2]
    return torch.where(den >= guard, num / torch.clamp(den, min=guard), torch.ones_like(den))


def orientation_coherence_loss(probs, mask):
    """|M| / sum_M Coh - 1; zero when the masked orientations are parallel."""
    m = _mask_2d(mask)
    coh = coherence_map(probs)
    if coh.shape != m.shape:
        raise ShapeMismatch("mask must match the probability grid")
    total = (coh * m).sum()
    return _mask_count(m) / torch.clamp(total, min=COHERENCE_GUARD) - 1.0


def distortion_regression_loss(field_est, field_gt, mask):
    """Mean squared displacement error over mask cells (both channels)."""
    if field_est.shape != field_gt.shape:
        raise ShapeMismatch(f"field shapes differ: {tuple(field_est.shape)} vs {tuple(field_gt.shape)}")
    m = _mask_2d(mask)
    if m.shape[-2:] != field_est.shape[-2:]:
        raise ShapeMismatch("mask must match the field grid")
    sq = ((field_est - field_gt) ** 2).sum(dim=1)
    return (sq * m).sum() / _mask_count(m)


def distortion_smoothness_loss(field_est, mask):
    """Mean squared forward-difference gradient of both field channels.

    Differences are clamped at the grid edge (the last row/column repeats),
    so a constant field has zero loss and a unit-slope ramp contributes one
    per interior cell.
    """
    m = _mask_2d(mask)
    dx_right = field_est[..., :, 1:] - field_est[..., :, :-1]
    dx_right = F.pad(dx_right, (0, 1))
    dy_down = field_est[..., 1:, :] - field_est[..., :-1, :]
    dy_down = F.pad(dy_down, (0, 0, 0, 1))
    grad_sq = (dx_right**2 + dy_down**2).sum(dim=1)
    return (grad_sq * m).sum() / _mask_count(m)


def total_loss(field_est, field_gt, mask, weights=LossWeights(), probs=None, labels=None):
    """Weighted sum of the four losses; orientation terms need probs+labels.

    Returns (total, components) where components maps each loss name to its
    scalar tensor.
    """
    comps = {}
    comps["dis_reg"] = distortion_regression_loss(field_est, field_gt, mask)
    comps["dis_smo"] = distortion_smoothness_loss(field_est, mask)
    total = weights.lambda_dis * (comps["dis_reg"] + weights.w_dis * comps["dis_smo"])
    if probs is not None:
        if labels is None:
            raise ShapeMismatch("orientation labels required with orientation probabilities")
        comps["ori_cla"] = focal_orientation_loss(probs, labels, mask, weights.alpha, weights.gamma)
        comps["ori_smo"] = orientation_coherence_loss(probs, mask)
        total = total + weights.lambda_ori * (comps["ori_cla"] + weights.w_ori * comps["ori_smo"])
    comps["total"] = total
    return total, comps
