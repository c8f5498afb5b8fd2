"""Evaluation losses over segmentation and vote maps (L1)."""

import numpy as np

from core.errors import EmptyMaskError, ParameterError, SizeError
from .schemes import VoteMap


def loss_s(pred_mask, gt_mask) -> float:
    """Mean absolute difference between a soft mask and the binary ground truth."""
    pred = np.asarray(pred_mask, dtype=np.float64)
    gt = np.asarray(gt_mask, dtype=np.float64)
    if pred.shape != gt.shape:
        raise SizeError(f"Mask shapes differ: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise SizeError("Masks are empty")
    return float(np.mean(np.abs(pred - gt)))


def loss_m1(pred: VoteMap, gt: VoteMap) -> float:
    """Masked mean absolute error, channels summed per pixel, over the ground-truth mask."""
    if pred.scheme is not gt.scheme:
        raise ParameterError(f"Scheme mismatch: {pred.scheme.value} vs {gt.scheme.value}")
    if pred.values.shape != gt.values.shape:
        raise SizeError(f"Map shapes differ: {pred.values.shape} vs {gt.values.shape}")
    weight = gt.mask.astype(np.float64)
    total = weight.sum()
    if total == 0.0:
        raise EmptyMaskError("Ground-truth mask is empty; masked loss is undefined")
    per_pixel = np.abs(pred.values - gt.values).sum(axis=2)
    return float((per_pixel * weight).sum() / total)
