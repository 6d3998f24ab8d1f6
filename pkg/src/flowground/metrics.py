"""Framewise step-localization metrics.

Labels are step ids with -1 standing for background (ground truth) or a
dropped clip (predictions); the two share the sentinel so segmentations and
ground truth compare directly.
"""

from __future__ import annotations

from typing import Sequence

from .align import DROP
from .errors import ValidationError

BACKGROUND = DROP


def _check(pred: Sequence[int], gt: Sequence[int]) -> None:
    if len(pred) != len(gt):
        raise ValidationError(
            f"label sequences differ in length: {len(pred)} vs {len(gt)}"
        )
    if len(gt) == 0:
        raise ValidationError("label sequences are empty")


def framewise_accuracy(
    pred: Sequence[int], gt: Sequence[int], steps_only_denominator: bool = False
) -> float:
    """Fraction of frames carrying the correct step label.

    Background frames never count toward the numerator. The default
    denominator is all frames; ``steps_only_denominator`` restricts it to
    frames whose ground truth is a step (vacuously 1.0 when there are none).
    """
    _check(pred, gt)
    correct = sum(1 for p, t in zip(pred, gt) if t != BACKGROUND and p == t)
    if steps_only_denominator:
        denom = sum(1 for t in gt if t != BACKGROUND)
        return correct / denom if denom else 1.0
    return correct / len(gt)


def iou(pred: Sequence[int], gt: Sequence[int]) -> float:
    """Summed per-step intersections over summed unions, background excluded."""
    _check(pred, gt)
    labels = {x for x in pred if x != BACKGROUND} | {
        x for x in gt if x != BACKGROUND
    }
    inter = 0
    union = 0
    for lab in labels:
        p_set = {j for j, x in enumerate(pred) if x == lab}
        t_set = {j for j, x in enumerate(gt) if x == lab}
        inter += len(p_set & t_set)
        union += len(p_set | t_set)
    return inter / union if union else 1.0
