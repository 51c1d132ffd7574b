"""Single-pair gradient descent and the synthetic square-on-background scene."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import VSTModel
from .objectives import GroundTruth, mae, sgd_step, total_loss
from .tensor import backward, no_grad

__all__ = ["synthetic_scene", "synthetic_depth", "OverfitResult", "overfit"]

BACKGROUND = (0.2, 0.3, 0.4)
FOREGROUND = (0.9, 0.6, 0.1)


def synthetic_scene(side: int) -> tuple[np.ndarray, np.ndarray]:
    """A centred square covering the middle 3/8 of each axis; returns (image, mask)."""
    lo, hi = (5 * side) // 16, (11 * side) // 16
    mask = np.zeros((side, side))
    mask[lo:hi, lo:hi] = 1.0
    image = np.where(mask[:, :, None] > 0, np.array(FOREGROUND), np.array(BACKGROUND))
    return image, mask


def synthetic_depth(mask: np.ndarray) -> np.ndarray:
    """Foreground nearer (0.25) than background (0.75)."""
    return np.where(mask > 0, 0.25, 0.75)


@dataclass
class OverfitResult:
    losses: list[float] = field(default_factory=list)
    final_loss: float = float("nan")
    final_mae: float = float("nan")


def overfit(
    model: VSTModel,
    image: np.ndarray,
    gt: GroundTruth,
    steps: int,
    lr: float,
    depth: np.ndarray | None = None,
    callback: Callable[[int, float], None] | None = None,
) -> OverfitResult:
    """Plain gradient descent on one pair.

    ``losses[i]`` is the loss before update i; the final loss and MAE are
    measured after the last update.
    """
    params = model.parameters()
    result = OverfitResult()
    model.zero_grad()
    for step in range(steps):
        loss = total_loss(model.forward(image, depth), gt).total
        backward(loss, params)
        result.losses.append(loss.item())
        if callback is not None:
            callback(step, result.losses[-1])
        sgd_step(params, lr)
    with no_grad():
        preds = model.forward(image, depth)
        result.final_loss = total_loss(preds, gt).total.item()
    result.final_mae = mae(preds["1"].dense_saliency, gt.saliency)
    return result
