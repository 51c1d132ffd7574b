"""Losses, boundary ground truth, evaluation metrics and a plain SGD step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .geometry import nearest_resize
from .model import LEVELS, PredictionSet
from .tensor import Tensor

__all__ = [
    "GroundTruth",
    "LossReport",
    "bce",
    "total_loss",
    "boundary_gt",
    "mae",
    "max_f",
    "f_measure_curve",
    "sgd_step",
    "BETA2",
    "N_THRESHOLDS",
]

BETA2 = 0.3
N_THRESHOLDS = 256

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


def bce(pred, gt) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    return T.bce(pred, gt, eps=1e-7)


def boundary_gt(saliency: np.ndarray) -> np.ndarray:
    """Sobel gradient magnitude (replicate border) of a binary map, thresholded at > 0."""
    s = np.asarray(saliency, dtype=np.float64)
    if not np.isin(s, (0.0, 1.0)).all():
        raise ValueError("boundary_gt expects a binary saliency map")
    padded = np.pad(s, 1, mode="edge")
    h, w = s.shape
    gx = np.zeros_like(s)
    gy = np.zeros_like(s)
    for i in range(3):
        for j in range(3):
            window = padded[i : i + h, j : j + w]
            gx += _SOBEL_X[i, j] * window
            gy += _SOBEL_Y[i, j] * window
    return (np.hypot(gx, gy) > 0).astype(np.float64)


@dataclass
class GroundTruth:
    saliency: np.ndarray
    boundary: np.ndarray = None

    def __post_init__(self):
        self.saliency = np.asarray(self.saliency, dtype=np.float64)
        if self.boundary is None:
            self.boundary = boundary_gt(self.saliency)
        self.boundary = np.asarray(self.boundary, dtype=np.float64)

    def at(self, grid: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        return nearest_resize(self.saliency, grid), nearest_resize(self.boundary, grid)


@dataclass
class LossReport:
    """Per-level BCE terms keyed (level, kind, task) with kind in {den, sup}."""

    terms: dict[tuple[str, str, str], Tensor] = field(default_factory=dict)
    saliency: Tensor = None
    boundary: Tensor = None
    total: Tensor = None

    def values(self) -> dict[str, float]:
        out = {f"{lv}/{kind}/{task}": t.item() for (lv, kind, task), t in self.terms.items()}
        out.update(L_s=self.saliency.item(), L_b=self.boundary.item(), L_total=self.total.item())
        return out


def total_loss(preds: PredictionSet, gt: GroundTruth, kinds=("den", "sup")) -> LossReport:
    """Unweighted sum of dense and token-supervised BCE at every level.

    ``kinds`` restricts the sum to dense ("den") or token-supervised ("sup")
    terms; the default is the full objective.
    """
    report = LossReport()
    per_task = {"saliency": [], "boundary": []}
    for lv in LEVELS:
        p = preds.levels[lv]
        g_s, g_b = gt.at(p.dense_saliency.shape)
        pairs = {
            ("den", "saliency"): (p.dense_saliency, g_s),
            ("sup", "saliency"): (p.token_saliency, g_s),
            ("den", "boundary"): (p.dense_boundary, g_b),
            ("sup", "boundary"): (p.token_boundary, g_b),
        }
        for (kind, task), (pred, target) in pairs.items():
            if kind not in kinds:
                continue
            term = bce(pred, target)
            report.terms[(lv, kind, task)] = term
            per_task[task].append(term)
    report.saliency = _tensor_sum(per_task["saliency"])
    report.boundary = _tensor_sum(per_task["boundary"])
    report.total = report.saliency + report.boundary
    return report


def _tensor_sum(ts: list[Tensor]) -> Tensor:
    acc = Tensor(0.0)
    for t in ts:
        acc = acc + t
    return acc


def _as_array(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def mae(pred, gt) -> float:
    p, g = _as_array(pred), _as_array(gt)
    if p.shape != g.shape:
        raise ValueError(f"mae shape mismatch: {p.shape} vs {g.shape}")
    return float(np.abs(p - g).mean())


def f_measure_curve(pred, gt, n_thresholds: int = N_THRESHOLDS, beta2: float = BETA2) -> tuple[np.ndarray, np.ndarray]:
    """F-measure at ``n_thresholds`` uniform thresholds in [0, 1]; positive means pred > t."""
    p, g = _as_array(pred).reshape(-1), _as_array(gt).reshape(-1)
    if p.shape != g.shape:
        raise ValueError(f"max_f shape mismatch: {p.shape} vs {g.shape}")
    pos = g > 0.5
    if not pos.any():
        raise ValueError("maxF is undefined for a ground truth with no positive pixels")
    thresholds = np.linspace(0.0, 1.0, n_thresholds)
    predicted = p[None, :] > thresholds[:, None]
    tp = (predicted & pos[None, :]).sum(axis=1).astype(np.float64)
    n_pred = predicted.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, n_pred, out=np.zeros_like(tp), where=n_pred > 0)
    recall = tp / pos.sum()
    denom = beta2 * precision + recall
    f = np.divide((1 + beta2) * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return thresholds, f


def max_f(pred, gt, n_thresholds: int = N_THRESHOLDS, beta2: float = BETA2) -> float:
    return float(f_measure_curve(pred, gt, n_thresholds, beta2)[1].max())


def sgd_step(params, lr: float) -> None:
    """p <- p - lr * grad, then reset the gradients."""
    for p in params:
        if lr != 0.0 and p.grad.any():
            p.assign(p.data - lr * p.grad, _copy=False)
        p.zero_grad()
