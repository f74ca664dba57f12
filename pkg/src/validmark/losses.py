"""Per-landmark losses and their analytic gradients.

Each landmark is a triplet (x, y, v): predicted position plus a validity
output v trained to predict the distance between the predicted and true
position. With ground truth (gx, gy) and d = dist((x, y), (gx, gy)) the
three residual terms per landmark are

    r1 = outer(gx - x),   r2 = outer(gy - y),   r3 = outer(d - v)

with outer(u) = 0.5*u^2 (L2) or |u| (L1), and d either the Euclidean or
the Manhattan distance. d is treated as a constant target for v during
backprop by default (it is a label, not a differentiable path); the full
gradient is available for ablation via detach_distance_target=False.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DataError

OUTER_NORMS = ("l2", "l1")
INNER_DISTANCES = ("euclidean", "manhattan")


@dataclass(frozen=True)
class LossConfig:
    outer: str = "l1"
    inner_distance: str = "manhattan"
    detach_distance_target: bool = True
    aggregation: str = "mean"

    def __post_init__(self):
        if self.outer not in OUTER_NORMS:
            raise DataError(f"unknown outer norm {self.outer!r}")
        if self.inner_distance not in INNER_DISTANCES:
            raise DataError(f"unknown inner distance {self.inner_distance!r}")
        if self.aggregation not in ("mean", "sum"):
            raise DataError(f"unknown aggregation {self.aggregation!r}")


def pointwise_loss(x: float, y: float, outer: str = "l2") -> float:
    """Scalar position loss: L2 -> 0.5*(y-x)^2, L1 -> |y-x|."""
    u = y - x
    if outer == "l2":
        return 0.5 * u * u
    if outer == "l1":
        return abs(u)
    raise DataError(f"unknown outer norm {outer!r}")


def _inner_distance(dx: np.ndarray, dy: np.ndarray, inner: str) -> np.ndarray:
    if inner == "euclidean":
        return np.hypot(dx, dy)
    return np.abs(dx) + np.abs(dy)


def validation_residual(triplet, truth, cfg: LossConfig) -> tuple[float, float, float]:
    """The three residual terms for a single landmark triplet."""
    x1, x2, v = (float(t) for t in triplet)
    y1, y2 = (float(g) for g in truth)
    d = float(_inner_distance(np.float64(x1 - y1), np.float64(x2 - y2), cfg.inner_distance))
    return (
        pointwise_loss(x1, y1, cfg.outer),
        pointwise_loss(x2, y2, cfg.outer),
        pointwise_loss(v, d, cfg.outer),
    )


def _check_counts(pred: np.ndarray, gt: np.ndarray):
    if pred.ndim != gt.ndim or pred.shape[:-1] != gt.shape[:-1]:
        raise DataError(f"prediction/ground-truth count mismatch: "
                        f"{pred.shape} vs {gt.shape}")
    if pred.shape[-1] != 3 or gt.shape[-1] != 2:
        raise DataError(f"expected (..., 3) triplets and (..., 2) points, "
                        f"got {pred.shape} and {gt.shape}")


def batch_loss_and_grad(pred: np.ndarray, gt: np.ndarray, cfg: LossConfig):
    """Loss and gradient for a batch.

    pred: (N, L, 3), gt: (N, L, 2). Returns (batch_loss, per_sample (N,),
    grad (N, L, 3)) where grad is d(batch_loss)/d(pred). With
    aggregation="mean" the batch loss is the mean over all N*3L residual
    terms; with "sum" it is their sum.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_counts(pred, gt)
    n, count = pred.shape[0], pred.shape[1]

    dx = pred[..., 0] - gt[..., 0]
    dy = pred[..., 1] - gt[..., 1]
    v = pred[..., 2]
    d = _inner_distance(dx, dy, cfg.inner_distance)
    u3 = d - v

    if cfg.outer == "l2":
        terms = 0.5 * (dx * dx + dy * dy + u3 * u3)
        g1, g2, gv = dx, dy, -u3
        f3 = u3  # outer'(u3), used only in full-gradient mode
    else:
        terms = np.abs(dx) + np.abs(dy) + np.abs(u3)
        g1, g2, gv = np.sign(dx), np.sign(dy), -np.sign(u3)
        f3 = np.sign(u3)

    grad = np.stack([g1, g2, gv], axis=-1)
    if not cfg.detach_distance_target:
        if cfg.inner_distance == "euclidean":
            with np.errstate(invalid="ignore", divide="ignore"):
                ddx = np.where(d > 0.0, dx / np.where(d > 0.0, d, 1.0), 0.0)
                ddy = np.where(d > 0.0, dy / np.where(d > 0.0, d, 1.0), 0.0)
        else:
            ddx, ddy = np.sign(dx), np.sign(dy)
        grad[..., 0] += f3 * ddx
        grad[..., 1] += f3 * ddy

    per_sample = terms.sum(axis=1)
    if cfg.aggregation == "mean":
        per_sample = per_sample / (3.0 * count)
        loss = float(per_sample.mean())
        grad /= 3.0 * count * n
    else:
        loss = float(per_sample.sum())
    return loss, per_sample, grad


def total_loss(pred: np.ndarray, gt: np.ndarray, cfg: LossConfig) -> float:
    """Aggregated loss over all 3*L residual terms of one prediction."""
    loss, _, _ = batch_loss_and_grad(pred[None], np.asarray(gt)[None], cfg)
    return loss


def loss_gradient(pred: np.ndarray, gt: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """d total_loss / d pred, shape (L, 3) matching the triplet layout."""
    _, _, grad = batch_loss_and_grad(pred[None], np.asarray(gt)[None], cfg)
    return grad[0]
