"""Regulating losses for the learned keypoints and the combined objective.

Both losses are hinge penalties over squared Euclidean distances, averaged
over the batch:

* separation loss: for every ordered keypoint pair (i, j), i != j, penalize
  ``max(0, delta - ||sk_i - sk_j||^2)`` and divide by M^2. Drives keypoints
  apart until each pair is at squared distance delta.
* close loss: for every keypoint i and each of the H points it captured,
  penalize ``max(0, ||sk_i - cp_h||^2 - theta)`` and divide by M*H. Pulls
  keypoints toward their captured neighborhoods.

Thresholds compare against *squared* distances (``thresholds_are_squared``
records that convention; set it False to state delta/theta in Euclidean units
instead, in which case they are squared internally). Gradients flow to the
keypoints only; captured coordinates are raw inputs. The subgradient at a
hinge boundary is 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, scale, wrap_op


@dataclass
class LossConfig:
    delta: float = 0.05
    theta: float = 0.05
    weight_sep: float = 1.0
    weight_close: float = 1.0
    weight_task: float = 1.0
    thresholds_are_squared: bool = True

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.theta < 0:
            raise ValueError(f"theta must be non-negative, got {self.theta}")
        if min(self.weight_sep, self.weight_close, self.weight_task) < 0:
            raise ValueError("loss weights must be non-negative")

    @property
    def delta_sq(self) -> float:
        return self.delta if self.thresholds_are_squared else self.delta ** 2

    @property
    def theta_sq(self) -> float:
        return self.theta if self.thresholds_are_squared else self.theta ** 2


def separation_loss(skeypoints: Tensor, delta: float) -> Tensor:
    """Mean over the batch of the pairwise hinge; skeypoints is (B, M, 3).

    Ordered pairs i != j each contribute, and the sum divides by M^2 (the
    diagonal contributes zero by exclusion).
    """
    sk = skeypoints.data
    if sk.ndim != 3 or sk.shape[1] < 2:
        raise ValueError(f"separation_loss: expected (B, M>=2, 3) skeypoints, got {sk.shape}")
    b, m, _ = sk.shape
    diff = sk[:, :, None, :] - sk[:, None, :, :]      # (B, M, M, 3)
    d2 = (diff ** 2).sum(axis=-1)
    off = ~np.eye(m, dtype=bool)
    hinge = np.maximum(0.0, delta - d2) * off
    loss = hinge.sum() / (b * m * m)

    def bwd(g: np.ndarray) -> tuple:
        active = (hinge > 0)                          # off-diagonal by construction
        # d hinge_ij / d sk_i = -2 (sk_i - sk_j); row i also collects the
        # mirrored (j, i) terms through the second sum
        gsk = (-2.0 * (active[..., None] * diff).sum(axis=2)
               + 2.0 * (active[..., None] * diff).sum(axis=1)) / (b * m * m)
        return (g * gsk,)

    return wrap_op(np.float64(loss), (skeypoints,), bwd, "separation_loss")


def close_loss(skeypoints: Tensor, captured: np.ndarray, theta: float) -> Tensor:
    """Mean over the batch of the capture hinge.

    skeypoints: (B, M, 3) tensor; captured: constant (B, M, H, 3) coordinates
    of each keypoint's captured points, aligned with its detail region.
    """
    sk = skeypoints.data
    captured = np.asarray(captured, dtype=np.float64)
    if captured.shape[:2] != sk.shape[:2] or captured.shape[-1] != 3 or captured.ndim != 4:
        raise ValueError(
            f"close_loss: captured shape {captured.shape} incompatible with skeypoints {sk.shape}")
    b, m, h, _ = captured.shape
    diff = sk[:, :, None, :] - captured               # (B, M, H, 3)
    d2 = (diff ** 2).sum(axis=-1)
    hinge = np.maximum(0.0, d2 - theta)
    loss = hinge.sum() / (b * m * h)

    def bwd(g: np.ndarray) -> tuple:
        active = (hinge > 0)[..., None]
        gsk = 2.0 * (active * diff).sum(axis=2) / (b * m * h)
        return (g * gsk,)

    return wrap_op(np.float64(loss), (skeypoints,), bwd, "close_loss")


def total_loss(task_loss: Tensor, l_sep: Tensor, l_close: Tensor,
               cfg: LossConfig) -> Tensor:
    """Weighted sum of the task objective and the two regulating losses.

    Zeroing individual weights reproduces the loss-ablation variants; equal
    weights (1, 1, 1) are the default.
    """
    out = scale(task_loss, cfg.weight_task)
    if cfg.weight_sep != 0.0:
        out = add(out, scale(l_sep, cfg.weight_sep))
    if cfg.weight_close != 0.0:
        out = add(out, scale(l_close, cfg.weight_close))
    return out
