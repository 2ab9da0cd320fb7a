"""Training objective: equal-weight cross-entropy + Dice loss."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, log_softmax, softmax, tsum
from .errors import ContractError, DimensionError

DICE_EPS = 1e-5


def one_hot(labels: np.ndarray, num_classes: int) -> Tensor:
    """[N,H,W] class indices -> constant [N,K,H,W] one-hot tensor."""
    labels = np.asarray(labels)
    if labels.max(initial=0) >= num_classes:
        raise ContractError(
            f"label {labels.max()} out of range for {num_classes} classes")
    n, h, w = labels.shape
    oh = np.zeros((n, num_classes, h, w), dtype=np.float32)
    np.put_along_axis(oh, labels[:, None, :, :].astype(np.int64), 1.0, axis=1)
    return Tensor(oh)


def ce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over pixels of -log softmax(logits)[target class]."""
    labels = np.asarray(labels)
    if logits.ndim != 4 or labels.ndim != 3:
        raise DimensionError("expect logits [N,K,H,W] and labels [N,H,W]")
    n, k, h, w = logits.shape
    if labels.shape != (n, h, w):
        raise DimensionError(
            f"labels shape {labels.shape} does not match logits {logits.shape}")
    target = one_hot(labels, k)
    picked = tsum(log_softmax(logits, axis=1) * target)
    return picked * (-1.0 / (n * h * w))


def dice_loss(probs: Tensor, target_one_hot: Tensor) -> Tensor:
    """1 - mean over foreground classes of the smoothed Dice coefficient.

    Sums run over batch and spatial axes per class.  With an
    all-background target the per-class term degenerates to
    eps / (sum(probs) + eps), which rewards predicting no foreground.
    """
    if probs.shape != target_one_hot.shape:
        raise DimensionError(
            f"probs {probs.shape} vs target {target_one_hot.shape}")
    k = probs.shape[1]
    if k < 2:
        raise ContractError("need background + at least one foreground class")
    inter = tsum(probs * target_one_hot, axis=(0, 2, 3))
    psum = tsum(probs, axis=(0, 2, 3))
    tsum_ = tsum(target_one_hot, axis=(0, 2, 3))
    dice = (inter * 2.0 + DICE_EPS) / (psum + tsum_ + DICE_EPS)
    fg = dice[1:]
    return 1.0 - fg.sum() * (1.0 / (k - 1))


def combined_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Cross-entropy + Dice, both with coefficient 1."""
    target = one_hot(np.asarray(labels), logits.shape[1])
    return ce_loss(logits, labels) + dice_loss(softmax(logits, axis=1), target)
