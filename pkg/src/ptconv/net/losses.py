"""Loss heads returning (value, gradient)."""
from __future__ import annotations

import numpy as np

__all__ = ["loss_softmax_ce", "loss_triplet"]


def loss_softmax_ce(pred, label, n_classes: int = 10):
    """Softmax cross-entropy.

    ``pred`` is (C,) with an int label, or (C, B) with B labels; the batch loss
    is the sum over samples.  Gradient is softmax - onehot.
    """
    pred = np.asarray(pred, dtype=np.float64)
    single = pred.ndim == 1
    z = pred[:, None] if single else pred
    labels = np.atleast_1d(np.asarray(label))
    if z.shape[0] != n_classes:
        raise ValueError(f"expected {n_classes} logits, got {z.shape[0]}")
    if labels.shape != (z.shape[1],):
        raise ValueError("one label per prediction column required")
    if np.any((labels < 0) | (labels >= n_classes)) or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"labels must be integers in [0, {n_classes})")
    shifted = z - z.max(axis=0, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=0))
    cols = np.arange(z.shape[1])
    loss = float(np.sum(logsum - shifted[labels, cols]))
    grad = np.exp(shifted - logsum)
    grad[labels, cols] -= 1.0
    return loss, (grad[:, 0] if single else grad)


def loss_triplet(f1, f2, f3, lam: float, margin: float):
    """||f1 - f2||^2 + lam * (margin - ||f1 - f3||)^2 and its gradients.

    At f1 == f3 the distance is not differentiable; its direction is taken as 0.
    """
    f1, f2, f3 = (np.asarray(a, dtype=np.float64) for a in (f1, f2, f3))
    if not f1.shape == f2.shape == f3.shape:
        raise ValueError("feature shapes differ")
    d12 = f1 - f2
    d13 = f1 - f3
    dist = float(np.linalg.norm(d13))
    gap = margin - dist
    loss = float(np.sum(d12 * d12) + lam * gap * gap)
    unit = d13 / dist if dist > 0 else np.zeros_like(d13)
    g_push = -2.0 * lam * gap * unit
    return loss, (2.0 * d12 + g_push, -2.0 * d12, -g_push)
