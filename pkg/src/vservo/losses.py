"""Loss functions for pose regression, origin classification, and balancing.

* pose loss: Euclidean distance of the translation error plus beta times the
  Euclidean distance of the axis-angle error (beta defaults to 0.2);
* classification loss: softmax cross-entropy of two logits against the
  dataset-origin label (0 = large-scale, 1 = small-scale);
* auto-balance: sum_i L_i * exp(-s_i) + s_i with learnable per-term scalars,
  which reduces exactly to the plain sum when every s_i is zero.

All functions accept and return engine tensors so they are differentiable;
single-sample and batched forms are provided (batched forms average).
"""

from __future__ import annotations

import numpy as np

from vservo import autodiff as ad
from vservo.errors import LengthMismatch, ShapeMismatch

__all__ = [
    "DEFAULT_BETA",
    "loss_pose",
    "loss_pose_batch",
    "loss_cls",
    "loss_cls_batch",
    "loss_autobalance",
    "softmax",
]

DEFAULT_BETA = 0.2


def _norm_rows(x: ad.Tensor) -> ad.Tensor:
    """Row-wise Euclidean norm of a 2-D tensor -> (n,) tensor."""
    return ad.sqrt(ad.tsum(ad.mul(x, x), axis=1))


def loss_pose(pred, label, beta: float = DEFAULT_BETA) -> ad.Tensor:
    """Pose loss for one 6-vector pair (translation + axis-angle)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    pred = ad.reshape(ad.as_tensor(pred), (1, 6))
    label = ad.reshape(ad.as_tensor(label), (1, 6))
    return ad.reshape(loss_pose_batch(pred, label, beta), ())


def loss_pose_batch(pred: ad.Tensor, label: ad.Tensor, beta: float = DEFAULT_BETA) -> ad.Tensor:
    """Mean pose loss over a batch of (n, 6) predictions."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    pred, label = ad.as_tensor(pred), ad.as_tensor(label)
    if pred.shape != label.shape or pred.shape[-1] != 6:
        raise ShapeMismatch(f"expected matching (n, 6) tensors, got {pred.shape} vs {label.shape}")
    diff = ad.sub(pred, label)
    t_norm = _norm_rows(ad.narrow_last(diff, 0, 3))
    r_norm = _norm_rows(ad.narrow_last(diff, 3, 3))
    return ad.tmean(ad.add(t_norm, ad.mul(r_norm, beta)))


def _logsumexp_rows(logits: ad.Tensor) -> ad.Tensor:
    # Stabilized with a detached per-row max; the gradient is exact.
    m = ad.Tensor(np.max(logits.data, axis=1, keepdims=True))
    return ad.add(ad.log(ad.tsum(ad.exp(ad.sub(logits, m)), axis=1)), ad.reshape(m, (logits.shape[0],)))


def loss_cls(logits, origin_index: int) -> ad.Tensor:
    """Softmax cross-entropy of one 2-logit vector against an origin label."""
    logits = ad.reshape(ad.as_tensor(logits), (1, 2))
    return ad.reshape(loss_cls_batch(logits, np.array([origin_index])), ())


def loss_cls_batch(logits: ad.Tensor, origin_indices: np.ndarray) -> ad.Tensor:
    """Mean cross-entropy over an (n, 2) logit batch."""
    logits = ad.as_tensor(logits)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ShapeMismatch(f"expected (n, 2) logits, got {logits.shape}")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(logits.shape[0]), np.asarray(origin_indices, dtype=int)] = 1.0
    picked = ad.tsum(ad.mul(logits, ad.Tensor(onehot)), axis=1)
    return ad.tmean(ad.sub(_logsumexp_rows(logits), picked))


def loss_autobalance(losses, s_hat) -> ad.Tensor:
    """sum_i losses[i] * exp(-s_hat[i]) + s_hat[i]; differentiable in both."""
    losses = [ad.as_tensor(l) for l in losses]
    s_hat = ad.as_tensor(s_hat)
    if s_hat.ndim != 1 or len(losses) != s_hat.shape[0]:
        raise LengthMismatch(f"{len(losses)} losses vs {s_hat.shape} balance terms")
    total = None
    for i, loss in enumerate(losses):
        s_i = ad.reshape(ad.narrow_last(s_hat, i, 1), ())
        term = ad.add(ad.mul(loss, ad.exp(ad.neg(s_i))), s_i)
        total = term if total is None else ad.add(total, term)
    return total


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain numpy softmax over the last axis (for inference-time voting)."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)
