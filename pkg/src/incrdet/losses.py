"""Loss functions for detection training.

Each loss returns ``(value, grad_wrt_first_arg)`` since there is no
autograd here.  All values are non-negative.
"""

from __future__ import annotations

import numpy as np


def softmax_cross_entropy(logits, labels):
    """Cross entropy over softmax logits.

    ``logits`` is (K,) with an int label, or (N, K) with (N,) labels; the
    batched form averages over the N samples.  Labels outside [0, K) are
    a hard error.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None, :]
        labels = np.asarray([labels], dtype=np.int64)
    else:
        labels = np.asarray(labels, dtype=np.int64)
    n, k = z.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise ValueError(f"label {bad} out of range for {k} classes")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(lse - shifted[np.arange(n), labels]))
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    grad = probs
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, (grad[0] if single else grad)


def binary_cross_entropy_with_logits(logits, targets):
    """Elementwise sigmoid BCE, averaged over all elements."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError(f"logit/target shape mismatch: {z.shape} vs {y.shape}")
    if z.size == 0:
        return 0.0, np.zeros_like(z)
    # stable: max(z,0) - z*y + log(1 + exp(-|z|))
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    sig = 1.0 / (1.0 + np.exp(-z))
    grad = (sig - y) / z.size
    return float(loss.mean()), grad


def smooth_l1(pred, target, beta: float = 1.0):
    """Smooth L1 over box deltas.

    Per component: 0.5 d^2 / beta for |d| < beta, else |d| - 0.5 beta.
    A (4,) pair gives the component sum; an (N, 4) pair gives the mean of
    per-row sums.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"pred/target shape mismatch: {p.shape} vs {t.shape}")
    single = p.ndim == 1
    if single:
        p = p[None, :]
        t = t[None, :]
    if p.size == 0:
        return 0.0, np.zeros_like(p if not single else p[0])
    d = p - t
    ad = np.abs(d)
    quad = ad < beta
    vals = np.where(quad, 0.5 * d * d / beta, ad - 0.5 * beta)
    loss = float(vals.sum(axis=1).mean())
    grad = np.where(quad, d / beta, np.sign(d)) / p.shape[0]
    return loss, (grad[0] if single else grad)
