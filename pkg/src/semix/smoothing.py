"""Label smoothing (uniform and instance-specific) and soft-label
cross-entropy.

Both smoothing modes are the same affine map (1-a)*y + a*prior; they differ
only in the prior: a fixed uniform distribution versus the model's own cached
prediction for that instance. The loss is -(1/m) * sum_i y_i . log p_i with
probabilities clamped at 1e-12 before the log.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensorcore import Tape, Tensor

PROB_CLAMP = 1e-12

MODES = ("none", "uniform_ls", "ils")


@dataclass(frozen=True)
class SmoothingConfig:
    mode: str = "ils"
    alpha: float = 0.1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"smoothing mode must be one of {MODES}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")


def smooth_uniform(one_hot: np.ndarray, alpha: float) -> np.ndarray:
    y = np.asarray(one_hot, dtype=np.float64)
    c = y.shape[-1]
    if c < 2:
        raise ValueError("smoothing needs at least two classes")
    return (1.0 - alpha) * y + alpha / c


def smooth_instance(one_hot: np.ndarray, r: np.ndarray, alpha: float) -> np.ndarray:
    y = np.asarray(one_hot, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if r.shape != y.shape:
        raise ValueError("prior and label shapes differ")
    if abs(r.sum() - 1.0) > 1e-4 or (r < 0).any():
        raise ValueError("prior distribution is not normalized")
    return (1.0 - alpha) * y + alpha * r


def smooth_label(one_hot: np.ndarray, prior: np.ndarray | None, config: SmoothingConfig) -> np.ndarray:
    """Apply the configured smoothing; mode "none" returns a copy."""
    if config.mode == "none":
        return np.asarray(one_hot, dtype=np.float64).copy()
    if config.mode == "uniform_ls":
        return smooth_uniform(one_hot, config.alpha)
    if prior is None:
        raise ValueError("instance-specific smoothing needs a cached prior")
    return smooth_instance(one_hot, prior, config.alpha)


def _as_batch(arr) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    return a[None, :] if a.ndim == 1 else a


def soft_cross_entropy(soft_labels, probs) -> float:
    """Mean of -y . log(max(p, 1e-12)) over the batch."""
    y = _as_batch(soft_labels)
    p = _as_batch(probs)
    if y.shape != p.shape:
        raise ValueError(f"label batch {y.shape} does not match prob batch {p.shape}")
    return float(-(y * np.log(np.maximum(p, PROB_CLAMP))).sum() / y.shape[0])


def soft_cross_entropy_loss(probs: Sequence[Tensor], soft_labels, tape: Tape) -> Tensor:
    """Taped loss over per-item probability tensors; labels are constants."""
    y = _as_batch(soft_labels)
    if len(probs) != y.shape[0]:
        raise ValueError(f"{len(probs)} prob tensors for {y.shape[0]} labels")
    m = len(probs)
    clamped = [np.maximum(p.data, PROB_CLAMP) for p in probs]
    total = -sum(float(y[i] @ np.log(clamped[i])) for i in range(m)) / m
    out = Tensor(total)

    def bw():
        g = out.grad
        if g is None:
            return
        for i, p in enumerate(probs):
            gi = np.where(p.data >= PROB_CLAMP, -(y[i] / clamped[i]) * (g / m), 0.0)
            p.accumulate(gi)

    tape.record(bw)
    return out


def cross_entropy(y: np.ndarray, p: np.ndarray) -> float:
    return float(-(np.asarray(y) * np.log(np.maximum(np.asarray(p), PROB_CLAMP))).sum())


def entropy(q: np.ndarray) -> float:
    q = np.asarray(q, dtype=np.float64)
    nz = q > 0
    return float(-(q[nz] * np.log(q[nz])).sum())


def kl_divergence(q: np.ndarray, p: np.ndarray) -> float:
    q = np.asarray(q, dtype=np.float64)
    p = np.maximum(np.asarray(p, dtype=np.float64), PROB_CLAMP)
    nz = q > 0
    return float((q[nz] * (np.log(q[nz]) - np.log(p[nz]))).sum())


def ls_decomposition_check(
    one_hot: np.ndarray,
    prior: np.ndarray,
    alpha: float,
    probs: np.ndarray,
) -> tuple[float, float, float]:
    """Check that the smoothed-label loss splits into its two-term form.

    lhs is the soft cross-entropy of the smoothed label; rhs rewrites it as
    (1-a)*H(y,p) + a*KL(prior||p) + a*H(prior). The entropy offset is constant
    in p, which is why the shorter two-term form trains identically.
    """
    lhs = soft_cross_entropy(smooth_instance(one_hot, prior, alpha), probs)
    rhs = (
        (1.0 - alpha) * cross_entropy(one_hot, probs)
        + alpha * kl_divergence(prior, probs)
        + alpha * entropy(prior)
    )
    diff = abs(lhs - rhs)
    if diff > 1e-6:
        raise ValueError(f"smoothing decomposition identity violated: |{lhs} - {rhs}| = {diff}")
    return lhs, rhs, diff
