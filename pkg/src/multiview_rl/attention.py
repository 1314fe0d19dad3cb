"""Critic-gated softmax fusion of worker features.

Each worker ``w`` contributes a feature vector ``x_w`` and a scalar gate
signal ``f_w`` (its critic's value of its own observation/action).  With gate
parameters ``g``, the weights are ``p = softmax(g * f)`` and the fused state is
``sum_w p_w x_w``.  The scalar weight is broadcast over the feature dimension.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DimensionError


@dataclass
class AttentionGate:
    g: np.ndarray

    def __post_init__(self):
        self.g = np.array(self.g, dtype=np.float64).ravel()
        if self.g.size == 0:
            raise ValueError("attention gate needs at least one worker")
        if not np.all(np.isfinite(self.g)):
            raise ValueError("gate parameters must be finite")

    @classmethod
    def constant(cls, n_workers: int, value: float = 1.0) -> "AttentionGate":
        return cls(np.full(n_workers, float(value)))

    @property
    def n_workers(self) -> int:
        return self.g.size


@dataclass
class AttentionOutput:
    fused: np.ndarray
    weights: np.ndarray


@dataclass
class AttentionGrads:
    gate_grads: np.ndarray
    feature_grads: np.ndarray
    signal_grads: np.ndarray


def _check(gate: AttentionGate, features, gate_signals):
    x = np.asarray(features, dtype=np.float64)
    f = np.asarray(gate_signals, dtype=np.float64)
    n = gate.n_workers
    if n == 0:
        raise ValueError("no workers to attend over")
    if x.ndim < 2 or x.shape[-2] != n:
        raise DimensionError(f"expected features of shape (..., {n}, d_f), got {x.shape}")
    if f.shape != x.shape[:-1]:
        raise DimensionError(f"gate signals have shape {f.shape}, expected {x.shape[:-1]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(f))):
        raise ValueError("non-finite feature or gate signal")
    return x, f


def softmax_weights(g, f) -> np.ndarray:
    logits = np.asarray(g) * np.asarray(f)
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def attend(gate: AttentionGate, features, gate_signals) -> AttentionOutput:
    """Fuse worker features.

    ``features`` has shape ``(N_w, d_f)`` or a leading batch axis
    ``(B, N_w, d_f)``; ``gate_signals`` is ``(N_w,)`` or ``(B, N_w)``.
    """
    x, f = _check(gate, features, gate_signals)
    p = softmax_weights(gate.g, f)
    fused = np.einsum("...w,...wd->...d", p, x)
    return AttentionOutput(fused, p)


def attend_backward(gate: AttentionGate, features, gate_signals, fused_grad) -> AttentionGrads:
    """Exact gradients of <fused, fused_grad> w.r.t. g, every feature and every signal.

    For a batch, ``gate_grads`` is summed over the batch (g is shared) while
    feature and signal gradients keep the batch axis.
    """
    x, f = _check(gate, features, gate_signals)
    gy = np.asarray(fused_grad, dtype=np.float64)
    if gy.shape != x.shape[:-2] + x.shape[-1:]:
        raise DimensionError(f"fused_grad has shape {gy.shape}, fused state is {x.shape[:-2] + x.shape[-1:]}")
    p = softmax_weights(gate.g, f)
    # d<fused, gy>/dp_w = <x_w, gy>; through softmax: dlogit_w = p_w (s_w - sum_l p_l s_l)
    s = np.einsum("...wd,...d->...w", x, gy)
    dlogit = p * (s - (p * s).sum(axis=-1, keepdims=True))
    feature_grads = p[..., None] * gy[..., None, :]
    signal_grads = dlogit * gate.g
    gate_grads = dlogit * f
    if gate_grads.ndim > 1:
        gate_grads = gate_grads.reshape(-1, gate.n_workers).sum(axis=0)
    return AttentionGrads(gate_grads, feature_grads, signal_grads)
