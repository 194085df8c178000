from __future__ import annotations

import numpy as np


def masked_softmax(logits, mask) -> np.ndarray:
    """Softmax over the last axis restricted to ``mask``; masked entries are exactly 0."""
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if not mask.any(-1).all():
        raise ValueError("masked_softmax: no valid entries")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def masked_log_softmax(logits, mask) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if not mask.any(-1).all():
        raise ValueError("masked_log_softmax: no valid entries")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(-1, keepdims=True)
    with np.errstate(divide="ignore"):
        return z - np.log(np.exp(z).sum(-1, keepdims=True))
