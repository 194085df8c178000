from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import NonFiniteError
from .mlp import ParamStore


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamStore, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        st = cls(beta1, beta2, eps)
        for name, arr in params.items():
            st.m[name] = np.zeros_like(arr)
            st.v[name] = np.zeros_like(arr)
        return st


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm:
        for name in grads:
            grads[name] = grads[name] * (max_norm / norm)
    return norm


def adam_update(params: ParamStore, grads: Mapping[str, np.ndarray], state: AdamState,
                lr_per_group: Mapping[str, float]) -> tuple[ParamStore, AdamState]:
    """One bias-corrected Adam step, in place; each parameter uses its group's rate."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"gradient for {name}", g[~np.isfinite(g)].ravel()[0])
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, arr in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(arr)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        lr = lr_per_group[params.group(name)]
        arr -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
