"""Bias-corrected Adam, one state per network."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import ParamStore
from .tensor import Tensor

DEFAULT_ADAM = (2e-4, 0.5, 0.9)
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    alpha: float = DEFAULT_ADAM[0]
    beta1: float = DEFAULT_ADAM[1]
    beta2: float = DEFAULT_ADAM[2]
    eps: float = ADAM_EPS
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamStore, hyper=DEFAULT_ADAM, eps: float = ADAM_EPS) -> "AdamState":
        alpha, b1, b2 = hyper
        st = cls(alpha, b1, b2, eps)
        for name, t in params.entries.items():
            st.m[name] = np.zeros(t.shape)
            st.v[name] = np.zeros(t.shape)
        return st

    @property
    def hyper(self) -> tuple:
        return (self.alpha, self.beta1, self.beta2, self.eps)


def adam_step(params: ParamStore, grads: dict[str, Tensor | np.ndarray], state: AdamState) -> None:
    """In-place Adam update of ``params`` and ``state``.

    theta -= alpha * m_hat / (sqrt(v_hat) + eps)
    """
    missing = [n for n in params.entries if n not in grads]
    if missing:
        raise KeyError(f"adam_step: no gradient for parameters {missing}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.entries.items():
        g = grads[name]
        g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if name not in state.m:
            state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.alpha * (m / c1) / (np.sqrt(v / c2) + state.eps)
