"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import DimensionError, NumericError, Tensor


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam over a mapping of named parameters.

    Parameters are updated in place (their ``data`` buffer is replaced),
    so the same :class:`Tensor` objects stay registered in the model.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        """Apply one update. ``grads`` defaults to each parameter's ``.grad``.

        The whole update is refused if any gradient contains NaN/Inf.
        """
        if grads is None:
            grads = {
                name: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for name, p in self.params.items()
            }
        for name, p in self.params.items():
            g = grads[name]
            if g.shape != p.data.shape:
                raise DimensionError(f"gradient for {name!r} has shape {g.shape}, expected {p.data.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}; update refused")

        st = self.state
        st.step += 1
        t = st.step
        c1 = 1.0 - st.beta1**t
        c2 = 1.0 - st.beta2**t
        for name, p in self.params.items():
            g = grads[name]
            m = st.m[name] = st.beta1 * st.m[name] + (1.0 - st.beta1) * g
            v = st.v[name] = st.beta2 * st.v[name] + (1.0 - st.beta2) * (g * g)
            p.data = p.data - st.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)
