from __future__ import annotations

import numpy as np

from clar.autodiff.tensor import Parameter, ShapeError


def adam_step(
    params: list[Parameter],
    grads: list[np.ndarray],
    m: list[np.ndarray],
    v: list[np.ndarray],
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    step: int,
) -> None:
    """One bias-corrected Adam update. ``m`` and ``v`` are updated in place."""
    if step < 1:
        raise ValueError(f"adam step must be >= 1, got {step}")
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ShapeError("adam_step", p.shape, g.shape)
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        m_hat = m[i] / c1
        v_hat = v[i] / c2
        p.assign(p.data - lr * m_hat / (np.sqrt(v_hat) + eps))


class Adam:
    """Adam optimizer holding first/second moment state across steps."""

    def __init__(
        self,
        params: list[Parameter],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        adam_step(
            self.params,
            [p.grad for p in self.params],
            self.m,
            self.v,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
            self.t,
        )

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {"t": np.array([float(self.t)])}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            state[f"m.{i}"] = m.copy()
            state[f"v.{i}"] = v.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["t"][0])
        for i in range(len(self.params)):
            self.m[i] = np.array(state[f"m.{i}"], dtype=np.float64)
            self.v[i] = np.array(state[f"v.{i}"], dtype=np.float64)
