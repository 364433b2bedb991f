"""Adaptive-moment optimizer with decoupled weight decay, step schedule, soft updates."""

from __future__ import annotations

import numpy as np


class AdamW:
    def __init__(self, size: int, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.01):
        if lr <= 0.0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.steps = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> None:
        """Update ``params`` in place."""
        if params.shape != grads.shape or params.shape != self.m.shape:
            raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {self.m.shape}")
        self.steps += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grads
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1**self.steps)
        v_hat = self.v / (1.0 - self.beta2**self.steps)
        params *= 1.0 - self.lr * self.weight_decay
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self) -> dict:
        return {"lr": self.lr, "steps": self.steps, "m": self.m.copy(), "v": self.v.copy()}


def opt_step(params: np.ndarray, grads: np.ndarray, lr: float, weight_decay: float = 0.0, opt: AdamW | None = None) -> np.ndarray:
    """Functional form: returns updated parameters (optimizer state in ``opt``)."""
    opt = opt if opt is not None else AdamW(params.size, lr=lr, weight_decay=weight_decay)
    opt.lr, opt.weight_decay = lr, weight_decay
    out = np.array(params, dtype=float, copy=True)
    opt.step(out, np.asarray(grads, dtype=float))
    return out


class StepScheduler:
    """Multiply the step size by ``factor`` every ``every`` calls to :meth:`tick`."""

    def __init__(self, optimizers, factor: float = 0.99, every: int = 20):
        self.optimizers = list(optimizers)
        self.factor = factor
        self.every = every
        self.count = 0

    def tick(self) -> None:
        self.count += 1
        if self.every > 0 and self.count % self.every == 0:
            for opt in self.optimizers:
                opt.lr *= self.factor


def soft_update(target: np.ndarray, main: np.ndarray, tau: float) -> np.ndarray:
    """target <- (1 - tau) target + tau main, in place; returns target."""
    if target.shape != main.shape:
        raise ValueError(f"shape mismatch: {target.shape} vs {main.shape}")
    if not (0.0 < tau <= 1.0):
        raise ValueError("tau must lie in (0, 1]")
    if tau == 1.0:
        target[...] = main
    else:
        target *= 1.0 - tau
        target += tau * main
    return target
