"""Adam with decoupled weight decay, plus the step-wise learning-rate schedule.

Written directly on float64 numpy arrays so training runs are bit-identical
for a fixed seed on one platform.
"""

from __future__ import annotations

import numpy as np


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay.

    Per step, each parameter first shrinks multiplicatively by
    (1 - lr * weight_decay), then moves along the bias-corrected moment
    estimate m_hat / (sqrt(v_hat) + eps).  The decay is decoupled: it never
    enters the moment accumulators.
    """

    def __init__(
        self,
        params: list[np.ndarray],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if not (0 <= betas[0] < 1 and 0 <= betas[1] < 1):
            raise ValueError(f"betas must lie in [0, 1), got {betas}")
        if weight_decay < 0:
            raise ValueError(f"weight decay must be nonnegative, got {weight_decay}")
        self.params = params
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        """Update parameters in place from one gradient per parameter."""
        if len(grads) != len(self.params):
            raise ValueError(f"expected {len(self.params)} gradients, got {len(grads)}")
        b1, b2 = self.betas
        self.t += 1
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            m_hat = m / bc1
            v_hat = v / bc2
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def scheduled_lr(
    base_lr: float, epoch: int, decay_factor: float, decay_every: int
) -> float:
    """Step decay: base_lr * decay_factor ** floor(epoch / decay_every), 0-indexed."""
    if epoch < 0:
        raise ValueError(f"epoch must be nonnegative, got {epoch}")
    if decay_every <= 0:
        raise ValueError(f"decay_every must be positive, got {decay_every}")
    return base_lr * decay_factor ** (epoch // decay_every)
