"""Adam optimizer with a plateau learning-rate scheduler.

The plateau rule: the learning rate decays by a constant factor of 0.9
whenever the epoch-mean training loss fails to improve (strictly) for 60
consecutive epochs, floored at 1e-3. Initial rate 1e-2.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class Adam:
    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-2,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        plateau_patience: int = 60,
        decay: float = 0.9,
        min_lr: float = 1e-3,
    ):
        self.params = params
        self.lr = float(lr)
        self.initial_lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0
        # plateau tracker
        self.plateau_patience = plateau_patience
        self.decay = decay
        self.min_lr = min_lr
        self.best_loss = np.inf
        self.epochs_since_improve = 0

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        """One Adam update. Reads ``.grad`` unless grads are passed."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            if grads is not None:
                g = grads[name]
            else:
                g = p.grad
                if g is None:
                    g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name!r} shape {p.data.shape}"
                )
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def end_epoch(self, train_loss: float) -> None:
        """Feed the epoch-mean training loss to the plateau tracker.

        Any strict decrease resets the counter.
        """
        if train_loss < self.best_loss:
            self.best_loss = train_loss
            self.epochs_since_improve = 0
            return
        self.epochs_since_improve += 1
        if self.epochs_since_improve >= self.plateau_patience:
            self.lr = max(self.lr * self.decay, self.min_lr)
            self.epochs_since_improve = 0
