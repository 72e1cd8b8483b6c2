import logging
import math

import numpy as np

log = logging.getLogger(__name__)


class AdamW:
    """Adam with decoupled weight decay.

    Decay shrinks the value directly (``p -= lr * wd * p``) before the
    bias-corrected moment update; it never enters the gradient moments.
    """

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        if lr < 0:
            raise ValueError(f"invalid learning rate {lr}")
        if not all(0.0 < b < 1.0 for b in betas):
            raise ValueError(f"betas must lie in (0, 1), got {betas}")
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad[...] = 0

    def step(self):
        if not self.params:
            log.warning("AdamW.step called with no trainable parameters; skipping")
            return
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            denom = np.sqrt(v / bc2) + self.eps
            p.data -= (self.lr / bc1) * m / denom

    def state_dict(self):
        return {"t": self.t, "lr": self.lr, "m": [m.copy() for m in self.m],
                "v": [v.copy() for v in self.v]}


class CosineAnnealing:
    """Per-epoch cosine decay from ``base_lr`` towards zero."""

    def __init__(self, optimizer, total_epochs, base_lr=None):
        if total_epochs < 1:
            raise ValueError("total_epochs must be positive")
        self.optimizer = optimizer
        self.base_lr = optimizer.lr if base_lr is None else base_lr
        self.total_epochs = total_epochs
        self.current_epoch = 0

    def lr_at(self, epoch):
        return cosine_anneal(self.base_lr, epoch, self.total_epochs)

    def step(self):
        self.current_epoch += 1
        self.optimizer.lr = self.lr_at(self.current_epoch)
        return self.optimizer.lr


def cosine_anneal(base_lr, epoch, total_epochs):
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs))
