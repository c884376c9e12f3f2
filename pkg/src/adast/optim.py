"""Adam with lr-scaled weight decay and the single-step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .tensor import Tensor, zero_grads


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 3e-4
    coupled_weight_decay: bool = False  # L2 folded into the gradient instead
    decay_epoch: int = 10
    decay_factor: float = 0.1

    def validate(self) -> list[str]:
        out = []
        if self.lr <= 0:
            out.append("optim.lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            out.append("optim.beta1/beta2 must lie in [0, 1)")
        if self.weight_decay < 0:
            out.append("optim.weight_decay must be >= 0")
        return out


def lr_schedule(epoch: int, base_lr: float = 1e-3, decay_epoch: int = 10, factor: float = 0.1) -> float:
    """One decay event: ``base_lr`` before ``decay_epoch``, ``base_lr * factor`` from then on."""
    return base_lr if epoch < decay_epoch else base_lr * factor


def _decays(name: str) -> bool:
    # biases and batch-norm affine parameters are not decayed
    return not name.endswith((".bias", ".gamma", ".beta"))


class Adam:
    def __init__(self, named_params, config: AdamConfig | None = None, lr: float | None = None):
        self.config = config or AdamConfig()
        self.names = [n for n, _ in named_params]
        self.params: list[Tensor] = [p for _, p in named_params]
        self.decay = [_decays(n) for n in self.names]
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self.t = 0
        self.lr = self.config.lr if lr is None else lr

    def zero_grad(self) -> None:
        zero_grads(self.params)

    def step(self) -> None:
        c = self.config
        grads = []
        for name, p in zip(self.names, self.params):
            g = np.zeros(p.shape) if p.grad is None else p.grad
            if not np.all(np.isfinite(g)):
                raise NumericError(f"adam: non-finite gradient for parameter {name}")
            grads.append(g)
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            wd = c.weight_decay if self.decay[i] else 0.0
            if c.coupled_weight_decay and wd:
                g = g + wd * p.data
            self.m[i] *= c.beta1
            self.m[i] += (1.0 - c.beta1) * g
            self.v[i] *= c.beta2
            self.v[i] += (1.0 - c.beta2) * g * g
            update = (self.m[i] / bc1) / (np.sqrt(self.v[i] / bc2) + c.eps)
            if wd and not c.coupled_weight_decay:
                update = update + wd * p.data
            p.data -= self.lr * update

    def state_dict(self) -> dict:
        return {"t": self.t, "lr": self.lr,
                "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}

    def load_state_dict(self, state: dict) -> None:
        if len(state["m"]) != len(self.params):
            raise ValueError("adam: state does not match the parameter list")
        self.t, self.lr = state["t"], state["lr"]
        self.m = [a.copy() for a in state["m"]]
        self.v = [a.copy() for a in state["v"]]
