"""Adam with warmup/linear-decay learning rate and global-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Parameter

__all__ = ["AdamConfig", "Adam", "lr_at", "clip_global_norm", "NonFiniteGradient"]


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-6


def lr_at(step: int, total_steps: int, lr_peak: float, warmup_fraction: float) -> float:
    """0 -> peak linearly over the warmup, then peak -> 0 linearly."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = warmup_fraction * total_steps
    if step <= warmup:
        return lr_peak * step / warmup
    return lr_peak * (total_steps - step) / (total_steps - warmup)


def clip_global_norm(params: list[Parameter], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad = p.grad * np.asarray(scale, dtype=p.grad.dtype)
    return norm


class Adam:
    def __init__(self, params: list[Parameter], cfg: AdamConfig = AdamConfig()):
        self.params = list(params)
        self.cfg = cfg
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self, lr: float) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradient(f"non-finite gradient in {p.name}")
        self.t += 1
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.eps
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p in self.params:
            g = p.grad
            m = self.m[p.name] = b1 * self.m[p.name] + (1.0 - b1) * g
            v = self.v[p.name] = b2 * self.v[p.name] + (1.0 - b2) * g * g
            update = lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
            p.data = p.data - update.astype(p.data.dtype)

    # moments keyed by parameter name so they can ride along in checkpoints
    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.asarray(v) for k, v in state["m"].items()}
        self.v = {k: np.asarray(v) for k, v in state["v"].items()}
