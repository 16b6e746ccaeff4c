"""Product quantization of clean features via gumbel softmax.

Features are projected to G x V logits; per frame and per group one
codebook entry is selected by hard argmax over (logits + gumbel)/tau, with
gradients flowing through the soft assignment (straight-through).  The
selected entries are concatenated and linearly mapped to the target
dimension, which must equal the context dimension so cosine similarity
against transformer outputs is well-defined.

Batch code usage follows the averaged-logits form: p_bar is the
temperature-scaled, noise-perturbed softmax of logits averaged over all
frames in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import RngStream
from .tensor import (Parameter, Tensor, concat, matmul, softmax,
                     straight_through)

__all__ = ["QuantizerConfig", "GumbelState", "CodeUsage", "Quantizer", "anneal"]


@dataclass(frozen=True)
class QuantizerConfig:
    groups: int = 2
    entries: int = 8          # V, codebook size per group
    entry_dim: int = 8
    in_dim: int = 32          # feature dim D
    out_dim: int = 32         # must equal the context dim

    def __post_init__(self):
        if self.groups < 1 or self.entries < 2:
            raise ValueError("need groups >= 1 and entries >= 2")


@dataclass
class GumbelState:
    """tau(step) = max(floor, start * decay**step), annealed per iteration."""

    start: float = 2.0
    floor: float = 0.5
    decay: float = 0.999995
    step: int = 0

    @property
    def tau(self) -> float:
        return max(self.floor, self.start * self.decay ** self.step)


def anneal(state: GumbelState, step: int) -> float:
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    state.step = step
    return state.tau


@dataclass
class CodeUsage:
    """Batch-level codebook statistics.  p_bar rows are the per-group
    selection distributions (on tape, for the diversity loss)."""

    p_bar: Tensor          # (G, V)
    l_bar: Tensor          # (G, V) batch-averaged logits
    hard_counts: np.ndarray  # (G, V) argmax selection counts
    n_frames: int

    def __post_init__(self):
        p = self.p_bar.data
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-5):
            raise ValueError("p_bar rows must be distributions")


class Quantizer:
    def __init__(self, cfg: QuantizerConfig, init_rng: RngStream,
                 name: str = "quantizer", dtype=np.float32):
        self.cfg = cfg
        g, v, d_e = cfg.groups, cfg.entries, cfg.entry_dim
        bound_in = 1.0 / np.sqrt(cfg.in_dim)
        self.logit_w = Parameter(init_rng.uniform((cfg.in_dim, g * v), -bound_in, bound_in),
                                 f"{name}.logit_proj.weight", dtype=dtype)
        self.logit_b = Parameter(np.zeros(g * v), f"{name}.logit_proj.bias", dtype=dtype)
        bound_e = 1.0 / np.sqrt(d_e)
        self.codebook = Parameter(init_rng.uniform((g, v, d_e), -bound_e, bound_e),
                                  f"{name}.codebook", dtype=dtype)
        bound_out = 1.0 / np.sqrt(g * d_e)
        self.out_w = Parameter(init_rng.uniform((g * d_e, cfg.out_dim), -bound_out, bound_out),
                               f"{name}.out_proj.weight", dtype=dtype)
        self.out_b = Parameter(np.zeros(cfg.out_dim), f"{name}.out_proj.bias", dtype=dtype)

    def parameters(self) -> list[Parameter]:
        return [self.logit_w, self.logit_b, self.codebook, self.out_w, self.out_b]

    # -- pieces ----------------------------------------------------------------

    def logits(self, z: Tensor) -> Tensor:
        """(T, D) -> (T, G, V)."""
        t = z.shape[0]
        out = matmul(z, self.logit_w) + self.logit_b
        return out.reshape(t, self.cfg.groups, self.cfg.entries)

    def assignments(self, logits: Tensor, tau: float,
                    noise: np.ndarray, hard: bool = True) -> Tensor:
        """Per-frame, per-group assignment weights over the V entries.

        Soft path: softmax((logits + noise)/tau).  Hard path: one-hot at
        the argmax, with the soft gradient attached (straight-through).
        """
        if not np.all(np.isfinite(logits.data)):
            bad = np.argwhere(~np.isfinite(logits.data).all(axis=(1, 2)))
            raise FloatingPointError(f"non-finite quantizer logits at frames {bad.ravel().tolist()}")
        noisy = (logits + Tensor(noise.astype(logits.dtype))) * (1.0 / tau)
        soft = softmax(noisy, axis=-1)
        if not hard:
            return soft
        idx = np.argmax(soft.data, axis=-1)
        onehot = np.zeros_like(soft.data)
        np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
        return straight_through(onehot, soft)

    def codes_from_assignments(self, assign: Tensor) -> Tensor:
        """(T, G, V) assignment weights -> (T, out_dim) targets."""
        t = assign.shape[0]
        per_group = [matmul(assign[:, g, :], self.codebook[g])
                     for g in range(self.cfg.groups)]
        stacked = concat(per_group, axis=-1)  # (T, G * entry_dim)
        return matmul(stacked, self.out_w) + self.out_b

    # -- public op ---------------------------------------------------------------

    def quantize(self, z: Tensor, state: GumbelState, rng: RngStream,
                 hard: bool = True) -> tuple[Tensor, CodeUsage]:
        """Quantize one utterance's frames and report usage over them."""
        logits = self.logits(z)
        noise = rng.gumbel(logits.shape)
        assign = self.assignments(logits, state.tau, noise, hard=hard)
        q = self.codes_from_assignments(assign)
        idx = np.argmax(logits.data + noise, axis=-1)  # same winners as assignments
        usage = self.usage([logits], [idx], state, rng)
        return q, usage

    def usage(self, logits_list: list[Tensor], selection_list: list[np.ndarray],
              state: GumbelState, rng: RngStream) -> CodeUsage:
        """Averaged-logits code usage over all frames of a batch; hard
        counts tally the selections actually made for those frames."""
        all_logits = concat(logits_list, axis=0) if len(logits_list) > 1 else logits_list[0]
        n = all_logits.shape[0]
        l_bar = all_logits.mean(axis=0)  # (G, V)
        noise = rng.gumbel(l_bar.shape).astype(l_bar.dtype)
        p_bar = softmax((l_bar + Tensor(noise)) * (1.0 / state.tau), axis=-1)
        counts = np.zeros((self.cfg.groups, self.cfg.entries), dtype=np.int64)
        for idx in selection_list:
            for g in range(self.cfg.groups):
                counts[g] += np.bincount(idx[:, g], minlength=self.cfg.entries)
        return CodeUsage(p_bar=p_bar, l_bar=l_bar, hard_counts=counts, n_frames=n)
