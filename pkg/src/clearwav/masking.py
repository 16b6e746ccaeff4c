"""Span masking over feature frames.

Every time step is independently a span start with probability p; each
start masks the following M frames (truncated at the sequence end, no
wraparound).  If nothing gets masked the draw is retried up to 16 times
and then a uniform random span is forced; forced events are surfaced so
the trainer can report them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import RngStream
from .tensor import Tensor, where

__all__ = ["MaskConfig", "MaskSample", "sample_mask", "apply_mask"]

_MAX_RESAMPLES = 16


@dataclass(frozen=True)
class MaskConfig:
    start_prob: float = 0.065   # p
    span: int = 10              # M

    def __post_init__(self):
        if not 0.0 < self.start_prob < 1.0:
            raise ValueError(f"start_prob must be in (0, 1), got {self.start_prob}")
        if self.span < 1:
            raise ValueError(f"span must be >= 1, got {self.span}")


@dataclass
class MaskSample:
    mask: np.ndarray          # bool, length T
    indices: list[int]
    forced: bool = False

    @property
    def n_masked(self) -> int:
        return len(self.indices)


def sample_mask(t: int, cfg: MaskConfig, rng: RngStream) -> MaskSample:
    if t < 1:
        raise ValueError(f"sequence length must be >= 1, got {t}")
    for _ in range(_MAX_RESAMPLES):
        starts = rng.uniform(t) < cfg.start_prob
        if starts.any():
            mask = _spans_from_starts(starts, cfg.span)
            return MaskSample(mask, np.flatnonzero(mask).tolist())
    start = int(rng.integers(0, max(t - cfg.span, 0) + 1))
    mask = np.zeros(t, dtype=bool)
    mask[start : start + cfg.span] = True
    return MaskSample(mask, np.flatnonzero(mask).tolist(), forced=True)


def _spans_from_starts(starts: np.ndarray, span: int) -> np.ndarray:
    t = len(starts)
    mask = np.zeros(t, dtype=bool)
    for s in np.flatnonzero(starts):
        mask[s : min(s + span, t)] = True
    return mask


def apply_mask(z: Tensor, mask: np.ndarray, embedding: Tensor) -> Tensor:
    """Replace masked rows of z (T, D) with the learnable embedding (D,)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (z.shape[0],):
        raise ValueError(f"mask length {mask.shape} does not match frames {z.shape[0]}")
    if not mask.any():
        return z
    return where(mask[:, None], embedding, z)
