"""The four pretraining loss terms and their weighted total.

total = contrastive + alpha * diversity + beta * feature_penalty
        + gamma * consistency

The contrastive term scores each masked frame's context vector against
the true quantized clean target plus K distractors drawn from the
quantized targets at *other masked* frames of the same utterance, under
temperature-scaled cosine similarity.  The diversity term is the
batch-level negative entropy of codebook usage, scaled by 1/(G*V), so it
is minimized by uniform usage and lives in [-(log V)/V, 0].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantizer import CodeUsage
from .rng import RngStream
from .tensor import Tensor, l2_norm, log_softmax, xlogx

__all__ = [
    "LossWeights",
    "LossBreakdown",
    "contrastive_loss",
    "sample_distractors",
    "diversity_loss",
    "feature_penalty",
    "consistency_loss",
    "total_loss",
]


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1       # diversity
    beta: float = 10.0       # feature penalty
    gamma: float = 1.0       # consistency
    kappa: float = 0.1       # contrastive temperature
    distractors: int = 100   # K (desk runs use 10)

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if self.distractors < 1:
            raise ValueError(f"need at least one distractor, got {self.distractors}")


@dataclass
class LossBreakdown:
    l_m: float
    l_d: float
    l_f: float
    l_c: float
    total: float
    n_masked: int

    def __post_init__(self):
        for name in ("l_m", "l_d", "l_f", "l_c", "total"):
            if not np.isfinite(getattr(self, name)):
                raise FloatingPointError(f"loss term {name} is non-finite")


def sample_distractors(masked_idx: np.ndarray, k: int, rng: RngStream) -> np.ndarray:
    """Candidate index matrix (n_masked, 1 + k'), positives in column 0.

    Distractors are drawn uniformly without replacement from the other
    masked frames; with replacement only when fewer than k are available.
    A frame is never its own distractor.  With a single masked frame there
    are no candidates beyond the positive.
    """
    m = np.asarray(masked_idx)
    n = len(m)
    if n == 0:
        raise ValueError("mask selects no frames")
    if n == 1:
        return m.reshape(1, 1)
    replace = (n - 1) < k
    cand = np.empty((n, 1 + k), dtype=np.int64)
    cand[:, 0] = m
    for i in range(n):
        others = np.delete(m, i)
        if replace:
            sel = rng.integers(0, len(others), size=k)
        else:
            sel = rng.choice(len(others), size=k, replace=False)
        cand[i, 1:] = others[sel]
    return cand


def contrastive_loss(c: Tensor, q: Tensor, mask: np.ndarray,
                     weights: LossWeights, rng: RngStream,
                     candidates: np.ndarray | None = None
                     ) -> tuple[Tensor, Tensor, np.ndarray]:
    """Mean over masked frames of -log softmax of cos similarities / kappa.

    Returns (scalar loss, per-frame losses, candidate index matrix).  Pass
    `candidates` to pin the distractor draw (grad checks, closed-form tests).
    """
    masked_idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if candidates is None:
        candidates = sample_distractors(masked_idx, weights.distractors, rng)
    n, width = candidates.shape
    c_m = c[masked_idx]                       # (n, d)
    qc = q[candidates]                        # (n, width, d)
    nc = l2_norm(c_m)                         # (n,)
    nq = l2_norm(qc)                          # (n, width)
    _reject_zero_norms(nc.data, masked_idx, "context")
    _reject_zero_norms(nq.data.min(axis=1), masked_idx, "target")
    dots = (c_m.reshape(n, 1, -1) * qc).sum(axis=-1)          # (n, width)
    sims = dots / (nc.reshape(n, 1) * nq)
    per_frame = -log_softmax(sims * (1.0 / weights.kappa), axis=-1)[:, 0]
    return per_frame.mean(), per_frame, candidates


def _reject_zero_norms(norms: np.ndarray, frames: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ValueError(f"zero-norm {what} vector in cosine at frame(s) "
                         f"{frames[bad].tolist()}")


def diversity_loss(usage: CodeUsage | Tensor) -> Tensor:
    """(1/(G V)) * sum p_bar log p_bar, with 0 log 0 := 0."""
    p = usage.p_bar if isinstance(usage, CodeUsage) else usage
    if np.any(p.data < 0):
        raise ValueError("selection probabilities must be non-negative")
    g, v = p.shape
    return xlogx(p).sum() * (1.0 / (g * v))


def feature_penalty(z_noisy: Tensor, z_clean: Tensor) -> Tensor:
    """Mean squared feature value over both encoder output streams."""
    return ((z_noisy * z_noisy).mean() + (z_clean * z_clean).mean()) * 0.5


def consistency_loss(z_noisy: Tensor, z_clean: Tensor) -> Tensor:
    """Mean over frames of the Euclidean distance between the streams."""
    if z_noisy.shape != z_clean.shape:
        raise ValueError(f"stream shape mismatch: {z_noisy.shape} vs {z_clean.shape}")
    return l2_norm(z_noisy - z_clean).mean()


def total_loss(l_m: Tensor, l_d: Tensor, l_f: Tensor, l_c: Tensor,
               weights: LossWeights, n_masked: int
               ) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum on the tape plus a float bookkeeping view for logging."""
    for name, t in (("l_m", l_m), ("l_d", l_d), ("l_f", l_f), ("l_c", l_c)):
        if not np.isfinite(t.data):
            raise FloatingPointError(f"loss term {name} is non-finite")
    total = l_m + weights.alpha * l_d + weights.beta * l_f + weights.gamma * l_c
    parts = (float(l_m.data), float(l_d.data), float(l_f.data), float(l_c.data))
    breakdown = LossBreakdown(
        l_m=parts[0], l_d=parts[1], l_f=parts[2], l_c=parts[3],
        total=parts[0] + weights.alpha * parts[1] + weights.beta * parts[2]
              + weights.gamma * parts[3],
        n_masked=n_masked)
    return total, breakdown
