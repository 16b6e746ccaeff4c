"""Alignment-free sequence loss by the forward recursion in log space.

The label sequence is interleaved with blanks; alpha_t(s) accumulates the
log-probability of every frame-to-label path that lands on slot s at time
t.  The loss is differentiable end to end on the tape.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, concat, log_softmax, logaddexp, where

__all__ = ["ctc_loss", "min_frames_required"]


def min_frames_required(target: list[int]) -> int:
    """Feasibility bound: |target| plus one separating blank per adjacent repeat."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_loss(logits: Tensor, target: list[int], blank: int = 0) -> Tensor:
    """-log P(target | logits) summed over all blank-collapsed alignments.

    logits: (T, n_symbols), unnormalized.  target: symbol ids, no blanks.
    """
    t_frames = logits.shape[0]
    target = [int(s) for s in target]
    if any(s == blank for s in target):
        raise ValueError("target must not contain the blank symbol")
    if t_frames < min_frames_required(target):
        raise ValueError(
            f"impossible alignment: {t_frames} frames cannot emit a "
            f"{len(target)}-symbol target needing {min_frames_required(target)}")

    log_probs = log_softmax(logits, axis=-1)
    ext = [blank]
    for s in target:
        ext += [s, blank]
    s_len = len(ext)
    ext_arr = np.array(ext)
    neg_inf = np.array(-np.inf, dtype=logits.dtype)

    # slots reachable by the skip transition: non-blank and different from
    # the label two slots back
    skip_ok = np.zeros(s_len, dtype=bool)
    for s in range(2, s_len):
        skip_ok[s] = ext[s] != blank and ext[s] != ext[s - 2]

    pad1 = Tensor(np.full(1, -np.inf, dtype=logits.dtype))
    pad2 = Tensor(np.full(2, -np.inf, dtype=logits.dtype))
    init = np.full(s_len, -np.inf, dtype=logits.dtype)
    init[0] = 0.0
    if s_len > 1:
        init[1] = 0.0
    alpha = Tensor(init) + log_probs[0, ext_arr]

    for t in range(1, t_frames):
        stay = alpha
        step1 = concat([pad1, alpha[:-1]])
        trans = logaddexp(stay, step1)
        if s_len > 2:
            step2 = concat([pad2, alpha[:-2]])
            trans = logaddexp(trans, where(skip_ok, step2, Tensor(neg_inf)))
        alpha = trans + log_probs[t, ext_arr]

    tail = alpha[-1] if s_len == 1 else logaddexp(alpha[-1], alpha[-2])
    return -tail
