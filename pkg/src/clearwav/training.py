"""Pretraining and CTC fine-tuning loops.

Pretraining: both waveform streams go through the shared encoder, the
noisy stream is span-masked and contextualized, targets are quantized
from the clean stream (mode "enhanced") or from the unmasked noisy stream
with the consistency term switched off (mode "baseline", the
single-stream ablation).  Fine-tuning drops the quantizer, adds the
character head, and minimizes CTC on re-mixed noisy speech with the
feature encoder frozen for the first tenth of the steps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio import OffsetPolicy
from .corpus import Manifest, NoiseBank, PairedUtterance, build_noisy_set
from .ctc import ctc_loss
from .losses import (LossBreakdown, LossWeights, consistency_loss,
                     contrastive_loss, diversity_loss, feature_penalty,
                     total_loss)
from .masking import apply_mask, sample_mask
from .model import AsrModel, PretrainModel
from .optim import Adam, AdamConfig, NonFiniteGradient, clip_global_norm, lr_at
from .quantizer import GumbelState, anneal
from .rng import RngStream
from .tensor import Tensor, concat

__all__ = ["TrainConfig", "PretrainState", "pretrain", "pretrain_step",
           "finetune", "PRETRAIN_MODES"]

PRETRAIN_MODES = ("enhanced", "baseline", "none")


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 200
    batch_size: int = 8
    lr_peak: float = 5e-4
    warmup_fraction: float = 0.08
    adam: AdamConfig = AdamConfig()
    weights: LossWeights = LossWeights(distractors=10)
    seed: int = 0
    snr_set: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0)
    checkpoint_every: int = 0          # 0: final checkpoint only
    grad_clip: float = 25.0
    remix_each_epoch: bool = True
    offset_policy: OffsetPolicy = OffsetPolicy.RANDOM_START
    freeze_encoder_fraction: float = 0.1   # fine-tuning only

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError(f"warmup_fraction must be in (0, 1), got {self.warmup_fraction}")
        if not self.snr_set:
            raise ValueError("snr_set must be non-empty")
        object.__setattr__(self, "offset_policy", OffsetPolicy(self.offset_policy))


@dataclass
class PretrainState:
    step: int = 0
    gumbel: GumbelState = field(default_factory=GumbelState)
    forced_masks: int = 0
    incidents: list[str] = field(default_factory=list)


@dataclass
class RunResult:
    trace: list
    incidents: list[str]
    forced_masks: int = 0
    rng_states: dict = field(default_factory=dict)


class _LossLog:
    COLUMNS = ("step", "l_m", "l_d", "l_f", "l_c", "total", "tau", "lr", "n_masked")

    def __init__(self, path):
        self.path = path
        self.rows = []

    def add(self, step, bd: LossBreakdown, tau, lr):
        self.rows.append((step, bd.l_m, bd.l_d, bd.l_f, bd.l_c, bd.total,
                          tau, lr, bd.n_masked))

    def write(self):
        if self.path is None:
            return
        Path(self.path).parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.COLUMNS)
            for row in self.rows:
                w.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.10g}"


def _weighted_mean(values: list[Tensor], weights: list[int]) -> Tensor:
    total = float(sum(weights))
    out = values[0] * (weights[0] / total)
    for v, w in zip(values[1:], weights[1:]):
        out = out + v * (w / total)
    return out


def _epoch_batches(n: int, batch_size: int, rng: RngStream):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


@dataclass
class _Streams:
    """All rng streams a run consumes, derived from one seed."""
    mask: RngStream
    gumbel: RngStream
    distractor: RngStream
    order: RngStream
    root: RngStream

    @classmethod
    def from_seed(cls, seed: int) -> "_Streams":
        root = RngStream(seed)
        return cls(mask=root.derive("mask"), gumbel=root.derive("gumbel"),
                   distractor=root.derive("distractor"),
                   order=root.derive("batch_order"), root=root)

    def mix_seed(self, epoch: int) -> int:
        return self.root.derive(f"mix:{epoch}").seed

    def states(self) -> dict:
        return {"mask": self.mask.state(), "gumbel": self.gumbel.state(),
                "distractor": self.distractor.state(), "order": self.order.state()}


def pretrain_step(batch: list[PairedUtterance], model: PretrainModel,
                  state: PretrainState, cfg: TrainConfig, streams: _Streams,
                  optimizer: Adam, mode: str = "enhanced") -> LossBreakdown:
    """One optimizer transaction over a paired batch; rolls back (skips the
    update) if the loss or any gradient is non-finite."""
    weights = cfg.weights if mode == "enhanced" else replace(cfg.weights, gamma=0.0)
    tau = anneal(state.gumbel, state.step)
    lm_parts: list[Tensor] = []
    logit_parts: list[Tensor] = []
    selections: list[np.ndarray] = []
    lf_parts: list[Tensor] = []
    lc_parts: list[Tensor] = []
    frame_counts: list[int] = []

    for pair in batch:
        x_noisy = Tensor(pair.noisy.samples.astype(model.dtype))
        z_noisy = model.encoder.encode(x_noisy)
        t_frames = z_noisy.shape[0]
        if mode == "enhanced":
            x_clean = Tensor(pair.clean.samples.astype(model.dtype))
            z_clean = model.encoder.encode(x_clean)
            z_target = z_clean
            lf_parts.append(feature_penalty(z_noisy, z_clean))
            lc_parts.append(consistency_loss(z_noisy, z_clean))
        else:
            z_target = z_noisy
            lf_parts.append(feature_penalty(z_noisy, z_noisy))
        frame_counts.append(t_frames)

        mask = sample_mask(t_frames, model.cfg.mask, streams.mask)
        state.forced_masks += int(mask.forced)
        c = model.context.forward(apply_mask(z_noisy, mask.mask, model.mask_emb))

        logits = model.quantizer.logits(z_target)
        noise = streams.gumbel.gumbel(logits.shape)
        assign = model.quantizer.assignments(logits, tau, noise, hard=True)
        q = model.quantizer.codes_from_assignments(assign)
        selections.append(np.argmax(logits.data + noise, axis=-1))
        logit_parts.append(logits)

        _, per_frame, _ = contrastive_loss(c, q, mask.mask, weights,
                                           streams.distractor)
        lm_parts.append(per_frame)

    all_lm = concat(lm_parts) if len(lm_parts) > 1 else lm_parts[0]
    l_m = all_lm.mean()
    usage = model.quantizer.usage(logit_parts, selections, state.gumbel,
                                  streams.gumbel)
    l_d = diversity_loss(usage)
    l_f = _weighted_mean(lf_parts, frame_counts)
    if lc_parts:
        l_c = _weighted_mean(lc_parts, frame_counts)
    else:
        l_c = Tensor(np.asarray(0.0, dtype=model.dtype))
    total, breakdown = total_loss(l_m, l_d, l_f, l_c, weights,
                                  n_masked=all_lm.shape[0])

    model.zero_grad()
    total.backward()
    clip_global_norm(model.parameters(), cfg.grad_clip)
    optimizer.step(lr_at(state.step + 1, cfg.total_steps, cfg.lr_peak,
                         cfg.warmup_fraction))
    return breakdown


def pretrain(model: PretrainModel, manifest: Manifest, bank: NoiseBank,
             cfg: TrainConfig, mode: str = "enhanced",
             log_path=None, checkpoint_fn=None) -> RunResult:
    if mode not in ("enhanced", "baseline"):
        raise ValueError(f"pretrain mode must be enhanced or baseline, got {mode!r}")
    streams = _Streams.from_seed(cfg.seed)
    optimizer = Adam(model.parameters(), cfg.adam)
    state = PretrainState()
    log = _LossLog(log_path)
    trace: list[LossBreakdown] = []
    epoch = 0
    pairs: list[PairedUtterance] | None = None
    while state.step < cfg.total_steps:
        if pairs is None or cfg.remix_each_epoch:
            pairs = build_noisy_set(manifest, bank, list(cfg.snr_set),
                                    seed=streams.mix_seed(epoch),
                                    offset_policy=cfg.offset_policy)
        for idx in _epoch_batches(len(pairs), cfg.batch_size, streams.order):
            if state.step >= cfg.total_steps:
                break
            batch = [pairs[int(j)] for j in idx]
            try:
                bd = pretrain_step(batch, model, state, cfg, streams,
                                   optimizer, mode=mode)
            except (FloatingPointError, NonFiniteGradient) as exc:
                state.incidents.append(f"step {state.step}: {exc}")
                state.step += 1
                continue
            log.add(state.step, bd, state.gumbel.tau,
                    lr_at(state.step + 1, cfg.total_steps, cfg.lr_peak,
                          cfg.warmup_fraction))
            trace.append(bd)
            state.step += 1
            if (checkpoint_fn is not None and cfg.checkpoint_every
                    and state.step % cfg.checkpoint_every == 0
                    and state.step < cfg.total_steps):
                checkpoint_fn(model, state.step, streams.states())
        epoch += 1
    log.write()
    return RunResult(trace=trace, incidents=state.incidents,
                     forced_masks=state.forced_masks,
                     rng_states=streams.states())


# -- fine-tuning ----------------------------------------------------------------


def finetune(model: AsrModel, manifest: Manifest, bank: NoiseBank,
             cfg: TrainConfig, stream: str = "noisy",
             log_path=None) -> RunResult:
    """CTC training on labeled speech.  `stream` picks the noisy mixtures
    (default, re-mixed per epoch) or the clean originals (reference runs)."""
    if stream not in ("noisy", "clean"):
        raise ValueError(f"stream must be noisy or clean, got {stream!r}")
    streams = _Streams.from_seed(cfg.seed)
    optimizer = Adam(model.parameters(), cfg.adam)
    freeze_until = int(np.ceil(cfg.freeze_encoder_fraction * cfg.total_steps))
    rows = []
    incidents: list[str] = []
    trace: list[float] = []
    step = 0
    epoch = 0
    pairs: list[PairedUtterance] | None = None
    while step < cfg.total_steps:
        if pairs is None or (cfg.remix_each_epoch and stream == "noisy"):
            pairs = build_noisy_set(manifest, bank, list(cfg.snr_set),
                                    seed=streams.mix_seed(epoch),
                                    offset_policy=cfg.offset_policy)
        for idx in _epoch_batches(len(pairs), cfg.batch_size, streams.order):
            if step >= cfg.total_steps:
                break
            frozen = step < freeze_until
            losses = []
            lens = []
            for j in idx:
                pair = pairs[int(j)]
                wav = pair.noisy if stream == "noisy" else pair.clean
                target = model.vocab.encode(pair.transcript)
                logits = model.logits(wav.samples.astype(model.dtype),
                                      freeze_encoder=frozen)
                losses.append(ctc_loss(logits, target, blank=model.vocab.blank))
                lens.append(1)
            batch_loss = _weighted_mean(losses, lens)
            model.zero_grad()
            try:
                if not np.isfinite(batch_loss.data):
                    raise FloatingPointError("non-finite CTC loss")
                batch_loss.backward()
                clip_global_norm(model.parameters(), cfg.grad_clip)
                optimizer.step(lr_at(step + 1, cfg.total_steps, cfg.lr_peak,
                                     cfg.warmup_fraction))
            except (FloatingPointError, NonFiniteGradient) as exc:
                incidents.append(f"step {step}: {exc}")
                step += 1
                continue
            lr = lr_at(step + 1, cfg.total_steps, cfg.lr_peak, cfg.warmup_fraction)
            rows.append((step, float(batch_loss.data), lr, int(frozen)))
            trace.append(float(batch_loss.data))
            step += 1
        epoch += 1
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        with open(log_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("step", "ctc_loss", "lr", "encoder_frozen"))
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    return RunResult(trace=trace, incidents=incidents,
                     rng_states=streams.states())
