"""The desk-scale A/B/C experiment.

Per seed: synthesize train/test corpora, pretrain with clean targets
("enhanced") and with noisy targets ("baseline"), fine-tune those plus a
from-scratch model on noisy speech, fine-tune a from-scratch reference on
clean speech, then score WER over the noise-type x SNR grid and cosine
similarity of transformer outputs against the reference.

Mirrors, qualitatively: noisy-test WER ordering enhanced <= baseline <=
no-pretrain, a small clean-test gap between enhanced and baseline, and
representation similarity that rises with SNR and is highest for the
enhanced model.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import ToyCorpusConfig, synth_toy_corpus
from .encoder import EncoderConfig
from .evaluation import (SimilarityReport, WerReport, build_eval_grid,
                         emit_reports, evaluate_wer, representation_similarity)
from .losses import LossWeights
from .masking import MaskConfig
from .model import AsrModel, ModelConfig, PretrainModel, strip_and_head
from .quantizer import QuantizerConfig
from .training import TrainConfig, finetune, pretrain
from .transformer import ContextConfig
from .vocab import CharVocab

__all__ = ["DeskConfig", "run_seed", "run_experiment", "summarize"]

MODELS = ("enhanced", "baseline", "none")
REFERENCE = "reference"


@dataclass(frozen=True)
class DeskConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    n_train: int = 64
    n_test: int = 24
    alphabet_size: int = 6
    utterance_chars: tuple[int, int] = (3, 8)
    char_duration_ms: float = 80.0
    pretrain_steps: int = 200
    finetune_steps: int = 250
    batch_size: int = 8
    pretrain_lr: float = 5e-4
    finetune_lr: float = 3e-3
    distractors: int = 10
    train_snrs: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0)
    eval_snrs: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            encoder=EncoderConfig(channels=32),
            context=ContextConfig(layers=2, dim=32, heads=4, ffn_inner=64),
            quantizer=QuantizerConfig(groups=2, entries=8, entry_dim=8,
                                      in_dim=32, out_dim=32),
            mask=MaskConfig())

    def corpus_config(self, seed: int, n: int) -> ToyCorpusConfig:
        return ToyCorpusConfig(
            n_utterances=n, utterance_chars=self.utterance_chars,
            alphabet_size=self.alphabet_size,
            char_duration_ms=self.char_duration_ms, seed=seed)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(total_steps=self.pretrain_steps,
                           batch_size=self.batch_size, lr_peak=self.pretrain_lr,
                           seed=seed, snr_set=self.train_snrs,
                           weights=LossWeights(distractors=self.distractors))

    def ft_config(self, seed: int) -> TrainConfig:
        return TrainConfig(total_steps=self.finetune_steps,
                           batch_size=self.batch_size, lr_peak=self.finetune_lr,
                           seed=seed, snr_set=self.train_snrs)


@dataclass
class SeedResult:
    seed: int
    wer: dict[str, WerReport]
    similarity: SimilarityReport
    seconds: float = 0.0

    def wer_at(self, model: str, noise_type: str, snr) -> float:
        return self.wer[model].row(noise_type, snr).counts.wer

    def pooled_noisy_wer(self, model: str, snr: float) -> float:
        """WER over all noise types at one SNR (error counts pooled)."""
        rows = [r for r in self.wer[model].rows
                if r.noise_type != "clean" and r.snr_db == snr]
        counts = rows[0].counts
        for r in rows[1:]:
            counts = counts + r.counts
        return counts.wer

    def pooled_similarity(self, model: str, snr: float) -> float:
        rows = [r for r in self.similarity.rows
                if r.model_id == model and r.noise_type != "clean"
                and r.snr_db == snr]
        weights = np.array([r.n_frames for r in rows], dtype=float)
        vals = np.array([r.mean_cos for r in rows])
        return float((vals * weights).sum() / weights.sum())


def run_seed(cfg: DeskConfig, seed: int, work_dir: Path,
             verbose: bool = False) -> SeedResult:
    t0 = time.time()
    work_dir.mkdir(parents=True, exist_ok=True)
    train_manifest, train_bank = synth_toy_corpus(
        cfg.corpus_config(seed=1000 + seed, n=cfg.n_train), work_dir / "train")
    test_manifest, test_bank = synth_toy_corpus(
        cfg.corpus_config(seed=2000 + seed, n=cfg.n_test), work_dir / "test")

    def log(msg):
        if verbose:
            print(f"[seed {seed} {time.time() - t0:6.1f}s] {msg}", flush=True)

    asr_models: dict[str, AsrModel] = {}
    for mode in ("enhanced", "baseline"):
        model = PretrainModel(cfg.model_config(), seed=seed)
        result = pretrain(model, train_manifest, train_bank,
                          cfg.train_config(seed), mode=mode,
                          log_path=work_dir / f"pretrain_{mode}.csv")
        log(f"pretrained {mode}: total {result.trace[-1].total:.3f}")
        asr_models[mode] = strip_and_head(model, CharVocab())
    asr_models["none"] = strip_and_head(PretrainModel(cfg.model_config(), seed=seed),
                                        CharVocab())
    # the reference is an independently trained clean-data model; give it a
    # different init so similarity to it is not an artifact of shared weights
    asr_models[REFERENCE] = strip_and_head(
        PretrainModel(cfg.model_config(), seed=seed + 500), CharVocab())

    for name, model in asr_models.items():
        stream = "clean" if name == REFERENCE else "noisy"
        result = finetune(model, train_manifest, train_bank, cfg.ft_config(seed),
                          stream=stream,
                          log_path=work_dir / f"finetune_{name}.csv")
        log(f"fine-tuned {name} ({stream}): CTC {result.trace[-1]:.3f}")

    grid = build_eval_grid(test_manifest, test_bank, list(cfg.eval_snrs),
                           seed=3000 + seed)
    wer_reports = {name: evaluate_wer(model, grid)
                   for name, model in asr_models.items()}
    log("WER grid done")
    similarity = SimilarityReport()
    for name in MODELS:
        rep = representation_similarity(asr_models[name], asr_models[REFERENCE],
                                        grid, model_id=name)
        similarity.rows.extend(rep.rows)
    log("similarity done")
    emit_reports(work_dir, wer_reports=wer_reports, similarity=similarity)
    return SeedResult(seed=seed, wer=wer_reports, similarity=similarity,
                      seconds=time.time() - t0)


def summarize(cfg: DeskConfig, results: list[SeedResult]) -> dict:
    """Medians across seeds plus the qualitative-trend checks."""
    med = lambda xs: float(np.median(xs))
    noisy0 = {m: med([r.pooled_noisy_wer(m, 0.0) for r in results]) for m in MODELS}
    clean = {m: med([r.wer_at(m, "clean", None) for r in results]) for m in MODELS}
    clean_gap = med([r.wer_at("enhanced", "clean", None)
                     - r.wer_at("baseline", "clean", None) for r in results])

    sim_median = {m: {snr: med([r.pooled_similarity(m, snr) for r in results])
                      for snr in cfg.eval_snrs} for m in MODELS}
    monotone = {}
    for m in MODELS:
        curve = [sim_median[m][snr] for snr in cfg.eval_snrs]
        monotone[m] = all(b >= a - 2e-3 for a, b in zip(curve, curve[1:]))
    enhanced_wins = 0
    for r in results:
        if all(r.pooled_similarity("enhanced", snr)
               >= r.pooled_similarity("baseline", snr) for snr in cfg.eval_snrs):
            enhanced_wins += 1

    return {
        "seeds": [r.seed for r in results],
        "seconds_per_seed": [round(r.seconds, 1) for r in results],
        "median_noisy_wer_0db": noisy0,
        "median_clean_wer": clean,
        "median_clean_gap_enhanced_minus_baseline": clean_gap,
        "median_similarity": {m: {str(k): v for k, v in d.items()}
                              for m, d in sim_median.items()},
        "similarity_monotone_in_snr": monotone,
        "enhanced_similarity_wins_all_snrs_n_seeds": enhanced_wins,
        "checks": {
            "wer_ordering_enhanced_le_baseline_le_none":
                noisy0["enhanced"] <= noisy0["baseline"] <= noisy0["none"],
            "clean_gap_at_most_5_points": clean_gap <= 0.05,
            "similarity_monotone_all_models": all(monotone.values()),
            "enhanced_similarity_wins_in_4_of_5_seeds":
                enhanced_wins >= min(4, len(results)),
        },
    }


def run_experiment(cfg: DeskConfig, out_dir, verbose: bool = False) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = [run_seed(cfg, seed, out_dir / f"seed{seed}", verbose=verbose)
               for seed in cfg.seeds]
    summary = summarize(cfg, results)
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary
