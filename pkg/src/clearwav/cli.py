"""Command-line entry point.

Subcommands: synth-data, mix, pretrain, finetune, eval, analyze.  Every
run writes its outputs plus a resolved-config snapshot under
out_dir/run_id/ and never mutates its inputs.  Exit codes: 0 success,
2 config validation failure (with a field-path diagnostic), 1 runtime
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .audio import save_wav
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_run_config, resolved_to_dict
from .corpus import (Manifest, ManifestEntry, NoiseBank, build_noisy_set,
                     synth_toy_corpus)
from .evaluation import (SimilarityReport, build_eval_grid, emit_reports,
                         evaluate_wer, representation_similarity)
from .model import (AsrModel, PretrainModel, model_config_from_dict,
                    model_config_to_dict, strip_and_head)
from .quantizer import GumbelState
from .rng import RngStream
from .tensor import no_grad
from .training import PRETRAIN_MODES, finetune, pretrain
from .vocab import CharVocab


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_run_config(args.config, overrides=None).with_seed(args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clearwav",
        description="Noise-robust self-supervised speech pretraining, desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, default_run_id):
        p.add_argument("--config", type=Path, default=None,
                       help="JSON config; omitted sections use desk defaults")
        p.add_argument("--seed", type=int, default=None,
                       help="override every per-run seed in the config")
        p.add_argument("--out-dir", type=Path, default=Path("runs"))
        p.add_argument("--run-id", default=default_run_id)

    p = sub.add_parser("synth-data", help="synthesize the toy corpus and noise bank")
    common(p, "synth")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("mix", help="write noisy mixtures and metadata for a corpus")
    common(p, "mix")
    p.add_argument("--data", type=Path, required=True,
                   help="directory produced by synth-data")
    p.add_argument("--snr-set", default=None,
                   help="comma-separated dB values (default: pretrain snr_set)")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("pretrain", help="self-supervised pretraining")
    common(p, None)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--mode", choices=PRETRAIN_MODES, default="enhanced")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="CTC fine-tuning from a pretrain checkpoint")
    common(p, None)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--init", type=Path, required=True,
                   help="pretrain checkpoint (use mode 'none' output for no pretraining)")
    p.add_argument("--stream", choices=("noisy", "clean"), default="noisy")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="decode a test corpus and report WER")
    common(p, "eval")
    p.add_argument("--data", type=Path, required=True, help="test corpus directory")
    p.add_argument("--checkpoint", type=Path, required=True,
                   help="finetune checkpoint to evaluate")
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="representation similarity and codebook usage")
    common(p, "analyze")
    p.add_argument("--data", type=Path, required=True, help="test corpus directory")
    p.add_argument("--models", default=None,
                   help="comma-separated finetune checkpoints to compare")
    p.add_argument("--ref", type=Path, default=None,
                   help="clean-trained reference checkpoint")
    p.add_argument("--codebook", type=Path, default=None,
                   help="pretrain checkpoint for a codebook utilization report")
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_analyze)
    return parser


def _run_dir(args, cfg: RunConfig, default: str) -> Path:
    run_id = args.run_id or default
    out = Path(args.out_dir) / run_id
    out.mkdir(parents=True, exist_ok=True)
    snapshot = dict(resolved_to_dict(cfg))
    snapshot["command"] = args.command
    with open(out / "config.json", "w") as f:
        json.dump(snapshot, f, indent=2, sort_keys=True)
        f.write("\n")
    return out


def _load_corpus(data_dir: Path) -> tuple[Manifest, NoiseBank]:
    manifest_path = data_dir / "manifest.jsonl"
    noise_path = data_dir / "noise_manifest.jsonl"
    if not manifest_path.exists():
        raise ConfigError("data", f"no manifest.jsonl under {data_dir}")
    if not noise_path.exists():
        raise ConfigError("data", f"no noise_manifest.jsonl under {data_dir}")
    return Manifest.load(manifest_path), NoiseBank.load(noise_path)


# -- subcommands -----------------------------------------------------------------


def cmd_synth_data(args, cfg: RunConfig) -> int:
    out = _run_dir(args, cfg, "synth")
    manifest, bank = synth_toy_corpus(cfg.data, out)
    print(f"wrote {len(manifest.entries)} utterances and "
          f"{len(bank.streams)} noise streams under {out}")
    return 0


def cmd_mix(args, cfg: RunConfig) -> int:
    out = _run_dir(args, cfg, "mix")
    manifest, bank = _load_corpus(args.data)
    snrs = ([float(s) for s in args.snr_set.split(",")] if args.snr_set
            else list(cfg.pretrain.snr_set))
    pairs = build_noisy_set(manifest, bank, snrs, seed=cfg.pretrain.seed,
                            offset_policy=cfg.pretrain.offset_policy)
    entries = []
    with open(out / "mix_metadata.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("utt_id", "noise_id", "snr_db", "gain", "clip_count"))
        for pair in pairs:
            rel = f"noisy/{pair.utt_id}.wav"
            clip_count = save_wav(out / rel, pair.noisy)
            w.writerow((pair.utt_id, pair.noise_id, f"{pair.snr_db:.10g}",
                        f"{pair.gain:.10g}", clip_count))
            entries.append(ManifestEntry(str(out / rel), pair.transcript,
                                         len(pair.noisy)))
    Manifest(entries).save(out / "noisy_manifest.jsonl")
    print(f"wrote {len(pairs)} mixtures under {out}")
    return 0


def cmd_pretrain(args, cfg: RunConfig) -> int:
    out = _run_dir(args, cfg, f"pretrain-{args.mode}-s{cfg.pretrain.seed}")
    model = PretrainModel(cfg.model, seed=cfg.pretrain.seed)
    header_cfg = {"model": model_config_to_dict(cfg.model),
                  "train": json.loads(json.dumps(resolved_to_dict(cfg)["pretrain"])),
                  "mode": args.mode}
    ckpt_path = out / "pretrain.ckpt"
    if args.mode == "none":
        save_checkpoint(ckpt_path, "pretrain", header_cfg, 0,
                        {}, model.parameters())
        print(f"wrote untrained init checkpoint {ckpt_path}")
        return 0
    manifest, bank = _load_corpus(args.data)

    def checkpoint_fn(m, step, rng_states):
        save_checkpoint(out / f"pretrain_step{step:06d}.ckpt", "pretrain",
                        header_cfg, step, rng_states, m.parameters())

    result = pretrain(model, manifest, bank, cfg.pretrain, mode=args.mode,
                      log_path=out / "pretrain_log.csv",
                      checkpoint_fn=checkpoint_fn)
    save_checkpoint(ckpt_path, "pretrain", header_cfg, cfg.pretrain.total_steps,
                    result.rng_states, model.parameters())
    if result.incidents:
        (out / "incidents.log").write_text("\n".join(result.incidents) + "\n")
    last = result.trace[-1] if result.trace else None
    print(f"pretrained {args.mode} for {cfg.pretrain.total_steps} steps; "
          f"final total loss {last.total:.4f}" if last else "no steps ran")
    print(f"checkpoint: {ckpt_path}")
    return 0


def _restore_pretrained(path: Path) -> tuple[PretrainModel, str]:
    ck = load_checkpoint(path)
    if ck.kind != "pretrain":
        raise ValueError(f"{path} is a {ck.kind!r} checkpoint, expected pretrain")
    model = PretrainModel(model_config_from_dict(ck.config["model"]), seed=0)
    ck.restore_into(model.parameters())
    return model, ck.config.get("mode", "unknown")


def _restore_asr(path: Path) -> AsrModel:
    ck = load_checkpoint(path)
    if ck.kind != "finetune":
        raise ValueError(f"{path} is a {ck.kind!r} checkpoint, expected finetune")
    model = AsrModel(model_config_from_dict(ck.config["model"]), seed=0,
                     vocab=CharVocab())
    ck.restore_into(model.parameters())
    return model


def cmd_finetune(args, cfg: RunConfig) -> int:
    pre_model, mode = _restore_pretrained(args.init)
    out = _run_dir(args, cfg, f"finetune-{mode}-s{cfg.finetune.seed}")
    manifest, bank = _load_corpus(args.data)
    model = strip_and_head(pre_model, CharVocab())
    result = finetune(model, manifest, bank, cfg.finetune, stream=args.stream,
                      log_path=out / "finetune_log.csv")
    header_cfg = {"model": model_config_to_dict(model.cfg),
                  "train": json.loads(json.dumps(resolved_to_dict(cfg)["finetune"])),
                  "pretrain_mode": mode, "stream": args.stream}
    ckpt_path = out / "finetune.ckpt"
    save_checkpoint(ckpt_path, "finetune", header_cfg, cfg.finetune.total_steps,
                    result.rng_states, model.parameters())
    if result.incidents:
        (out / "incidents.log").write_text("\n".join(result.incidents) + "\n")
    print(f"fine-tuned ({args.stream} stream) for {cfg.finetune.total_steps} steps; "
          f"final CTC {result.trace[-1]:.4f}" if result.trace else "no steps ran")
    print(f"checkpoint: {ckpt_path}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    model = _restore_asr(args.checkpoint)
    out = _run_dir(args, cfg, "eval")
    manifest, bank = _load_corpus(args.data)
    grid = build_eval_grid(manifest, bank, list(cfg.eval_snr_set), seed=cfg.eval_seed)
    report = evaluate_wer(model, grid)
    emit_reports(out, wer_reports={args.checkpoint.stem: report}, plots=args.plots)
    clean = report.row("clean", None)
    print(f"clean WER {100 * clean.counts.wer:.1f}% over {clean.n_utt} utterances")
    print(f"report: {out / 'wer.csv'}")
    return 0


def cmd_analyze(args, cfg: RunConfig) -> int:
    out = _run_dir(args, cfg, "analyze")
    manifest, bank = _load_corpus(args.data)
    wrote_any = False
    if args.models:
        if args.ref is None:
            raise ConfigError("analyze.ref", "required when --models is given")
        ref = _restore_asr(args.ref)
        grid = build_eval_grid(manifest, bank, list(cfg.eval_snr_set),
                               seed=cfg.eval_seed)
        combined = SimilarityReport()
        for spec in args.models.split(","):
            path = Path(spec)
            rep = representation_similarity(_restore_asr(path), ref, grid,
                                            model_id=path.stem)
            combined.rows.extend(rep.rows)
        emit_reports(out, similarity=combined, plots=args.plots)
        print(f"similarity report: {out / 'similarity.csv'}")
        wrote_any = True
    if args.codebook:
        _codebook_report(args.codebook, manifest, out, cfg)
        print(f"codebook report: {out / 'codebook_usage.csv'}")
        wrote_any = True
    if not wrote_any:
        raise ConfigError("analyze", "nothing to do: pass --models/--ref or --codebook")
    return 0


def _codebook_report(ckpt_path: Path, manifest: Manifest, out: Path,
                     cfg: RunConfig) -> None:
    from .audio import load_wav

    model, _ = _restore_pretrained(ckpt_path)
    state = GumbelState(step=load_checkpoint(ckpt_path).step)
    rng = RngStream(cfg.eval_seed).derive("codebook_report")
    logits_list, selections = [], []
    with no_grad():
        for entry in manifest.entries:
            wav = load_wav(entry.audio_path)
            z = model.encoder.encode(wav.samples.astype(model.dtype))
            logits = model.quantizer.logits(z)
            noise = rng.gumbel(logits.shape)
            logits_list.append(logits)
            selections.append(np.argmax(logits.data + noise, axis=-1))
        usage = model.quantizer.usage(logits_list, selections, state, rng)
    with open(out / "codebook_usage.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("group", "entry", "mean_probability", "hard_count"))
        g_count, v_count = usage.p_bar.shape
        for g in range(g_count):
            for v in range(v_count):
                w.writerow((g, v, f"{float(usage.p_bar.data[g, v]):.10g}",
                            int(usage.hard_counts[g, v])))


if __name__ == "__main__":
    sys.exit(main())
