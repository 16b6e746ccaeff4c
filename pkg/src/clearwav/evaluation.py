"""Greedy CTC decoding, WER scoring over noise-type x SNR grids, and the
representation-similarity diagnostic against a clean-trained reference.

Cosine similarity is reported over its true range [-1, 1]; values are
never clamped.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import MixSpec, OffsetPolicy, Waveform, load_wav, mix_at_snr
from .corpus import Manifest, NoiseBank
from .model import AsrModel
from .rng import RngStream
from .tensor import Tensor, no_grad
from .vocab import CharVocab

__all__ = [
    "greedy_decode",
    "wer",
    "WerCounts",
    "WerReport",
    "SimilarityReport",
    "EvalCell",
    "build_eval_grid",
    "evaluate_wer",
    "representation_similarity",
    "emit_reports",
]

CLEAN_LABEL = "clean"


def greedy_decode(logits, vocab: CharVocab) -> str:
    """Per-frame argmax -> collapse repeats -> drop blanks -> characters."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if not np.all(np.isfinite(data)):
        raise ValueError("logits must be finite")
    ids = np.argmax(data, axis=-1)
    out = []
    prev = -1
    for i in ids:
        if i != prev and i != vocab.blank:
            out.append(int(i))
        prev = i
    return vocab.decode(out)


@dataclass
class WerCounts:
    substitutions: int
    deletions: int
    insertions: int
    n_ref_words: int

    @property
    def wer(self) -> float:
        return (self.substitutions + self.deletions + self.insertions) / self.n_ref_words

    def __add__(self, other: "WerCounts") -> "WerCounts":
        return WerCounts(self.substitutions + other.substitutions,
                         self.deletions + other.deletions,
                         self.insertions + other.insertions,
                         self.n_ref_words + other.n_ref_words)


def _tokenize(text) -> list[str]:
    if isinstance(text, str):
        return text.strip().split(" ") if text.strip() else []
    return list(text)


def wer(ref, hyp) -> WerCounts:
    """Minimal-edit word alignment with unit costs.  Ties resolve toward
    substitution, then deletion, then insertion (the rate is unaffected)."""
    r, h = _tokenize(ref), _tokenize(hyp)
    if not r:
        raise ValueError("reference is empty; WER undefined")
    nr, nh = len(r), len(h)
    # dp[i][j] = (cost, S, D, I) for r[:i] vs h[:j]
    dp = [[None] * (nh + 1) for _ in range(nr + 1)]
    dp[0][0] = (0, 0, 0, 0)
    for i in range(1, nr + 1):
        c = dp[i - 1][0]
        dp[i][0] = (c[0] + 1, c[1], c[2] + 1, c[3])       # deletions
    for j in range(1, nh + 1):
        c = dp[0][j - 1]
        dp[0][j] = (c[0] + 1, c[1], c[2], c[3] + 1)       # insertions
    for i in range(1, nr + 1):
        for j in range(1, nh + 1):
            if r[i - 1] == h[j - 1]:
                dp[i][j] = dp[i - 1][j - 1]
                continue
            sub = dp[i - 1][j - 1]
            dele = dp[i - 1][j]
            ins = dp[i][j - 1]
            best = min(sub[0], dele[0], ins[0])
            if sub[0] == best:
                dp[i][j] = (best + 1, sub[1] + 1, sub[2], sub[3])
            elif dele[0] == best:
                dp[i][j] = (best + 1, dele[1], dele[2] + 1, dele[3])
            else:
                dp[i][j] = (best + 1, ins[1], ins[2], ins[3] + 1)
    _, s, d, ins = dp[nr][nh]
    return WerCounts(s, d, ins, nr)


# -- evaluation grids ------------------------------------------------------------


@dataclass
class EvalCell:
    noise_type: str            # CLEAN_LABEL for the unmixed row
    snr_db: float | None
    noisy: list[Waveform]
    clean: list[Waveform]
    transcripts: list[str]


def build_eval_grid(manifest: Manifest, bank: NoiseBank,
                    snr_set: list[float], seed: int) -> list[EvalCell]:
    """One cell per (noise_type, snr) plus a clean cell.  Every utterance
    appears in every cell; the noise stream is drawn per utterance."""
    cleans = [load_wav(e.audio_path) for e in manifest.entries]
    transcripts = [e.transcript for e in manifest.entries]
    cells = [EvalCell(CLEAN_LABEL, None, cleans, cleans, transcripts)]
    kinds = sorted({bank.noise_type(i) for i in bank.streams})
    for kind in kinds:
        ids = bank.ids_for_type(kind)
        for snr in snr_set:
            draw = RngStream(seed).derive(f"eval:{kind}:{snr}")
            noisy = []
            for clean in cleans:
                noise_id = ids[int(draw.integers(0, len(ids)))]
                spec = MixSpec(snr_db=float(snr), noise_id=noise_id,
                               seed=int(draw.integers(0, 2**63)),
                               offset_policy=OffsetPolicy.RANDOM_START)
                noisy.append(mix_at_snr(clean, bank.streams[noise_id], spec).noisy)
            cells.append(EvalCell(kind, float(snr), noisy, cleans, transcripts))
    return cells


@dataclass
class WerRow:
    noise_type: str
    snr_db: float | None
    n_utt: int
    counts: WerCounts


@dataclass
class WerReport:
    rows: list[WerRow] = field(default_factory=list)

    def row(self, noise_type: str, snr_db: float | None) -> WerRow:
        for r in self.rows:
            if r.noise_type == noise_type and r.snr_db == snr_db:
                return r
        raise KeyError((noise_type, snr_db))


def evaluate_wer(model: AsrModel, cells: list[EvalCell]) -> WerReport:
    report = WerReport()
    for cell in cells:
        counts = WerCounts(0, 0, 0, 0)
        for wav, ref in zip(cell.noisy, cell.transcripts):
            with no_grad():
                logits = model.logits(wav.samples.astype(model.dtype))
            hyp = greedy_decode(logits, model.vocab)
            counts = counts + wer(ref, hyp)
        report.rows.append(WerRow(cell.noise_type, cell.snr_db,
                                  len(cell.noisy), counts))
    return report


@dataclass
class SimilarityRow:
    model_id: str
    noise_type: str
    snr_db: float | None
    n_frames: int
    mean_cos: float
    n_excluded: int = 0


@dataclass
class SimilarityReport:
    rows: list[SimilarityRow] = field(default_factory=list)


def _context_frames(model: AsrModel, wav: Waveform) -> np.ndarray:
    with no_grad():
        z = model.encoder.encode(wav.samples.astype(model.dtype))
        return model.context.forward(z).data


def representation_similarity(model_a: AsrModel, model_ref: AsrModel,
                              cells: list[EvalCell], model_id: str
                              ) -> SimilarityReport:
    """Frame-mean cosine between model_a on noisy inputs and the reference
    on the clean twins.  Zero-norm frames are excluded and counted."""
    report = SimilarityReport()
    for cell in cells:
        sims = []
        excluded = 0
        for noisy, clean in zip(cell.noisy, cell.clean):
            ca = _context_frames(model_a, noisy)
            cr = _context_frames(model_ref, clean)
            na = np.linalg.norm(ca, axis=1)
            nr = np.linalg.norm(cr, axis=1)
            ok = (na > 0) & (nr > 0)
            excluded += int((~ok).sum())
            sims.extend(((ca * cr).sum(axis=1)[ok] / (na[ok] * nr[ok])).tolist())
        report.rows.append(SimilarityRow(
            model_id=model_id, noise_type=cell.noise_type, snr_db=cell.snr_db,
            n_frames=len(sims), mean_cos=float(np.mean(sims)) if sims else float("nan"),
            n_excluded=excluded))
    return report


# -- report emission ---------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.10g}"


def _row_key(noise_type: str, snr_db) -> tuple:
    # clean first, then noise types alphabetically, SNRs ascending
    return (noise_type != CLEAN_LABEL, noise_type,
            snr_db if snr_db is not None else -np.inf)


def emit_reports(out_dir, wer_reports: dict[str, WerReport] | None = None,
                 similarity: SimilarityReport | None = None,
                 plots: bool = False) -> list[Path]:
    """Write CSVs (and optional SVG plots) with a stable row order; returns
    the created paths.  Emission is byte-deterministic for equal reports."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    created: list[Path] = []
    if wer_reports:
        path = out_dir / "wer.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("model_id", "noise_type", "snr_db", "n_utt",
                        "n_ref_words", "S", "D", "I", "wer"))
            for model_id in sorted(wer_reports):
                rows = sorted(wer_reports[model_id].rows,
                              key=lambda r: _row_key(r.noise_type, r.snr_db))
                for r in rows:
                    c = r.counts
                    w.writerow((model_id, r.noise_type, _fmt(r.snr_db),
                                _fmt(r.n_utt), _fmt(c.n_ref_words),
                                _fmt(c.substitutions), _fmt(c.deletions),
                                _fmt(c.insertions), _fmt(c.wer)))
        created.append(path)
        if plots:
            created.extend(_plot_wer(out_dir, wer_reports))
    if similarity is not None:
        path = out_dir / "similarity.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("model_id", "noise_type", "snr_db", "n_frames",
                        "mean_cos", "n_excluded"))
            rows = sorted(similarity.rows,
                          key=lambda r: (r.model_id,) + _row_key(r.noise_type, r.snr_db))
            for r in rows:
                w.writerow((r.model_id, r.noise_type, _fmt(r.snr_db),
                            _fmt(r.n_frames), _fmt(r.mean_cos), _fmt(r.n_excluded)))
        created.append(path)
        if plots:
            created.extend(_plot_similarity(out_dir, similarity))
    return created


def _mpl():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _plot_wer(out_dir: Path, reports: dict[str, WerReport]) -> list[Path]:
    plt = _mpl()
    kinds = sorted({r.noise_type for rep in reports.values() for r in rep.rows
                    if r.noise_type != CLEAN_LABEL})
    paths = []
    for kind in kinds:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for model_id in sorted(reports):
            rows = sorted((r for r in reports[model_id].rows if r.noise_type == kind),
                          key=lambda r: r.snr_db)
            ax.plot([r.snr_db for r in rows],
                    [100.0 * r.counts.wer for r in rows],
                    marker="o", label=model_id)
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel("WER (%)")
        ax.set_title(f"{kind} noise")
        ax.legend()
        path = out_dir / f"wer_{kind}.svg"
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths


def _plot_similarity(out_dir: Path, report: SimilarityReport) -> list[Path]:
    plt = _mpl()
    kinds = sorted({r.noise_type for r in report.rows if r.noise_type != CLEAN_LABEL})
    model_ids = sorted({r.model_id for r in report.rows})
    paths = []
    for kind in kinds:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for model_id in model_ids:
            rows = sorted((r for r in report.rows
                           if r.noise_type == kind and r.model_id == model_id),
                          key=lambda r: r.snr_db)
            ax.plot([r.snr_db for r in rows], [r.mean_cos for r in rows],
                    marker="o", label=model_id)
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel("mean cosine similarity")
        ax.set_title(f"{kind} noise")
        ax.legend()
        path = out_dir / f"similarity_{kind}.svg"
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths
