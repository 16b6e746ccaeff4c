"""Deterministic toy speech corpus, noise bank, manifests, and noisy pairing.

Toy "speech" maps each character to a pure tone (5 ms raised-cosine
on/off ramps, spaces to silence) so that the character sequence is
recoverable from audio and CTC fine-tuning has a learnable target at desk
scale.  Everything is a pure function of (config, seed).
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .audio import (SAMPLE_RATE, MixResult, MixSpec, OffsetPolicy, Waveform,
                    load_wav, mix_at_snr, save_wav)
from .rng import RngStream

__all__ = [
    "ManifestEntry",
    "Manifest",
    "ToyCorpusConfig",
    "NoiseBank",
    "PairedUtterance",
    "synth_toy_corpus",
    "build_noisy_set",
    "char_frequency",
]

TRANSCRIPT_CHARS = set(string.ascii_uppercase) | {" ", "'"}

NOISE_TYPES = ("white", "lowpass", "am_tone")

TONE_AMPLITUDE = 0.3
RAMP_MS = 5.0


@dataclass
class ManifestEntry:
    audio_path: str
    transcript: str
    duration_samples: int

    def __post_init__(self):
        bad = set(self.transcript) - TRANSCRIPT_CHARS
        if bad:
            raise ValueError(f"transcript contains unsupported symbols: {sorted(bad)}")


@dataclass
class Manifest:
    entries: list[ManifestEntry]

    def save(self, path) -> None:
        """Write JSONL; audio paths are stored relative to the manifest
        directory when possible so a corpus is relocatable."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            for e in self.entries:
                p = Path(e.audio_path)
                if p.is_absolute():
                    try:
                        p = p.relative_to(path.parent)
                    except ValueError:
                        pass
                f.write(json.dumps({"audio_path": str(p),
                                    "transcript": e.transcript,
                                    "duration_samples": e.duration_samples},
                                   sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        base = Path(path).parent
        entries = []
        with open(path) as f:
            for line in f:
                obj = json.loads(line)
                p = Path(obj["audio_path"])
                if not p.is_absolute():
                    p = base / p
                if not p.exists():
                    raise FileNotFoundError(f"manifest references missing audio: {p}")
                entries.append(ManifestEntry(str(p), obj["transcript"],
                                             int(obj["duration_samples"])))
        return cls(entries)


@dataclass
class ToyCorpusConfig:
    n_utterances: int = 64
    utterance_chars: tuple[int, int] = (4, 10)  # letters per utterance (excl. spaces)
    alphabet_size: int = 6
    tone_base_hz: float = 300.0
    char_duration_ms: float = 100.0
    noise_types: tuple[str, ...] = NOISE_TYPES
    noise_streams_per_type: int = 2
    noise_duration_s: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.alphabet_size <= 26:
            raise ValueError(f"alphabet_size must be in [1, 26], got {self.alphabet_size}")
        unknown = set(self.noise_types) - set(NOISE_TYPES)
        if unknown:
            raise ValueError(f"unknown noise types: {sorted(unknown)}")
        top = char_frequency(self.alphabet_size - 1, self.tone_base_hz)
        if top >= SAMPLE_RATE / 2:
            raise ValueError(f"highest character tone {top:.0f} Hz is at or above Nyquist")

    @property
    def alphabet(self) -> str:
        return string.ascii_uppercase[: self.alphabet_size]


def char_frequency(index: int, base_hz: float) -> float:
    return base_hz * (1.0 + 0.25 * index)


def _ramp_envelope(n: int) -> np.ndarray:
    env = np.ones(n)
    r = min(int(round(RAMP_MS * SAMPLE_RATE / 1000.0)), n // 2)
    if r > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(r) / r))
        env[:r] = ramp
        env[-r:] = ramp[::-1]
    return env


def render_transcript(transcript: str, cfg: ToyCorpusConfig) -> Waveform:
    """Concatenate per-character tones; spaces render as silence."""
    n_char = int(round(cfg.char_duration_ms * SAMPLE_RATE / 1000.0))
    t = np.arange(n_char) / SAMPLE_RATE
    env = _ramp_envelope(n_char)
    pieces = []
    for ch in transcript:
        if ch == " ":
            pieces.append(np.zeros(n_char))
            continue
        freq = char_frequency(cfg.alphabet.index(ch), cfg.tone_base_hz)
        pieces.append(TONE_AMPLITUDE * env * np.sin(2.0 * np.pi * freq * t))
    return Waveform(np.concatenate(pieces))


def _sample_transcript(cfg: ToyCorpusConfig, rng: RngStream) -> str:
    lo, hi = cfg.utterance_chars
    n_letters = int(rng.integers(lo, hi + 1))
    letters = [cfg.alphabet[i] for i in rng.integers(0, cfg.alphabet_size, size=n_letters)]
    # split into words of 2-4 letters so WER has word structure to count
    words, i = [], 0
    while i < n_letters:
        k = int(rng.integers(2, 5))
        words.append("".join(letters[i : i + k]))
        i += k
    return " ".join(words)


# -- noise bank ----------------------------------------------------------------


def _synth_noise(kind: str, n: int, rng: RngStream) -> np.ndarray:
    if kind == "white":
        x = rng.normal(n)
    elif kind == "lowpass":
        x = np.convolve(rng.normal(n + 15), np.ones(16) / 16.0, mode="valid")
    elif kind == "am_tone":
        carrier_hz = float(rng.uniform(low=900.0, high=3500.0))
        mod_hz = float(rng.uniform(low=2.0, high=8.0))
        t = np.arange(n) / SAMPLE_RATE
        x = np.sin(2.0 * np.pi * carrier_hz * t) * (0.55 + 0.45 * np.sin(2.0 * np.pi * mod_hz * t))
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return 0.1 * x / np.sqrt(np.mean(x * x))


@dataclass
class NoiseBank:
    streams: dict[str, Waveform] = field(default_factory=dict)

    def noise_type(self, noise_id: str) -> str:
        return noise_id.rsplit("_", 1)[0]

    def ids_for_type(self, kind: str) -> list[str]:
        return sorted(i for i in self.streams if self.noise_type(i) == kind)

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        entries = []
        for noise_id in sorted(self.streams):
            rel = f"noise/{noise_id}.wav"
            save_wav(out_dir / rel, self.streams[noise_id])
            entries.append({"noise_id": noise_id, "audio_path": rel,
                            "duration_samples": len(self.streams[noise_id])})
        with open(out_dir / "noise_manifest.jsonl", "w") as f:
            for e in entries:
                f.write(json.dumps(e, sort_keys=True) + "\n")

    @classmethod
    def load(cls, manifest_path) -> "NoiseBank":
        base = Path(manifest_path).parent
        streams = {}
        with open(manifest_path) as f:
            for line in f:
                obj = json.loads(line)
                streams[obj["noise_id"]] = load_wav(base / obj["audio_path"])
        return cls(streams)


def synth_toy_corpus(cfg: ToyCorpusConfig, out_dir) -> tuple[Manifest, NoiseBank]:
    """Write clean utterances, manifest, and noise bank under `out_dir`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text_rng = RngStream(cfg.seed).derive("transcripts")
    entries = []
    for i in range(cfg.n_utterances):
        transcript = _sample_transcript(cfg, text_rng)
        wav = render_transcript(transcript, cfg)
        rel = f"clean/utt_{i:04d}.wav"
        save_wav(out_dir / rel, wav)
        entries.append(ManifestEntry(str(out_dir / rel), transcript, len(wav)))
    manifest = Manifest(entries)
    manifest.save(out_dir / "manifest.jsonl")

    n = int(round(cfg.noise_duration_s * SAMPLE_RATE))
    bank = NoiseBank()
    for kind in cfg.noise_types:
        for k in range(max(cfg.noise_streams_per_type, 2)):
            stream_rng = RngStream(cfg.seed).derive(f"noise:{kind}:{k}")
            bank.streams[f"{kind}_{k}"] = Waveform(_synth_noise(kind, n, stream_rng))
    bank.save(out_dir)
    return manifest, bank


# -- pairing -------------------------------------------------------------------


@lru_cache(maxsize=1024)
def _cached_wav(path: str) -> Waveform:
    # corpus audio is immutable once synthesized; per-epoch re-mixing
    # re-reads every clean file otherwise
    return load_wav(path)


@dataclass
class PairedUtterance:
    utt_id: str
    transcript: str
    clean: Waveform
    noisy: Waveform
    snr_db: float
    noise_id: str
    gain: float
    offset: int


def build_noisy_set(manifest: Manifest,
                    bank: NoiseBank,
                    snr_set: list[float],
                    seed: int,
                    offset_policy: OffsetPolicy = OffsetPolicy.RANDOM_START,
                    noise_ids: list[str] | None = None) -> list[PairedUtterance]:
    """One (clean, noisy) pair per utterance; noise stream and SNR drawn
    uniformly from the configured sets.  The clean twin of every noisy clip
    stays recoverable through (noise_id, gain, offset)."""
    if not snr_set:
        raise ValueError("snr_set must be non-empty")
    ids = sorted(noise_ids if noise_ids is not None else bank.streams)
    if not ids:
        raise ValueError("noise bank is empty")
    draw = RngStream(seed).derive("pairing")
    pairs = []
    for i, entry in enumerate(manifest.entries):
        clean = _cached_wav(entry.audio_path)
        noise_id = ids[int(draw.integers(0, len(ids)))]
        snr_db = float(snr_set[int(draw.integers(0, len(snr_set)))])
        spec = MixSpec(snr_db=snr_db, noise_id=noise_id,
                       seed=int(draw.integers(0, 2**63)), offset_policy=offset_policy)
        mix = mix_at_snr(clean, bank.streams[noise_id], spec)
        pairs.append(PairedUtterance(
            utt_id=f"utt_{i:04d}", transcript=entry.transcript, clean=clean,
            noisy=mix.noisy, snr_db=snr_db, noise_id=noise_id,
            gain=mix.gain, offset=mix.offset))
    return pairs
