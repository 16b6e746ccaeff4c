"""Waveform container, 16-bit mono WAV I/O, and SNR-exact noise mixing."""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .rng import RngStream

__all__ = [
    "SAMPLE_RATE",
    "Waveform",
    "MixSpec",
    "MixResult",
    "OffsetPolicy",
    "load_wav",
    "save_wav",
    "mean_power",
    "mix_at_snr",
]

SAMPLE_RATE = 16_000


@dataclass
class Waveform:
    """Mono audio at 16 kHz.  Samples are nominally in [-1, 1]; mixtures may
    exceed that range in memory and are clamped only at save time."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


class OffsetPolicy(str, Enum):
    RANDOM_START = "random_start"
    FIXED_START = "fixed_start"


@dataclass
class MixSpec:
    snr_db: float
    noise_id: str
    seed: int
    offset_policy: OffsetPolicy = OffsetPolicy.RANDOM_START

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise ValueError(f"snr_db must be finite, got {self.snr_db}")
        self.offset_policy = OffsetPolicy(self.offset_policy)


@dataclass
class MixResult:
    noisy: Waveform
    gain: float
    noise_id: str
    snr_db: float
    offset: int
    noise_segment: np.ndarray = field(repr=False)


def load_wav(path) -> Waveform:
    """Read a RIFF/WAVE file; must be mono, 16-bit PCM, 16 kHz."""
    with wave.open(str(path), "rb") as wf:
        n_channels = wf.getnchannels()
        if n_channels != 1:
            raise ValueError(f"{path}: expected mono audio, got channels={n_channels}")
        rate = wf.getframerate()
        if rate != SAMPLE_RATE:
            raise ValueError(f"{path}: expected {SAMPLE_RATE} Hz, got rate={rate}")
        width = wf.getsampwidth()
        if width != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got sample width {width} bytes")
        raw = wf.readframes(wf.getnframes())
    codes = np.frombuffer(raw, dtype="<i2")
    return Waveform(codes.astype(np.float64) / 32768.0)


def save_wav(path, w: Waveform) -> int:
    """Write 16-bit PCM; clamps out-of-range samples and returns the clip count."""
    scaled = np.round(w.samples * 32768.0)
    n_clipped = int(np.sum((scaled < -32768) | (scaled > 32767)))
    codes = np.clip(scaled, -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(SAMPLE_RATE)
        wf.writeframes(codes.tobytes())
    return n_clipped


def mean_power(w: Waveform) -> float:
    """Average of squared samples, (1/N) sum x^2."""
    if len(w) == 0:
        raise ValueError("mean_power of an empty waveform")
    return float(np.mean(w.samples * w.samples))


def _noise_segment(noise: np.ndarray, n: int, offset: int) -> np.ndarray:
    """Length-n view into the noise stream starting at `offset`, looping
    (wrapping) when the stream is shorter than requested."""
    if len(noise) >= offset + n:
        return noise[offset : offset + n].copy()
    idx = (offset + np.arange(n)) % len(noise)
    return noise[idx]


def mix_at_snr(clean: Waveform, noise: Waveform, spec: MixSpec) -> MixResult:
    """clean + g * noise_segment with g chosen so the pair sits exactly at
    spec.snr_db.  The mixture is not re-normalized; clipping is handled at
    save time only."""
    p_clean = mean_power(clean)
    if p_clean <= 0.0:
        raise ValueError("clean waveform is silent (zero power)")
    n = len(clean)
    if spec.offset_policy is OffsetPolicy.FIXED_START:
        offset = 0
    else:
        rng = RngStream(spec.seed)
        limit = len(noise) - n if len(noise) >= n else len(noise)
        offset = int(rng.integers(0, max(limit, 0) + 1)) if limit > 0 else 0
    segment = _noise_segment(noise.samples, n, offset)
    p_seg = float(np.mean(segment * segment))
    if p_seg <= 0.0:
        raise ValueError(f"noise {spec.noise_id!r} is silent over the selected segment")
    gain = float(np.sqrt(p_clean / (p_seg * 10.0 ** (spec.snr_db / 10.0))))
    noisy = Waveform(clean.samples + gain * segment)
    return MixResult(noisy=noisy, gain=gain, noise_id=spec.noise_id,
                     snr_db=spec.snr_db, offset=offset, noise_segment=segment)
