"""Shared convolutional front end: raw waveform -> frame-rate features.

Seven valid (unpadded) 1-D convolutions with strides (5,2,2,2,2,2,2) and
kernels (10,3,3,3,3,2,2), each followed by layer normalization and GELU.
At 16 kHz this yields a 20 ms hop (320 samples) and a 25 ms receptive
field (400 samples); both are derived from the config, not hard-coded.
The same parameters process the clean and the noisy stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import RngStream
from .tensor import Parameter, Tensor, conv1d, gelu, layer_norm

__all__ = ["EncoderConfig", "ConvStack", "FeatureEncoder", "frame_count"]

SPEECH_STRIDES = (5, 2, 2, 2, 2, 2, 2)
SPEECH_KERNELS = (10, 3, 3, 3, 3, 2, 2)


@dataclass(frozen=True)
class EncoderConfig:
    channels: int = 32
    strides: tuple[int, ...] = SPEECH_STRIDES
    kernels: tuple[int, ...] = SPEECH_KERNELS

    def __post_init__(self):
        if len(self.strides) != len(self.kernels):
            raise ValueError("strides and kernels must have equal length")
        if self.channels < 4:
            raise ValueError(f"channels must be >= 4, got {self.channels}")


def frame_count(n_samples: int, kernels, strides) -> int:
    """Compose floor((T - k) / s) + 1 over the layer stack."""
    t = n_samples
    for k, s in zip(kernels, strides):
        if t < k:
            return 0
        t = (t - k) // s + 1
    return t


def _stack_geometry(kernels, strides) -> tuple[int, int]:
    """(hop, receptive_field) in input samples for the composed stack."""
    hop, rf = 1, 1
    for k, s in zip(kernels, strides):
        rf = rf + (k - 1) * hop
        hop *= s
    return hop, rf


class ConvStack:
    """Stack of conv -> layer_norm -> GELU layers over (T, C) sequences.

    Convolutions carry no bias; the normalization offset supplies it.
    """

    def __init__(self, kernels, strides, channels: int, in_channels: int,
                 init_rng: RngStream, name: str = "encoder",
                 dtype=np.float32):
        self.kernels = tuple(kernels)
        self.strides = tuple(strides)
        self.channels = channels
        self.params: list[Parameter] = []
        self.layers = []
        c_in = in_channels
        for i, (k, s) in enumerate(zip(self.kernels, self.strides)):
            bound = 1.0 / np.sqrt(c_in * k)
            w = Parameter(init_rng.uniform((channels, c_in, k), -bound, bound),
                          f"{name}.conv{i}.weight", dtype=dtype)
            g = Parameter(np.ones(channels), f"{name}.conv{i}.ln_scale", dtype=dtype)
            b = Parameter(np.zeros(channels), f"{name}.conv{i}.ln_shift", dtype=dtype)
            self.layers.append((w, g, b, s))
            self.params.extend([w, g, b])
            c_in = channels

    def parameters(self) -> list[Parameter]:
        return list(self.params)

    @property
    def hop(self) -> int:
        return _stack_geometry(self.kernels, self.strides)[0]

    @property
    def receptive_field(self) -> int:
        return _stack_geometry(self.kernels, self.strides)[1]

    def num_frames(self, n_samples: int) -> int:
        return frame_count(n_samples, self.kernels, self.strides)

    def forward(self, x: Tensor) -> Tensor:
        for w, g, b, s in self.layers:
            x = gelu(layer_norm(conv1d(x, w, stride=s), g, b))
        return x


class FeatureEncoder:
    """The 7-layer speech front end f: X -> Z operating on raw waveforms."""

    def __init__(self, cfg: EncoderConfig, init_rng: RngStream, dtype=np.float32):
        self.cfg = cfg
        self.stack = ConvStack(cfg.kernels, cfg.strides, cfg.channels,
                               in_channels=1, init_rng=init_rng,
                               name="encoder", dtype=dtype)
        if self.stack.hop != 320 or self.stack.receptive_field != 400:
            raise ValueError(
                f"encoder geometry must give hop 320 / receptive field 400 samples, "
                f"got hop {self.stack.hop} / rf {self.stack.receptive_field}")
        self.dtype = dtype

    def parameters(self) -> list[Parameter]:
        return self.stack.parameters()

    @property
    def hop(self) -> int:
        return self.stack.hop

    def receptive_field(self) -> int:
        return self.stack.receptive_field

    def num_frames(self, n_samples: int) -> int:
        return self.stack.num_frames(n_samples)

    def encode(self, samples) -> Tensor:
        """Waveform samples (n,) -> features (T, channels)."""
        x = samples if isinstance(samples, Tensor) else Tensor(
            np.asarray(samples, dtype=self.dtype))
        if x.ndim != 1:
            raise ValueError(f"encode expects a 1-D waveform, got shape {x.shape}")
        rf = self.receptive_field()
        if x.shape[0] < rf:
            raise ValueError(
                f"input too short: {x.shape[0]} samples, need at least {rf}")
        return self.stack.forward(x.reshape(-1, 1))
