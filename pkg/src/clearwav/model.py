"""Model assembly: shared encoder + masked transformer + quantizer head,
and the fine-tuning variant with a linear character head in place of the
quantizer."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .encoder import EncoderConfig, FeatureEncoder
from .masking import MaskConfig
from .quantizer import Quantizer, QuantizerConfig
from .rng import RngStream
from .tensor import Parameter, Tensor, matmul, parameters_of
from .transformer import ContextConfig, ContextEncoder
from .vocab import CharVocab

__all__ = ["ModelConfig", "PretrainModel", "AsrModel", "strip_and_head",
           "model_config_to_dict", "model_config_from_dict"]


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = EncoderConfig()
    context: ContextConfig = ContextConfig()
    quantizer: QuantizerConfig = QuantizerConfig()
    mask: MaskConfig = MaskConfig()

    def __post_init__(self):
        if self.encoder.channels != self.context.dim:
            raise ValueError(
                f"encoder channels ({self.encoder.channels}) must equal context dim "
                f"({self.context.dim}); no projection layer exists between them")
        if self.quantizer.in_dim != self.encoder.channels:
            raise ValueError("quantizer in_dim must equal encoder channels")
        if self.quantizer.out_dim != self.context.dim:
            raise ValueError(
                "quantizer out_dim must equal context dim for cosine similarity")


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)


def model_config_from_dict(d: dict) -> ModelConfig:
    def tup(x):
        return tuple(x) if isinstance(x, list) else x

    enc = {k: tup(v) for k, v in d["encoder"].items()}
    return ModelConfig(encoder=EncoderConfig(**enc),
                       context=ContextConfig(**d["context"]),
                       quantizer=QuantizerConfig(**d["quantizer"]),
                       mask=MaskConfig(**d["mask"]))


class PretrainModel:
    def __init__(self, cfg: ModelConfig, seed: int, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        init = RngStream(seed).derive("init")
        self.encoder = FeatureEncoder(cfg.encoder, init, dtype=dtype)
        self.mask_emb = Parameter(init.uniform(cfg.context.dim, -0.1, 0.1),
                                  "mask_emb", dtype=dtype)
        self.context = ContextEncoder(cfg.context, init, dtype=dtype)
        self.quantizer = Quantizer(cfg.quantizer, init, dtype=dtype)

    def parameters(self) -> list[Parameter]:
        return parameters_of(self.encoder, self.mask_emb, self.context,
                             self.quantizer)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class AsrModel:
    """Encoder + context encoder + linear head over the 30-symbol vocabulary.
    No masking is applied at fine-tuning or inference time."""

    def __init__(self, cfg: ModelConfig, seed: int, vocab: CharVocab | None = None,
                 dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.vocab = vocab or CharVocab()
        init = RngStream(seed).derive("init")
        self.encoder = FeatureEncoder(cfg.encoder, init, dtype=dtype)
        self.mask_emb = Parameter(init.uniform(cfg.context.dim, -0.1, 0.1),
                                  "mask_emb", dtype=dtype)
        self.context = ContextEncoder(cfg.context, init, dtype=dtype)
        # zero init: the head starts from the uniform distribution over symbols
        self.head_w = Parameter(np.zeros((cfg.context.dim, self.vocab.size)),
                                "head.weight", dtype=dtype)
        self.head_b = Parameter(np.zeros(self.vocab.size), "head.bias", dtype=dtype)

    def parameters(self) -> list[Parameter]:
        return parameters_of(self.encoder, self.mask_emb, self.context,
                             [self.head_w, self.head_b])

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def logits(self, samples, freeze_encoder: bool = False) -> Tensor:
        """Waveform -> (T, 30) unnormalized symbol scores."""
        z = self.encoder.encode(samples)
        if freeze_encoder:
            z = z.detach()
        c = self.context.forward(z)
        return matmul(c, self.head_w) + self.head_b


def strip_and_head(pretrained: PretrainModel, vocab: CharVocab | None = None) -> AsrModel:
    """Drop the quantizer, keep encoder/transformer weights, add a
    zero-initialized character head."""
    model = AsrModel(pretrained.cfg, seed=0, vocab=vocab, dtype=pretrained.dtype)
    source = {p.name: p for p in pretrained.parameters()}
    for p in model.parameters():
        if p.name.startswith("head."):
            continue
        if p.name not in source:
            raise KeyError(f"pretrained model is missing parameter {p.name!r}")
        p.data = source[p.name].data.copy()
        p.zero_grad()
    return model
