"""JSON run configs with field-path diagnostics.

One file configures everything; each section is optional and falls back
to desk-scale defaults.  Validation failures raise ConfigError carrying
the dotted field path, which the CLI maps to exit code 2.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .corpus import ToyCorpusConfig
from .encoder import EncoderConfig
from .losses import LossWeights
from .masking import MaskConfig
from .model import ModelConfig
from .optim import AdamConfig
from .quantizer import QuantizerConfig
from .training import TrainConfig
from .transformer import ContextConfig

__all__ = ["ConfigError", "RunConfig", "load_run_config", "resolved_to_dict"]

SECTIONS = ("data", "model", "pretrain", "finetune", "eval")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _check_mapping(obj, path: str) -> dict:
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ConfigError(path, f"expected an object, got {type(obj).__name__}")
    return obj


def _build(cls, section: dict, path: str, nested: dict | None = None):
    nested = nested or {}
    field_names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in section.items():
        if key not in field_names:
            raise ConfigError(f"{path}.{key}", "unknown field")
        if key in nested:
            sub_cls = nested[key]
            kwargs[key] = _build(sub_cls, _check_mapping(value, f"{path}.{key}"),
                                 f"{path}.{key}")
        else:
            if isinstance(value, list):
                value = tuple(value)
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


@dataclasses.dataclass
class RunConfig:
    data: ToyCorpusConfig
    model: ModelConfig
    pretrain: TrainConfig
    finetune: TrainConfig
    eval_snr_set: tuple[float, ...]
    eval_seed: int
    raw: dict

    def with_seed(self, seed: int | None) -> "RunConfig":
        """Override every per-run seed at once (CLI --seed)."""
        if seed is None:
            return self
        return dataclasses.replace(
            self,
            data=dataclasses.replace(self.data, seed=seed),
            pretrain=dataclasses.replace(self.pretrain, seed=seed),
            finetune=dataclasses.replace(self.finetune, seed=seed),
            eval_seed=seed)


_FINETUNE_DEFAULTS = dict(total_steps=300, lr_peak=1e-3)


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError("config", f"file not found: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from exc
    raw = _check_mapping(raw, "config")
    for key in raw:
        if key not in SECTIONS:
            raise ConfigError(key, "unknown section")
    if overrides:
        for dotted, value in overrides.items():
            _apply_override(raw, dotted, value)

    data = _build(ToyCorpusConfig, _check_mapping(raw.get("data"), "data"), "data")
    model = _build(ModelConfig, _check_mapping(raw.get("model"), "model"), "model",
                   nested={"encoder": EncoderConfig, "context": ContextConfig,
                           "quantizer": QuantizerConfig, "mask": MaskConfig})
    pretrain = _build(TrainConfig, _check_mapping(raw.get("pretrain"), "pretrain"),
                      "pretrain", nested={"adam": AdamConfig, "weights": LossWeights})
    ft_section = dict(_FINETUNE_DEFAULTS)
    ft_section.update(_check_mapping(raw.get("finetune"), "finetune"))
    finetune = _build(TrainConfig, ft_section, "finetune",
                      nested={"adam": AdamConfig, "weights": LossWeights})
    eval_section = _check_mapping(raw.get("eval"), "eval")
    for key in eval_section:
        if key not in ("snr_set", "seed"):
            raise ConfigError(f"eval.{key}", "unknown field")
    eval_snrs = tuple(eval_section.get("snr_set", (0.0, 5.0, 10.0, 15.0, 20.0)))
    if not eval_snrs:
        raise ConfigError("eval.snr_set", "must be non-empty")
    eval_seed = int(eval_section.get("seed", 0))
    return RunConfig(data=data, model=model, pretrain=pretrain,
                     finetune=finetune, eval_snr_set=eval_snrs,
                     eval_seed=eval_seed, raw=raw)


def _apply_override(raw: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = raw
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "cannot override a scalar with a field")
    node[parts[-1]] = value


def resolved_to_dict(cfg: RunConfig) -> dict:
    def clean(obj):
        if dataclasses.is_dataclass(obj):
            return {k: clean(v) for k, v in dataclasses.asdict(obj).items()}
        if isinstance(obj, tuple):
            return [clean(v) for v in obj]
        if isinstance(obj, (str, int, float, bool)) or obj is None:
            return obj
        return str(obj)

    return {"data": clean(cfg.data), "model": clean(cfg.model),
            "pretrain": clean(cfg.pretrain), "finetune": clean(cfg.finetune),
            "eval": {"snr_set": list(cfg.eval_snr_set), "seed": cfg.eval_seed}}
