"""Flat run configuration: one dataclass, strict key validation.

Unknown config keys are errors (a typo in a hyperparameter name must
never silently train the default). Per-variant rules are resolved here:
the adversarial variants pick their attribute-loss weight, the MLE-only
variant is noiseless.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

VARIANTS = ("phred", "hredgan", "phredgan_a", "phredgan_d")
NOISE_MODES = ("utterance", "word")

# sentinels so __post_init__ can tell "left default" from "explicitly set"
_AUTO = -1.0


@dataclass
class Config:
    variant: str = "phredgan_d"

    # corpus
    vocab_size: int = 2000
    max_len: int = 20
    max_turns: int = 5

    # model dimensions
    layers: int = 2
    hidden: int = 64
    emb_dim: int = 32
    attr_dim: int = 32
    attn_dim: int = 64

    # decoder noise (training-time std; inference may override via alpha)
    noise_mode: str = "utterance"
    noise_std: float = _AUTO

    # loss weights and accuracy gates
    lambda_adv: float = 1.0
    lambda_att: float = _AUTO
    lambda_mle: float = 1.0
    acc_d_threshold: float = 0.99
    acc_g_threshold: float = 0.75

    # optimization
    learning_rate: float = 0.5
    clip_norm: float = 5.0
    batch_size: int = 32
    epochs: int = 5
    seed: int = 1234

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; valid: {', '.join(VARIANTS)}")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"unknown noise_mode {self.noise_mode!r}; valid: {', '.join(NOISE_MODES)}")

        if self.noise_std == _AUTO:
            self.noise_std = 0.0 if self.variant == "phred" else 1.0
        if self.variant == "phred" and self.noise_std != 0.0:
            raise ValueError("the phred variant is noiseless; noise_std must be 0")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

        if self.lambda_att == _AUTO:
            self.lambda_att = 1.0 if self.variant == "phredgan_d" else 0.0
        if self.variant == "phredgan_a" and self.lambda_att != 0.0:
            raise ValueError("phredgan_a has no attribute discriminator; lambda_att must be 0")
        if self.variant in ("phred", "hredgan") and self.lambda_att != 0.0:
            raise ValueError(f"{self.variant} has no attribute discriminator; lambda_att must be 0")

        for name in ("lambda_adv", "lambda_att", "lambda_mle"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("acc_d_threshold", "acc_g_threshold"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1]")
        for name in ("vocab_size", "max_len", "max_turns", "layers", "hidden",
                     "emb_dim", "attr_dim", "attn_dim", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.vocab_size < 5:
            raise ValueError("vocab_size must exceed the 4 reserved entries")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2 (one token plus EOS)")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ValueError("learning_rate and clip_norm must be positive")

    # -- variant feature switches -------------------------------------------

    @property
    def attrs_enabled(self) -> bool:
        return self.variant != "hredgan"

    @property
    def uses_adv(self) -> bool:
        return self.variant != "phred"

    @property
    def adv_conditioned(self) -> bool:
        return self.variant == "phredgan_a"

    @property
    def uses_att(self) -> bool:
        return self.variant == "phredgan_d"

    # -- (de)serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        known = set(cls.field_names())
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        for f in dataclasses.fields(cls):
            if f.name in d and f.name not in ("variant", "noise_mode") and isinstance(d[f.name], str):
                raise ValueError(f"config key {f.name!r} must be a number, got a string")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "Config":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    def replace(self, **kw) -> "Config":
        merged = self.to_dict()
        merged.update(kw)
        return Config.from_dict(merged)
