"""Persona-conditioned hierarchical recurrent generator.

Three recurrent stages: a bidirectional utterance encoder, a
unidirectional dialogue-context GRU that also consumes the speaker's
attribute embedding, and an attentional decoder conditioned on the
responder's attribute embedding plus a Gaussian noise vector.

The word embedding table and the utterance encoder live under the
"shared." parameter prefix: the discriminators reference those same
Tensor objects, so an update from either side is visible to both.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .corpus import BOS
from .nn import AdditiveAttention, BiGruEncoder, GruStack, Linear, ParameterStore, masked_update
from .rng import RandomSource
from .tensor import Tensor

NOISE_MODES = ("utterance", "word")


@dataclass(frozen=True)
class NoiseSpec:
    """Decoder noise: one draw per response ("utterance") or per word ("word")."""

    mode: str
    std: float
    dim: int

    def __post_init__(self):
        if self.mode not in NOISE_MODES:
            raise ValueError(f"noise mode must be one of {NOISE_MODES}, got {self.mode!r}")
        if self.std < 0:
            raise ValueError("noise std must be >= 0")

    def with_std(self, std: float) -> "NoiseSpec":
        return replace(self, std=std)


def sample_noise(spec: NoiseSpec, rng: RandomSource, batch: int, length: int) -> list[Tensor]:
    """Per-step noise tensors (B, d_z); utterance mode reuses one draw."""
    if length < 1:
        raise ValueError("noise length must be >= 1")
    if spec.mode == "utterance":
        z = T.random_normal((batch, spec.dim), spec.std, rng)
        return [z] * length
    return [T.random_normal((batch, spec.dim), spec.std, rng) for _ in range(length)]


@dataclass
class ContextState:
    """Dialogue state after i turns: context hiddens + attention cache."""

    hs: list[Tensor]              # one (B, H) per context layer
    cache: Tensor | None          # (B, T, 2H) encoder outputs of the latest turn
    cache_mask: np.ndarray | None
    turn_index: int = 0


class Generator:
    def __init__(self, store: ParameterStore, vocab_size: int, n_attrs: int, layers: int,
                 hidden: int, emb_dim: int, attr_dim: int, attn_dim: int,
                 attrs_enabled: bool = True):
        self.vocab_size = vocab_size
        self.n_attrs = n_attrs
        self.layers = layers
        self.hidden = hidden
        self.attrs_enabled = attrs_enabled
        self.noise_dim = emb_dim  # z rides alongside the word embedding

        self.word_emb = store.add("shared.word_emb", (vocab_size, emb_dim))
        self.attr_emb = store.add("shared.attr_emb", (n_attrs, attr_dim)) if attrs_enabled else None
        self.encoder = BiGruEncoder(store, "shared.ernn", emb_dim, hidden, layers)
        self.summary_proj = Linear(store, "gen.summary_proj", 2 * hidden, hidden)
        ctx_in = hidden + (attr_dim if attrs_enabled else 0)
        self.crnn = GruStack(store, "gen.crnn", ctx_in, hidden, layers)
        dec_in = emb_dim + 2 * hidden + (attr_dim if attrs_enabled else 0) + self.noise_dim
        self.drnn = GruStack(store, "gen.drnn", dec_in, hidden, layers)
        self.attn = AdditiveAttention(store, "gen.attn", hidden, 2 * hidden, attn_dim)
        self.out_proj = Linear(store, "gen.out_proj", hidden, vocab_size)

    # -- context -----------------------------------------------------------

    def zero_context(self, batch: int) -> ContextState:
        return ContextState(hs=self.crnn.zero_state(batch), cache=None, cache_mask=None)

    def _check_attr(self, attr: np.ndarray):
        if self.attrs_enabled and (attr.min() < 0 or attr.max() >= self.n_attrs):
            raise IndexError(f"attribute index out of range [0, {self.n_attrs})")

    def encode_turn(self, state: ContextState, tokens: np.ndarray, mask: np.ndarray,
                    source_attr: np.ndarray, turn_mask: np.ndarray | None = None) -> ContextState:
        """Fold one utterance (and its speaker attribute) into the context.

        Rows with turn_mask 0 keep their previous context state; their
        attention cache rows are fully masked.
        """
        self._check_attr(source_attr)
        Tlen = tokens.shape[1]
        steps = [T.embed(self.word_emb, tokens[:, t]) for t in range(Tlen)]
        word_outs, summary = self.encoder.run(steps, mask)
        x = self.summary_proj(summary)
        if self.attrs_enabled:
            x = T.concat([x, T.embed(self.attr_emb, source_attr)], axis=-1)
        hs_new = self.crnn.step(x, state.hs)
        if turn_mask is not None:
            hs_new = [masked_update(nh, oh, turn_mask) for nh, oh in zip(hs_new, state.hs)]
        return ContextState(hs=hs_new, cache=word_outs, cache_mask=mask,
                            turn_index=state.turn_index + 1)

    # -- decoding ----------------------------------------------------------

    def decoder_init(self, state: ContextState) -> list[Tensor]:
        """Decoder starts from the context hiddens, layer for layer."""
        return list(state.hs)

    def decode_step(self, state: ContextState, dec_hs: list[Tensor], prev_tokens: np.ndarray,
                    target_attr: np.ndarray, z: Tensor):
        if state.cache is None:
            raise RuntimeError("decode before any encoded turn: the attention cache is empty")
        self._check_attr(target_attr)
        ctx, _ = self.attn(dec_hs[-1], state.cache, state.cache, state.cache_mask)
        parts = [T.embed(self.word_emb, prev_tokens), ctx]
        if self.attrs_enabled:
            parts.append(T.embed(self.attr_emb, target_attr))
        parts.append(z)
        hs_new = self.drnn.step(T.concat(parts, axis=-1), dec_hs)
        logits = self.out_proj(hs_new[-1])
        return logits, hs_new

    def teacher_forced_logits(self, state: ContextState, gold: np.ndarray,
                              target_attr: np.ndarray, noise: list[Tensor]) -> list[Tensor]:
        """One logit row per gold position; step j sees gold[:, :j] (BOS first)."""
        B, Tg = gold.shape
        if Tg < 1:
            raise ValueError("gold response is empty")
        if len(noise) < Tg:
            raise ValueError(f"need {Tg} noise steps, got {len(noise)}")
        dec_hs = self.decoder_init(state)
        prev = np.full(B, BOS, dtype=np.int32)
        rows = []
        for j in range(Tg):
            logits, dec_hs = self.decode_step(state, dec_hs, prev, target_attr, noise[j])
            rows.append(logits)
            prev = gold[:, j]
        return rows
