"""Autoregressive generation, candidate ranking, and the noise-std search.

Decoding is greedy: per step the argmax token. All candidate diversity
comes from the injected noise, so the L candidates are decoded as one
batch of L rows sharing a replicated context state. No tape is active
anywhere here — inference never builds gradient records.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import Snapshot
from .corpus import BOS, EOS, PAD, _clip_tokens, make_batches
from .generator import ContextState, NoiseSpec, sample_noise
from .rng import RandomSource, hash_seed
from .tensor import Tensor

PROB_FLOOR = 1e-7


@dataclass
class GenerationCandidate:
    tokens: list[int]                 # generated ids, ending at EOS or the length cap
    text: str
    word_probs: list[float] | None    # adversarial p per generated word
    adv_score: float | None           # mean per-word log p
    att_logprob: float | None         # log D_att(target attr | context, tokens)
    rank_score: float

    def to_json(self) -> dict:
        return {
            "tokens": [int(t) for t in self.tokens],
            "text": self.text,
            "word_probs": None if self.word_probs is None else [float(p) for p in self.word_probs],
            "adv_score": None if self.adv_score is None else float(self.adv_score),
            "att_logprob": None if self.att_logprob is None else float(self.att_logprob),
            "rank_score": float(self.rank_score),
        }


def rank_score(candidate: GenerationCandidate, variant: str) -> float:
    """Adversarial mean word log-prob; variant d averages in the per-word
    attribute log-confidence."""
    if variant == "phred":
        return 0.0
    if variant == "phredgan_d":
        n = max(1, len(candidate.tokens))
        return 0.5 * (candidate.adv_score + candidate.att_logprob / n)
    return candidate.adv_score


# ---------------------------------------------------------------------------
# context handling


def encode_context(snapshot: Snapshot, turns: list[tuple[int, list[int]]]) -> ContextState:
    """Fold (attribute_id, token_ids) turns into a fresh 1-row context state.

    Keeps only the most recent max_turns turns; clips each to the training
    length cap and terminates it with EOS, mirroring the batcher.
    """
    if not turns:
        raise ValueError("context is empty")
    cfg = snapshot.config
    turns = turns[-cfg.max_turns:]
    gen = snapshot.generator
    state = gen.zero_context(1)
    for attr_id, tokens in turns:
        row = _clip_tokens(list(tokens), cfg.max_len)
        tok = np.asarray([row], dtype=np.int32)
        mask = np.ones((1, len(row)), dtype=np.float32)
        state = gen.encode_turn(state, tok, mask, np.asarray([attr_id], dtype=np.int32))
    return state


def _replicate_state(state: ContextState, n: int) -> ContextState:
    hs = [Tensor(np.repeat(h.data, n, axis=0)) for h in state.hs]
    cache = Tensor(np.repeat(state.cache.data, n, axis=0))
    cache_mask = np.repeat(state.cache_mask, n, axis=0)
    return ContextState(hs=hs, cache=cache, cache_mask=cache_mask, turn_index=state.turn_index)


# ---------------------------------------------------------------------------
# decoding and scoring


def greedy_decode(snapshot: Snapshot, state: ContextState, target_attr: np.ndarray,
                  spec: NoiseSpec, rng: RandomSource, max_len: int):
    """Batched greedy decode; returns (tokens (B,T), mask (B,T)).

    A row finishes when it emits EOS (which is kept); later positions are
    PAD with mask 0, so nothing ever follows EOS.
    """
    gen = snapshot.generator
    B = state.hs[0].data.shape[0]
    dec_hs = gen.decoder_init(state)
    prev = np.full(B, BOS, dtype=np.int32)
    alive = np.ones(B, dtype=np.float32)
    noise = sample_noise(spec, rng, B, max_len)
    tok_cols, mask_cols = [], []
    for j in range(max_len):
        logits, dec_hs = gen.decode_step(state, dec_hs, prev, target_attr, noise[j])
        nxt = logits.data.argmax(axis=-1).astype(np.int32)
        tok_cols.append(np.where(alive > 0, nxt, PAD).astype(np.int32))
        mask_cols.append(alive.copy())
        alive = alive * (nxt != EOS).astype(np.float32)
        prev = nxt
        if not alive.any():
            break
    tokens = np.stack(tok_cols, axis=1)
    mask = np.stack(mask_cols, axis=1).astype(np.float32)
    return tokens, mask


def _score_candidates(snapshot: Snapshot, state: ContextState, tokens: np.ndarray,
                      mask: np.ndarray, target_attr: np.ndarray):
    """Per-row adversarial mean log p (+ attribute log-confidence for variant d)."""
    cfg = snapshot.config
    attr_arg = target_attr if cfg.adv_conditioned else None
    probs = snapshot.dadv.word_probs(state.hs, tokens, mask, attr_arg).data
    logs = np.log(np.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR))
    lengths = mask.sum(axis=1)
    adv_mean = (logs * mask).sum(axis=1) / np.maximum(lengths, 1.0)
    att_logp = None
    if cfg.uses_att:
        dist = snapshot.datt.predict(state.hs, tokens, mask).data
        picked = dist[np.arange(dist.shape[0]), target_attr.astype(np.int64)]
        att_logp = np.log(np.clip(picked, PROB_FLOOR, 1.0))
    return probs, adv_mean, att_logp


def generate(snapshot: Snapshot, context: list[tuple[int, list[int]]], target_attr_id: int,
             n_candidates: int = 1, seed: int = 0, alpha: float | None = None,
             max_len: int | None = None) -> list[GenerationCandidate]:
    """Ranked candidates for the next turn, best first.

    The MLE-only variant returns its single noiseless greedy decode; the
    adversarial variants decode n_candidates noise draws and sort them by
    rank_score (stable, so equal scores keep decode order).
    """
    cfg = snapshot.config
    if cfg.attrs_enabled and not (0 <= target_attr_id < len(snapshot.attr_vocab)):
        raise IndexError(f"attribute id {target_attr_id} out of range")
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    max_len = cfg.max_len if max_len is None else max_len
    rng = RandomSource(hash_seed(seed, "generate"))

    state1 = encode_context(snapshot, context)
    if cfg.variant == "phred":
        spec = snapshot.noise_spec(0.0)
        tokens, mask = greedy_decode(snapshot, state1,
                                     np.asarray([target_attr_id], dtype=np.int32),
                                     spec, rng, max_len)
        row = tokens[0][mask[0] > 0].tolist()
        return [GenerationCandidate(tokens=row, text=snapshot.vocab.decode(row),
                                    word_probs=None, adv_score=None, att_logprob=None,
                                    rank_score=0.0)]

    L = n_candidates
    state = _replicate_state(state1, L)
    attr = np.full(L, target_attr_id, dtype=np.int32)
    spec = snapshot.noise_spec(alpha)
    tokens, mask = greedy_decode(snapshot, state, attr, spec, rng, max_len)
    probs, adv_mean, att_logp = _score_candidates(snapshot, state, tokens, mask, attr)

    candidates = []
    for b in range(L):
        keep = mask[b] > 0
        row = tokens[b][keep].tolist()
        cand = GenerationCandidate(
            tokens=row,
            text=snapshot.vocab.decode(row),
            word_probs=probs[b][keep].tolist(),
            adv_score=float(adv_mean[b]),
            att_logprob=None if att_logp is None else float(att_logp[b]),
            rank_score=0.0,
        )
        cand.rank_score = rank_score(cand, cfg.variant)
        candidates.append(cand)
    candidates.sort(key=lambda c: -c.rank_score)
    return candidates


# ---------------------------------------------------------------------------
# noise-std linear search


def alpha_score(snapshot: Snapshot, conversations, alpha: float, seed: int,
                batch_size: int = 64) -> float:
    """Mean over generated words of -log D_adv at the given noise std (L=1)."""
    cfg = snapshot.config
    rng = RandomSource(hash_seed(seed, "alpha", int(alpha * 1000)))
    spec = snapshot.noise_spec(alpha)
    gen = snapshot.generator
    total_neg_log = 0.0
    total_words = 0.0
    for batch in make_batches(conversations, batch_size, cfg.max_turns, cfg.max_len,
                              seed, epoch=0):
        state = gen.zero_context(batch.size)
        for t in range(len(batch.turns) - 1):
            src, tgt = batch.turns[t], batch.turns[t + 1]
            state = gen.encode_turn(state, src.tokens, src.mask, src.source_attr,
                                    turn_mask=src.turn_mask)
            tokens, mask = greedy_decode(snapshot, state, tgt.source_attr, spec, rng,
                                         cfg.max_len)
            mask = mask * tgt.turn_mask[:, None]
            if mask.sum() == 0:
                continue
            attr_arg = tgt.source_attr if cfg.adv_conditioned else None
            probs = snapshot.dadv.word_probs(state.hs, tokens, mask, attr_arg).data
            logs = np.log(np.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR))
            total_neg_log += float((-logs * mask).sum())
            total_words += float(mask.sum())
    if total_words == 0:
        raise ValueError("alpha_score: no generated words (empty validation set?)")
    return total_neg_log / total_words


def alpha_search(snapshot: Snapshot, conversations, grid=None, seed: int = 0):
    """Linear search over noise stds; returns (best_alpha, [(alpha, score), ...]).

    Ties break toward the smaller alpha.
    """
    if snapshot.config.variant == "phred":
        raise ValueError("the MLE-only variant has no noise to search over")
    grid = list(range(1, 31)) if grid is None else list(grid)
    if not grid:
        raise ValueError("alpha grid is empty")
    if not conversations:
        raise ValueError("validation corpus is empty")
    table = [(float(a), alpha_score(snapshot, conversations, float(a), seed)) for a in grid]
    best_alpha, best_score = table[0]
    for a, s in table[1:]:
        if s < best_score:
            best_alpha, best_score = a, s
    return best_alpha, table
