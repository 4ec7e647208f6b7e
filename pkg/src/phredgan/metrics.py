"""Automatic dialogue-evaluation metrics and rank aggregation.

Sequence metrics take pre-tokenized hypothesis/reference lists (any
hashable token type). BLEU and ROUGE-2 are corpus-level micro averages;
perplexity runs the generator teacher-forced over a corpus.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import make_batches
from .generator import NoiseSpec, sample_noise
from .rng import RandomSource, hash_seed
from .training import mle_loss

BLEU_EPSILON = 1e-9


def ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def _check_aligned(hypotheses, references):
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")


def bleu(hypotheses, references, n: int) -> float:
    """Corpus-level BLEU-n: clipped modified precisions, brevity penalty,
    epsilon count smoothing instead of hard zeros."""
    _check_aligned(hypotheses, references)
    if n < 1:
        raise ValueError("n must be >= 1")
    matches = [0.0] * n
    totals = [0.0] * n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for k in range(1, n + 1):
            h, r = ngrams(hyp, k), ngrams(ref, k)
            matches[k - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[k - 1] += sum(h.values())
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for k in range(n):
        num = matches[k] if matches[k] > 0 else BLEU_EPSILON
        den = totals[k] if totals[k] > 0 else 1.0
        log_p += math.log(num / den)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p / n)


def rouge2_f1(hypotheses, references) -> float:
    """Micro-averaged bigram F1 with per-sample clipped overlap counts."""
    _check_aligned(hypotheses, references)
    overlap = hyp_total = ref_total = 0.0
    for hyp, ref in zip(hypotheses, references):
        h, r = ngrams(hyp, 2), ngrams(ref, 2)
        overlap += sum(min(c, r[g]) for g, c in h.items())
        hyp_total += sum(h.values())
        ref_total += sum(r.values())
    if hyp_total == 0 or ref_total == 0:
        return 0.0
    p = overlap / hyp_total
    r = overlap / ref_total
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def distinct_n(hypotheses, n: int) -> float:
    """Unique n-grams across all hypotheses over total n-gram count."""
    if not hypotheses:
        raise ValueError("no hypotheses")
    seen = set()
    total = 0
    for hyp in hypotheses:
        grams = [tuple(hyp[i: i + n]) for i in range(len(hyp) - n + 1)]
        seen.update(grams)
        total += len(grams)
    return 0.0 if total == 0 else len(seen) / total


def nasl(hypotheses, references) -> float:
    """Mean per-sample length ratio |hypothesis| / |reference|."""
    _check_aligned(hypotheses, references)
    if not references:
        raise ValueError("no samples")
    ratios = []
    for hyp, ref in zip(hypotheses, references):
        if len(ref) == 0:
            raise ValueError("zero-length reference")
        ratios.append(len(hyp) / len(ref))
    return float(sum(ratios) / len(ratios))


def perplexity(snapshot, conversations, no_noise: bool = False, seed: int | None = None) -> float:
    """exp(total teacher-forced cross-entropy / total target tokens).

    Noise is drawn at the std the model was trained with (its density is
    defined with z present); --no-noise zeroes it for ablation.
    """
    if not conversations:
        raise ValueError("empty corpus")
    cfg = snapshot.config
    seed = cfg.seed if seed is None else seed
    std = 0.0 if no_noise else cfg.noise_std
    spec = NoiseSpec(cfg.noise_mode, std, snapshot.generator.noise_dim)
    rng = RandomSource(hash_seed(seed, "perplexity"))
    gen = snapshot.generator
    total_ce = 0.0
    total_tokens = 0.0
    for batch in make_batches(conversations, min(64, len(conversations)), cfg.max_turns,
                              cfg.max_len, seed, epoch=0):
        state = gen.zero_context(batch.size)
        for t in range(len(batch.turns) - 1):
            src, tgt = batch.turns[t], batch.turns[t + 1]
            state = gen.encode_turn(state, src.tokens, src.mask, src.source_attr,
                                    turn_mask=src.turn_mask)
            n_tok = float(tgt.mask.sum())
            if n_tok == 0:
                continue
            noise = sample_noise(spec, rng, batch.size, tgt.tokens.shape[1])
            rows = gen.teacher_forced_logits(state, tgt.tokens, tgt.source_attr, noise)
            loss = mle_loss(rows, tgt.tokens, tgt.mask)
            total_ce += loss.item() * n_tok
            total_tokens += n_tok
    if total_tokens == 0:
        raise ValueError("corpus has no target tokens")
    return math.exp(total_ce / total_tokens)


def human_eval_aggregate(ranks: np.ndarray):
    """Aggregate a (samples, judges, models) rank tensor.

    Each judge ranks the models per sample with a permutation of 0..N-1
    (ties rejected). Scores are normalized by N-1; a model's mean is over
    all samples and judges, and its standard error is
    sqrt(sum over samples of the judge variance / samples^2), with the
    unbiased (ddof=1) variance over judges. A single judge yields 0 error.
    """
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.ndim != 3:
        raise ValueError(f"rank matrix must be (samples, judges, models), got {ranks.shape}")
    S, J, N = ranks.shape
    if N < 2:
        raise ValueError("need at least 2 models to rank")
    expected = np.arange(N, dtype=np.float64)
    for s in range(S):
        for j in range(J):
            if not np.array_equal(np.sort(ranks[s, j]), expected):
                raise ValueError(f"ranks at sample {s}, judge {j} are not a tie-free "
                                 f"permutation of 0..{N - 1}: {ranks[s, j].tolist()}")
    scores = ranks / (N - 1)
    means = scores.mean(axis=(0, 1))
    if J < 2:
        errs = np.zeros(N)
    else:
        var_per_sample = scores.var(axis=1, ddof=1)  # (S, N)
        errs = np.sqrt(var_per_sample.sum(axis=0) / (S ** 2))
    return [(float(m), float(e)) for m, e in zip(means, errs)]


@dataclass
class EvalReport:
    samples: int
    bleu2: float
    bleu4: float
    rouge2_f1: float
    distinct1: float
    distinct2: float
    nasl: float
    perplexity: float | None = None

    def to_json(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def evaluate_pairs(hypotheses, references, ppl: float | None = None) -> EvalReport:
    return EvalReport(
        samples=len(hypotheses),
        bleu2=bleu(hypotheses, references, 2),
        bleu4=bleu(hypotheses, references, 4),
        rouge2_f1=rouge2_f1(hypotheses, references),
        distinct1=distinct_n(hypotheses, 1),
        distinct2=distinct_n(hypotheses, 2),
        nasl=nasl(hypotheses, references),
        perplexity=ppl,
    )
