"""Losses and the accuracy-gated adversarial training loop.

Per mini-batch the loop makes two passes. The discriminator pass
teacher-forces the generator over every turn, samples a fake response
per turn from those distributions, measures word-level discriminator
accuracy, and (below the discriminator gate) steps the discriminator
group. The generator pass rebuilds the graph with the same noise and the
same sampled fakes and steps the generator group, with the adversarial
and attribute terms included only above the generator gate.

The two parameter groups overlap on purpose: the word embeddings and the
utterance encoder belong to both, so both steps move them.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import build_models, save_checkpoint
from .config import Config
from .corpus import AttributeVocabulary, Batch, Conversation, Vocabulary, make_batches
from .discriminators import adv_accuracy
from .generator import NoiseSpec, sample_noise
from .nn import sgd_step
from .rng import RandomSource, hash_seed
from .tensor import Tensor

PROB_FLOOR = 1e-7


# ---------------------------------------------------------------------------
# losses


def mle_loss(logit_rows: list[Tensor], gold: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean token cross-entropy (full softmax) over unmasked positions."""
    denom = float(mask.sum())
    if denom == 0:
        raise ValueError("mle_loss over an all-masked batch")
    total = None
    for j, logits in enumerate(logit_rows):
        ce = T.cross_entropy_with_logits(logits, gold[:, j])
        step = T.reduce_sum(T.mul(ce, Tensor(mask[:, j])))
        total = step if total is None else T.add(total, step)
    return T.mul(total, 1.0 / denom)


def _masked_mean_log(probs: Tensor, mask: np.ndarray | None) -> Tensor:
    logs = T.log(T.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR))
    if mask is None:
        return T.reduce_mean(logs)
    denom = float(mask.sum())
    if denom == 0:
        raise ValueError("masked mean over zero positions")
    return T.mul(T.reduce_sum(T.mul(logs, Tensor(mask))), 1.0 / denom)


def _adv_losses(gt_probs: Tensor, gen_probs: Tensor,
                gt_mask: np.ndarray | None, gen_mask: np.ndarray | None):
    one = Tensor(np.float32(1.0))
    d_loss = T.neg(T.add(_masked_mean_log(gt_probs, gt_mask),
                         _masked_mean_log(T.sub(one, gen_probs), gen_mask)))
    g_loss = T.neg(_masked_mean_log(gen_probs, gen_mask))
    return d_loss, g_loss


def adv_loss_a(gt_probs: Tensor, gen_probs: Tensor,
               gt_mask: np.ndarray | None = None, gen_mask: np.ndarray | None = None):
    """(d_loss, g_loss) for the attribute-conditioned word discriminator.

    d_loss = -[mean log p_gt + mean log(1 - p_gen)];
    g_loss = -mean log p_gen (non-saturating form).
    """
    return _adv_losses(gt_probs, gen_probs, gt_mask, gen_mask)


def adv_loss_d(gt_probs: Tensor, gen_probs: Tensor,
               gt_mask: np.ndarray | None = None, gen_mask: np.ndarray | None = None):
    """Same arithmetic as adv_loss_a over unconditioned word probabilities."""
    return _adv_losses(gt_probs, gen_probs, gt_mask, gen_mask)


def _picked_log_prob(dist: Tensor, targets: np.ndarray) -> Tensor:
    """(B,) log of the probability each row assigns to its target class."""
    B, K = dist.data.shape
    onehot = np.zeros((B, K), dtype=np.float32)
    onehot[np.arange(B), targets.astype(np.int64)] = 1.0
    picked = T.reduce_sum(T.mul(dist, Tensor(onehot)), axis=-1)
    return T.log(T.clip(picked, PROB_FLOOR, 1.0))


def att_loss(gt_dist: Tensor, gen_dist: Tensor, target_attr: np.ndarray,
             row_mask: np.ndarray | None = None):
    """(d_att_loss, g_att_loss): NLL of the true attribute under each distribution.

    The discriminator side scores the ground-truth utterance, the
    collaborative generator side scores the sampled one.
    """
    def mean_nll(dist):
        rows = T.neg(_picked_log_prob(dist, target_attr))
        if row_mask is None:
            return T.reduce_mean(rows)
        denom = float(row_mask.sum())
        if denom == 0:
            raise ValueError("att_loss over zero active rows")
        return T.mul(T.reduce_sum(T.mul(rows, Tensor(row_mask))), 1.0 / denom)

    return mean_nll(gt_dist), mean_nll(gen_dist)


# ---------------------------------------------------------------------------
# gating


def update_decisions(acc: float | None, config: Config):
    """Map discriminator accuracy to (discriminator_fires, generator_mode).

    Below acc_d_threshold the discriminator trains. Below acc_g_threshold
    the discriminator is too unreliable to teach the generator, so the
    generator falls back to likelihood only.
    """
    if not config.uses_adv:
        return False, "mle_only"
    if acc is None:
        raise ValueError("adversarial variants need a discriminator accuracy")
    d_fires = acc < config.acc_d_threshold
    g_mode = "mle_only" if acc < config.acc_g_threshold else "full"
    return d_fires, g_mode


# ---------------------------------------------------------------------------
# reporting


@dataclass
class StepRecord:
    step: int
    epoch: int
    mle: float
    d_loss: float | None
    g_adv: float | None
    d_att: float | None
    g_att: float | None
    acc: float | None
    d_updated: bool
    g_mode: str
    grad_norm: float

    def to_json(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


@dataclass
class TrainReport:
    steps: list[StepRecord] = field(default_factory=list)
    checkpoint_path: str | None = None
    aborted: bool = False
    abort_reason: str | None = None
    wall_clock: float = 0.0

    @property
    def final_mle(self) -> float:
        return self.steps[-1].mle if self.steps else float("nan")


# ---------------------------------------------------------------------------
# the loop


class Trainer:
    def __init__(self, config: Config, vocab: Vocabulary, attr_vocab: AttributeVocabulary,
                 out_dir=None):
        self.config = config
        self.vocab = vocab
        self.attr_vocab = attr_vocab
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.store, self.gen, self.dadv, self.datt = build_models(
            config, len(vocab), len(attr_vocab), config.seed)
        self.noise_spec = NoiseSpec(config.noise_mode, config.noise_std, self.gen.noise_dim)
        self.noise_rng = RandomSource(hash_seed(config.seed, "noise"))
        self.sample_rng = RandomSource(hash_seed(config.seed, "samples"))
        self.step = 0

        self.g_prefixes = ["gen.", "shared."]
        d_prefixes = ["dadv.", "shared.word_emb", "shared.ernn"]
        if config.adv_conditioned:
            d_prefixes.append("shared.attr_emb")
        if config.uses_att:
            d_prefixes.append("datt.")
        self.d_prefixes = d_prefixes

    # -- one turn's forward pieces ------------------------------------------

    def _iter_teacher_turns(self, batch: Batch):
        """Yield (state_after_turn_t, turn_t+1 as target) pairs."""
        B = batch.size
        state = self.gen.zero_context(B)
        for t in range(len(batch.turns) - 1):
            src = batch.turns[t]
            state = self.gen.encode_turn(state, src.tokens, src.mask, src.source_attr,
                                         turn_mask=src.turn_mask)
            tgt = batch.turns[t + 1]
            yield state, src, tgt

    def _forward(self, batch: Batch, noises, fakes=None, want_adv=True, want_att=True,
                 want_gt_side=True):
        """Run the generator (and discriminators) over every turn of a batch.

        `noises` holds one noise list per target turn so both passes of a
        step see identical z. When `fakes` is None the per-turn fake
        responses are sampled here (categorical over the teacher-forced
        softmax) and returned for reuse. `want_adv`/`want_att` gate the
        discriminator passes; `want_gt_side` gates the ground-truth halves,
        which only the discriminator update needs.
        """
        cfg = self.config
        want_adv = want_adv and cfg.uses_adv
        want_att = want_att and cfg.uses_att
        need_fakes = want_adv or want_att
        sampled = fakes is None
        if sampled:
            fakes = []
        mle_terms = []
        gt_logps, gen_logps, gen_one_minus_logps = [], [], []
        att_gt_rows, att_gen_rows = [], []
        counts = {"words": 0.0, "att_rows": 0.0,
                  "gt_correct": 0.0, "gen_correct": 0.0}

        for k, (state, src, tgt) in enumerate(self._iter_teacher_turns(batch)):
            gold, gmask = tgt.tokens, tgt.mask
            logit_rows = self.gen.teacher_forced_logits(state, gold, tgt.source_attr, noises[k])

            denom = float(gmask.sum())
            if denom > 0:
                mle_terms.append((mle_loss(logit_rows, gold, gmask), denom))

            if not need_fakes:
                continue
            if sampled:
                fake = np.zeros_like(gold)
                for j, logits in enumerate(logit_rows):
                    fake[:, j] = self.sample_rng.categorical(_softmax_np(logits.data))
                fakes.append(fake)
            fake = fakes[k]

            if want_adv:
                attr_arg = tgt.source_attr if cfg.adv_conditioned else None
                p_gen = self.dadv.word_probs(state.hs, fake, gmask, attr_arg)
                m = Tensor(gmask)
                cl = lambda p: T.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
                gen_logps.append(T.reduce_sum(T.mul(T.log(cl(p_gen)), m)))
                counts["words"] += denom
                counts["gen_correct"] += float(((p_gen.data < 0.5) * gmask).sum())
                if want_gt_side:
                    p_gt = self.dadv.word_probs(state.hs, gold, gmask, attr_arg)
                    gt_logps.append(T.reduce_sum(T.mul(T.log(cl(p_gt)), m)))
                    one = Tensor(np.float32(1.0))
                    gen_one_minus_logps.append(
                        T.reduce_sum(T.mul(T.log(cl(T.sub(one, p_gen))), m)))
                    counts["gt_correct"] += float(((p_gt.data > 0.5) * gmask).sum())

            if want_att:
                rmask = tgt.turn_mask
                d_gen = self.datt.predict(state.hs, fake, gmask)
                att_gen_rows.append(T.reduce_sum(
                    T.mul(T.neg(_picked_log_prob(d_gen, tgt.source_attr)), Tensor(rmask))))
                counts["att_rows"] += float(rmask.sum())
                if want_gt_side:
                    d_gt = self.datt.predict(state.hs, gold, gmask)
                    att_gt_rows.append(T.reduce_sum(
                        T.mul(T.neg(_picked_log_prob(d_gt, tgt.source_attr)), Tensor(rmask))))

        out = {"fakes": fakes}
        if not mle_terms:
            raise ValueError("batch contains no target tokens")
        total_words = sum(d for _, d in mle_terms)
        out["mle"] = _sum_tensors([T.mul(term, d / total_words) for term, d in mle_terms])

        if want_adv and counts["words"] > 0:
            w = 1.0 / counts["words"]
            out["g_adv"] = T.neg(T.mul(_sum_tensors(gen_logps), w))
            if want_gt_side:
                mean_gt = T.mul(_sum_tensors(gt_logps), w)
                mean_one_minus = T.mul(_sum_tensors(gen_one_minus_logps), w)
                out["d_loss"] = T.neg(T.add(mean_gt, mean_one_minus))
                out["acc"] = (counts["gt_correct"] + counts["gen_correct"]) / (2 * counts["words"])
        if want_att and counts["att_rows"] > 0:
            w = 1.0 / counts["att_rows"]
            out["g_att"] = T.mul(_sum_tensors(att_gen_rows), w)
            if want_gt_side:
                out["d_att"] = T.mul(_sum_tensors(att_gt_rows), w)
        return out

    def _batch_noises(self, batch: Batch):
        B = batch.size
        return [sample_noise(self.noise_spec, self.noise_rng, B, batch.turns[t + 1].tokens.shape[1])
                for t in range(len(batch.turns) - 1)]

    # -- one optimization step ------------------------------------------------

    def train_step(self, batch: Batch) -> StepRecord:
        cfg = self.config
        noises = self._batch_noises(batch)

        acc = None
        d_val = d_att_val = None
        fakes = None
        d_updated = False

        # Discriminator pass: measure accuracy, step D below its gate.
        if cfg.uses_adv:
            with T.tape():
                fwd = self._forward(batch, noises)
                fakes = fwd["fakes"]
                acc = fwd.get("acc")
                d_val = fwd["d_loss"].item() if "d_loss" in fwd else None
                if "d_att" in fwd:
                    d_att_val = fwd["d_att"].item()
                d_updated, _ = update_decisions(acc, cfg)
                if d_updated:
                    loss_d = fwd["d_loss"]
                    if "d_att" in fwd:
                        loss_d = T.add(loss_d, fwd["d_att"])
                    T.backward(loss_d)
            if d_updated:
                sgd_step(self.store.tensors(self.d_prefixes), cfg.learning_rate, cfg.clip_norm)
            self.store.zero_grad()

        # Generator pass: fresh graph, same noise and same sampled fakes,
        # scored by the just-updated discriminators.
        _, g_mode = update_decisions(acc, cfg)
        g_adv_val = g_att_val = None
        full = g_mode == "full"
        with T.tape():
            fwd = self._forward(batch, noises, fakes=fakes,
                                want_adv=full, want_att=full and cfg.lambda_att > 0,
                                want_gt_side=False)
            mle_val = fwd["mle"].item()
            loss_g = T.mul(fwd["mle"], cfg.lambda_mle)
            if "g_adv" in fwd:
                loss_g = T.add(loss_g, T.mul(fwd["g_adv"], cfg.lambda_adv))
                g_adv_val = fwd["g_adv"].item()
            if "g_att" in fwd:
                loss_g = T.add(loss_g, T.mul(fwd["g_att"], cfg.lambda_att))
                g_att_val = fwd["g_att"].item()
            T.backward(loss_g)
        gnorm = sgd_step(self.store.tensors(self.g_prefixes), cfg.learning_rate, cfg.clip_norm)
        self.store.zero_grad()

        self.step += 1
        return StepRecord(step=self.step, epoch=-1, mle=mle_val,
                          d_loss=d_val, g_adv=g_adv_val, d_att=d_att_val, g_att=g_att_val,
                          acc=acc, d_updated=d_updated, g_mode=g_mode, grad_norm=gnorm)

    # -- epochs -----------------------------------------------------------------

    def train(self, conversations: list[Conversation], log_path=None) -> TrainReport:
        cfg = self.config
        report = TrainReport()
        start = time.time()
        log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
        try:
            for epoch in range(cfg.epochs):
                batches = make_batches(conversations, cfg.batch_size, cfg.max_turns,
                                       cfg.max_len, cfg.seed, epoch=epoch)
                for batch in batches:
                    rec = self.train_step(batch)
                    rec.epoch = epoch
                    report.steps.append(rec)
                    if log_fh:
                        log_fh.write(json.dumps(rec.to_json()) + "\n")
                    finite = all(v is None or np.isfinite(v)
                                 for v in (rec.mle, rec.d_loss, rec.g_adv, rec.d_att, rec.g_att))
                    if not finite:
                        report.aborted = True
                        report.abort_reason = f"non-finite loss at step {rec.step}"
                        if self.out_dir is not None:
                            report.checkpoint_path = str(self.save(self.out_dir / "aborted"))
                        return report
        finally:
            if log_fh:
                log_fh.close()
            report.wall_clock = time.time() - start
        if self.out_dir is not None:
            report.checkpoint_path = str(self.save(self.out_dir / "final"))
        return report

    def save(self, path) -> Path:
        return save_checkpoint(path, self.store, self.config, self.vocab,
                               self.attr_vocab, self.step)


def _sum_tensors(ts):
    out = ts[0]
    for t in ts[1:]:
        out = T.add(out, t)
    return out


def _softmax_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def train(config: Config, conversations: list[Conversation], vocab: Vocabulary,
          attr_vocab: AttributeVocabulary, out_dir=None, log_path=None) -> TrainReport:
    trainer = Trainer(config, vocab, attr_vocab, out_dir=out_dir)
    return trainer.train(conversations, log_path=log_path)
