"""Word-level adversarial discriminator and utterance-level attribute discriminator.

Both read utterances through the generator's own word-embedding table
(the same Tensor object, not a copy) and are seeded with the dialogue
context state, so context and embeddings receive gradients from the
discriminator losses too.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import BiGruEncoder, GruStack, Linear, ParameterStore, masked_update
from .tensor import Tensor


class AdvDiscriminator:
    """Per-word real/generated probability over an utterance.

    `conditioned` selects the attribute-aware flavor: each word input is
    the word embedding concatenated with the target attribute embedding.
    The unconditioned flavor rejects attribute arguments outright.
    """

    def __init__(self, store: ParameterStore, word_emb: Tensor, attr_emb: Tensor | None,
                 hidden: int, layers: int, conditioned: bool):
        if conditioned and attr_emb is None:
            raise ValueError("conditioned discriminator needs the attribute embedding table")
        self.word_emb = word_emb
        self.attr_emb = attr_emb
        self.conditioned = conditioned
        emb_dim = word_emb.data.shape[1]
        in_dim = emb_dim + (attr_emb.data.shape[1] if conditioned else 0)
        self.rnn = BiGruEncoder(store, "dadv.rnn", in_dim, hidden, layers)
        self.head = Linear(store, "dadv.head", 2 * hidden, 1)

    def word_probs(self, context_hs: list[Tensor], tokens: np.ndarray, mask: np.ndarray,
                   target_attr: np.ndarray | None = None) -> Tensor:
        """(B, T) probabilities that each word is ground truth."""
        if self.conditioned and target_attr is None:
            raise ValueError("attribute-conditioned discriminator requires target_attr")
        if not self.conditioned and target_attr is not None:
            raise ValueError("this discriminator is unconditioned; do not pass target_attr")
        B, Tlen = tokens.shape
        if Tlen < 1:
            raise ValueError("empty utterance")
        a = T.embed(self.attr_emb, target_attr) if self.conditioned else None
        steps = []
        for t in range(Tlen):
            e = T.embed(self.word_emb, tokens[:, t])
            steps.append(T.concat([e, a], axis=-1) if a is not None else e)
        word_outs, _ = self.rnn.run(steps, mask, init=context_hs)
        H2 = word_outs.data.shape[2]
        logits = self.head(T.reshape(word_outs, (B * Tlen, H2)))
        return T.sigmoid(T.reshape(logits, (B, Tlen)))


class AttDiscriminator:
    """Predicts the utterance's attribute distribution from its words + context."""

    def __init__(self, store: ParameterStore, word_emb: Tensor, n_attrs: int,
                 hidden: int, layers: int):
        self.word_emb = word_emb
        emb_dim = word_emb.data.shape[1]
        self.rnn = GruStack(store, "datt.rnn", emb_dim, hidden, layers)
        self.head = Linear(store, "datt.head", hidden, n_attrs)

    def predict(self, context_hs: list[Tensor], tokens: np.ndarray, mask: np.ndarray) -> Tensor:
        """(B, Vc) softmax distribution; PAD steps freeze the recurrence."""
        B, Tlen = tokens.shape
        if Tlen < 1:
            raise ValueError("empty utterance")
        hs = list(context_hs)
        for t in range(Tlen):
            hs_new = self.rnn.step(T.embed(self.word_emb, tokens[:, t]), hs)
            hs = [masked_update(nh, oh, mask[:, t]) for nh, oh in zip(hs_new, hs)]
        return T.softmax(self.head(hs[-1]))


def adv_accuracy(gt_probs: np.ndarray, gt_mask: np.ndarray,
                 gen_probs: np.ndarray, gen_mask: np.ndarray) -> float:
    """Fraction of masked word positions the discriminator classifies right.

    Ground-truth words count as correct at p > 0.5, generated words at
    p < 0.5; exactly 0.5 counts as incorrect on both sides.
    """
    total = float(gt_mask.sum() + gen_mask.sum())
    if total == 0:
        raise ValueError("adv_accuracy over an empty batch")
    correct = float(((gt_probs > 0.5) * gt_mask).sum() + ((gen_probs < 0.5) * gen_mask).sum())
    return correct / total
