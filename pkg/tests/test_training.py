"""Loss arithmetic against hand-computed values, gating, and the update loop."""

import math

import numpy as np
import pytest

from phredgan import tensor as T
from phredgan.config import Config
from phredgan.corpus import RESERVED, AttributeVocabulary, Conversation, Turn, Vocabulary, make_batches
from phredgan.training import (
    Trainer,
    adv_loss_a,
    adv_loss_d,
    att_loss,
    mle_loss,
    train,
    update_decisions,
)
from phredgan.tensor import Tensor

LN2 = 0.69314718055994529

# hand-computed once with 64-bit arithmetic, asserted against forever
MLE_2TOK_MEAN = 0.54221066727090528   # logits [1,0,0,0]->0 and [0,2,0,0]->1, averaged
ADV_D_ASYM = 0.59800231733837961      # p_gt=[.9,.6], p_gen=[.3,.2]
ADV_G_ASYM = 1.4067053583800182


def t(x):
    return Tensor(np.asarray(x, dtype=np.float32))


# ---------------------------------------------------------------------------
# likelihood loss


def test_mle_loss_two_token_oracle():
    rows = [t([[1.0, 0.0, 0.0, 0.0]]), t([[0.0, 2.0, 0.0, 0.0]])]
    gold = np.array([[0, 1]])
    out = mle_loss(rows, gold, np.ones((1, 2), dtype=np.float32))
    assert out.item() == pytest.approx(MLE_2TOK_MEAN, abs=1e-6)


def test_mle_loss_ignores_masked_positions():
    rows = [t([[1.0, 0.0, 0.0, 0.0]]), t([[0.0, 2.0, 0.0, 0.0]]), t([[9.0, -9.0, 3.0, 1.0]])]
    gold = np.array([[0, 1, 3]])  # last position is padding noise
    mask = np.array([[1.0, 1.0, 0.0]], dtype=np.float32)
    out = mle_loss(rows, gold, mask)
    assert out.item() == pytest.approx(MLE_2TOK_MEAN, abs=1e-6)


def test_mle_loss_uniform_logits_is_log_v():
    rows = [t(np.zeros((2, 5)))]
    out = mle_loss(rows, np.array([[0], [3]]), np.ones((2, 1), dtype=np.float32))
    assert out.item() == pytest.approx(math.log(5.0), abs=1e-6)


def test_mle_loss_matches_float64_reference():
    rng = np.random.default_rng(3)
    B, Tlen, V = 3, 4, 6
    logits = rng.normal(size=(Tlen, B, V)).astype(np.float32)
    gold = rng.integers(0, V, size=(B, Tlen))
    mask = (rng.random((B, Tlen)) > 0.3).astype(np.float32)
    mask[0, 0] = 1.0  # keep at least one live position
    out = mle_loss([t(logits[j]) for j in range(Tlen)], gold, mask)

    x = logits.astype(np.float64)
    logp = x - np.log(np.exp(x - x.max(-1, keepdims=True)).sum(-1, keepdims=True)) - x.max(-1, keepdims=True)
    ce = np.stack([-logp[j][np.arange(B), gold[:, j]] for j in range(Tlen)], axis=1)
    ref = (ce * mask).sum() / mask.sum()
    assert out.item() == pytest.approx(ref, abs=1e-5)


def test_mle_loss_all_masked_rejected():
    with pytest.raises(ValueError):
        mle_loss([t(np.zeros((1, 4)))], np.array([[0]]), np.zeros((1, 1), dtype=np.float32))


# ---------------------------------------------------------------------------
# adversarial losses


def test_adv_losses_at_half_probability():
    half = t(np.full((2, 3), 0.5))
    for fn in (adv_loss_a, adv_loss_d):
        d, g = fn(half, half)
        assert d.item() == pytest.approx(2 * LN2, abs=1e-6)
        assert g.item() == pytest.approx(LN2, abs=1e-6)


def test_adv_losses_asymmetric_oracle():
    d, g = adv_loss_d(t([[0.9, 0.6]]), t([[0.3, 0.2]]))
    assert d.item() == pytest.approx(ADV_D_ASYM, abs=1e-6)
    assert g.item() == pytest.approx(ADV_G_ASYM, abs=1e-6)


def test_adv_losses_respect_masks():
    gt = t([[0.9, 0.01], [0.6, 0.01]])
    gen = t([[0.3, 0.99], [0.2, 0.99]])
    m = np.array([[1.0, 0.0], [1.0, 0.0]], dtype=np.float32)
    d, g = adv_loss_d(gt, gen, gt_mask=m, gen_mask=m)
    assert d.item() == pytest.approx(ADV_D_ASYM, abs=1e-6)
    assert g.item() == pytest.approx(ADV_G_ASYM, abs=1e-6)


def test_adv_losses_clamp_saturated_probs():
    d, g = adv_loss_d(t([[1.0]]), t([[1.0]]))
    assert np.isfinite(d.item()) and np.isfinite(g.item())
    assert g.item() == pytest.approx(0.0, abs=1e-5)
    d2, g2 = adv_loss_d(t([[0.0]]), t([[0.0]]))
    assert np.isfinite(d2.item()) and np.isfinite(g2.item())
    assert g2.item() == pytest.approx(-math.log(1e-7), rel=1e-3)


def test_adv_loss_gradient_signs():
    # pushing p_gen up must lower g_loss; pushing p_gt up must lower d_loss
    gt = Tensor(np.array([[0.7, 0.4]], dtype=np.float32), requires_grad=True)
    gen = Tensor(np.array([[0.3, 0.6]], dtype=np.float32), requires_grad=True)
    with T.tape():
        d, g = adv_loss_d(gt, gen)
        T.backward(T.add(d, T.mul(g, 0.0)))  # d alone
    assert np.all(gt.grad < 0) and np.all(gen.grad > 0)
    gt.grad = gen.grad = None
    with T.tape():
        _, g = adv_loss_d(gt, gen)
        T.backward(g)
    assert gt.grad is None and np.all(gen.grad < 0)


# ---------------------------------------------------------------------------
# attribute loss


def test_att_loss_uniform_binary():
    uni = t(np.full((3, 2), 0.5))
    d, g = att_loss(uni, uni, np.array([0, 1, 0]))
    assert d.item() == pytest.approx(LN2, abs=1e-6)
    assert g.item() == pytest.approx(LN2, abs=1e-6)


def test_att_loss_picks_target_column():
    dist = t([[0.2, 0.5, 0.3]])
    d, g = att_loss(dist, dist, np.array([1]))
    assert d.item() == pytest.approx(LN2, abs=1e-6)
    dist2 = t([[0.2, 0.5, 0.3]])
    d2, _ = att_loss(dist2, dist2, np.array([0]))
    assert d2.item() == pytest.approx(-math.log(0.2), abs=1e-5)


def test_att_loss_sides_are_independent():
    gt = t([[0.9, 0.1]])
    gen = t([[0.25, 0.75]])
    d, g = att_loss(gt, gen, np.array([0]))
    assert d.item() == pytest.approx(-math.log(0.9), abs=1e-5)
    assert g.item() == pytest.approx(-math.log(0.25), abs=1e-5)


def test_att_loss_row_mask():
    gt = t([[0.5, 0.5], [0.001, 0.999]])
    d, _ = att_loss(gt, gt, np.array([0, 0]), row_mask=np.array([1.0, 0.0], dtype=np.float32))
    assert d.item() == pytest.approx(LN2, abs=1e-6)
    with pytest.raises(ValueError):
        att_loss(gt, gt, np.array([0, 0]), row_mask=np.zeros(2, dtype=np.float32))


# ---------------------------------------------------------------------------
# gating


def test_update_decisions_three_regimes():
    cfg = Config(variant="phredgan_d")  # thresholds 0.99 / 0.75
    assert update_decisions(0.995, cfg) == (False, "full")
    assert update_decisions(0.80, cfg) == (True, "full")
    assert update_decisions(0.50, cfg) == (True, "mle_only")


def test_update_decisions_boundaries_are_strict():
    cfg = Config(variant="phredgan_d")
    assert update_decisions(0.99, cfg) == (False, "full")   # not < threshold
    assert update_decisions(0.75, cfg) == (True, "full")


def test_update_decisions_mle_variant():
    cfg = Config(variant="phred")
    assert update_decisions(None, cfg) == (False, "mle_only")
    assert update_decisions(0.1, cfg) == (False, "mle_only")
    with pytest.raises(ValueError):
        update_decisions(None, Config(variant="hredgan"))


# ---------------------------------------------------------------------------
# trainer fixtures


def tiny_vocab():
    return Vocabulary(RESERVED + ["w1", "w2", "w3", "w4"])


def tiny_convs(n=4, flip_attrs=False):
    convs = []
    for i in range(n):
        turns = []
        for k in range(3):
            attr = (i + k) % 2
            if flip_attrs:
                attr = 1 - attr
            toks = [4 + (i + k + j) % 4 for j in range(2 + (i + k) % 3)]
            turns.append(Turn(attribute_id=attr, tokens=toks))
        convs.append(Conversation(id=f"c{i}", turns=turns))
    return convs


def tiny_config(variant="phredgan_d", **kw):
    base = dict(variant=variant, vocab_size=8, max_len=6, max_turns=4, layers=1,
                hidden=3, emb_dim=3, attr_dim=2, attn_dim=2, batch_size=2,
                epochs=1, seed=11, learning_rate=0.1)
    base.update(kw)
    return Config(**base)


def make_trainer(variant="phredgan_d", **kw):
    cfg = tiny_config(variant, **kw)
    return Trainer(cfg, tiny_vocab(), AttributeVocabulary(["questioner", "helper"]))


def one_batch(cfg):
    return make_batches(tiny_convs(), cfg.batch_size, cfg.max_turns, cfg.max_len, cfg.seed)[0]


# ---------------------------------------------------------------------------
# parameter grouping


def test_parameter_groups_per_variant():
    tr = make_trainer("phredgan_d")
    assert "datt." in tr.d_prefixes and "shared.attr_emb" not in tr.d_prefixes
    tr_a = make_trainer("phredgan_a")
    assert "shared.attr_emb" in tr_a.d_prefixes and "datt." not in tr_a.d_prefixes
    tr_h = make_trainer("hredgan")
    assert tr_h.d_prefixes == ["dadv.", "shared.word_emb", "shared.ernn"]


def test_group_membership():
    tr = make_trainer("phredgan_d")
    d_group = {id(x) for x in tr.store.tensors(tr.d_prefixes)}
    g_group = {id(x) for x in tr.store.tensors(tr.g_prefixes)}
    # shared pieces sit in both groups
    assert id(tr.store["shared.word_emb"]) in d_group & g_group
    assert id(tr.store["shared.ernn.l0.fwd.w_in"]) in d_group & g_group
    # generator-only parameters never join the discriminator step
    assert id(tr.store["gen.out_proj.w"]) not in d_group
    # attribute-classifier parameters never join the generator step
    assert id(tr.store["datt.head.w"]) not in g_group
    assert id(tr.store["datt.head.w"]) in d_group
    # the attribute table belongs to the generator group only for this variant
    assert id(tr.store["shared.attr_emb"]) in g_group - d_group


# ---------------------------------------------------------------------------
# step mechanics


def test_train_step_record_fields():
    tr = make_trainer("phredgan_d")
    rec = tr.train_step(one_batch(tr.config))
    assert rec.step == 1
    assert np.isfinite(rec.mle) and rec.mle > 0
    assert rec.acc is not None and 0.0 <= rec.acc <= 1.0
    assert rec.d_loss is not None and rec.d_att is not None
    assert rec.d_updated is True  # a fresh discriminator sits near chance
    # near-chance accuracy keeps the generator on likelihood only
    assert rec.g_mode == "mle_only"
    assert rec.g_adv is None and rec.g_att is None
    j = rec.to_json()
    assert j["step"] == 1 and j["g_mode"] == "mle_only"


def test_phred_step_never_touches_discriminators():
    tr = make_trainer("phred")
    assert tr.dadv is None and tr.datt is None
    rec = tr.train_step(one_batch(tr.config))
    assert rec.acc is None and rec.d_loss is None and rec.g_adv is None
    assert rec.d_updated is False and rec.g_mode == "mle_only"


def test_phredgan_a_has_no_attribute_classifier():
    tr = make_trainer("phredgan_a")
    assert tr.datt is None
    rec = tr.train_step(one_batch(tr.config))
    assert rec.d_att is None and rec.g_att is None
    assert rec.d_loss is not None


def test_step_changes_parameters_and_is_reproducible():
    runs = []
    for _ in range(2):
        tr = make_trainer("phredgan_d")
        before = {k: v.copy() for k, v in tr.store.state().items()}
        recs = [tr.train_step(b) for b in
                make_batches(tiny_convs(), 2, 4, 6, tr.config.seed)]
        runs.append(({k: v.copy() for k, v in tr.store.state().items()},
                     [r.mle for r in recs]))
        moved = [k for k, v in tr.store.state().items()
                 if not np.array_equal(before[k], v)]
        assert "shared.word_emb" in moved and any(k.startswith("gen.") for k in moved)
    (s1, m1), (s2, m2) = runs
    assert m1 == m2
    for k in s1:
        assert np.array_equal(s1[k], s2[k]), k


def test_grads_cleared_between_steps():
    tr = make_trainer("phredgan_d")
    tr.train_step(one_batch(tr.config))
    assert all(p.grad is None for p in tr.store.tensors())


def test_loss_composition_is_linear_in_lambdas():
    lm, la, lt = 0.7, 1.3, 0.5
    tr = make_trainer("phredgan_d", lambda_mle=lm, lambda_adv=la, lambda_att=lt)
    batch = one_batch(tr.config)
    noises = tr._batch_noises(batch)
    fakes = tr._forward(batch, noises)["fakes"]  # no tape: values only

    def grads_of(key_weights):
        with T.tape():
            fwd = tr._forward(batch, noises, fakes=fakes, want_gt_side=False)
            loss = None
            for key, w in key_weights:
                term = T.mul(fwd[key], w)
                loss = term if loss is None else T.add(loss, term)
            T.backward(loss)
        out = {n: (tr.store[n].grad.copy() if tr.store[n].grad is not None
                   else np.zeros_like(tr.store[n].data)) for n in tr.store.names()}
        tr.store.zero_grad()
        return out

    combined = grads_of([("mle", lm), ("g_adv", la), ("g_att", lt)])
    g_m = grads_of([("mle", 1.0)])
    g_a = grads_of([("g_adv", 1.0)])
    g_t = grads_of([("g_att", 1.0)])
    for n in combined:
        expect = lm * g_m[n] + la * g_a[n] + lt * g_t[n]
        np.testing.assert_allclose(combined[n], expect, rtol=1e-4, atol=1e-5)


# ---------------------------------------------------------------------------
# variant reductions


def test_hredgan_ignores_attribute_relabeling():
    final = []
    for flip in (False, True):
        tr = make_trainer("hredgan")
        for b in make_batches(tiny_convs(flip_attrs=flip), 2, 4, 6, tr.config.seed):
            tr.train_step(b)
        final.append(tr.store.state())
    for k in final[0]:
        assert np.array_equal(final[0][k], final[1][k]), k


def test_phredgan_d_is_attribute_sensitive():
    final = []
    for flip in (False, True):
        tr = make_trainer("phredgan_d")
        for b in make_batches(tiny_convs(flip_attrs=flip), 2, 4, 6, tr.config.seed):
            tr.train_step(b)
        final.append(tr.store.state())
    assert any(not np.array_equal(final[0][k], final[1][k]) for k in final[0])


# ---------------------------------------------------------------------------
# epoch loop


def test_train_writes_log_and_checkpoint(tmp_path):
    cfg = tiny_config("phredgan_d", epochs=2)
    report = train(cfg, tiny_convs(), tiny_vocab(),
                   AttributeVocabulary(["questioner", "helper"]),
                   out_dir=tmp_path, log_path=tmp_path / "log.jsonl")
    assert not report.aborted
    assert len(report.steps) == 2 * 2  # 4 convs / batch 2, times 2 epochs
    assert report.checkpoint_path == str(tmp_path / "final")
    assert (tmp_path / "final" / "manifest.json").is_file()
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert len(lines) == len(report.steps)
    import json as _json
    first = _json.loads(lines[0])
    assert first["epoch"] == 0 and first["step"] == 1
    assert np.isfinite(report.final_mle)


def test_divergence_aborts_with_checkpoint(tmp_path):
    cfg = tiny_config("phredgan_d")
    tr = Trainer(cfg, tiny_vocab(), AttributeVocabulary(["questioner", "helper"]),
                 out_dir=tmp_path)
    tr.store["gen.out_proj.w"].data[:] = np.nan
    report = tr.train(tiny_convs())
    assert report.aborted and "non-finite" in report.abort_reason
    assert report.checkpoint_path == str(tmp_path / "aborted")
    assert (tmp_path / "aborted" / "manifest.json").is_file()
    assert len(report.steps) == 1  # stopped on the first bad step
