import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memescope import attribution as attr
from memescope.attribution import BaselineSpec, modality_contributions
from memescope.data import DatasetSplit, MemeRecord, Region
from memescope.errors import ValidationError
from memescope.model import ModelCheckpoint, ModelConfig, embed, encode, encoder
from memescope import autodiff as ad
from memescope.tokenizer import tokenize

from conftest import make_record


def _linear_ckpt(ckpt: ModelCheckpoint) -> ModelCheckpoint:
    """Zero query/key weights (uniform attention), zero FFN output, no layer norm."""
    cfg = ModelConfig(**{**ckpt.config.to_dict(), "layer_norm": False})
    params = {k: v.copy() for k, v in ckpt.params.items()}
    for i in range(cfg.num_layers):
        for name in ("attn.q.weight", "attn.k.weight", "ffn.out.weight"):
            params[f"layers.{i}.{name}"][:] = 0.0
    return ModelCheckpoint(cfg, params, ckpt.vocab, {})


def _logit_grad(ckpt, enc, text, vis):
    gt, gv, logits = attr.batch_gradients(ckpt, enc, text[None], vis[None])
    return gt, gv, float(logits[0])


# --- modality contributions -------------------------------------------------

def test_modality_contribution_examples():
    assert modality_contributions(np.zeros((3, 4)), np.zeros((2, 4))) == (0.0, 0.0)
    t, v = modality_contributions(np.array([[3.0, -4.0]]), np.zeros((5, 2)))
    assert (t, v) == (1.0, 0.0)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 12), st.integers(1, 20), st.integers(0, 10_000))
def test_cauchy_schwarz_bound(n_text, n_vis, seed):
    rng = np.random.default_rng(seed)
    gt = rng.normal(size=(n_text, 5)) * rng.exponential(size=(n_text, 1))
    gv = rng.normal(size=(n_vis, 5)) * rng.exponential(size=(n_vis, 1))
    t, v = modality_contributions(gt, gv)
    assert t * t <= n_text + 1e-12 and v * v <= n_vis + 1e-12
    assert t * t + v * v <= (n_text + n_vis) + 1e-12


def test_zero_classifier_head_gives_zero_gradients(small_ckpt):
    small_ckpt.params["classifier.weight"][:] = 0.0
    g = attr.input_gradients(small_ckpt, make_record(dim=8))
    assert not g.text.any() and not g.visual.any()
    assert attr.modality_attribution(small_ckpt, make_record(dim=8)) == (0.0, 0.0)


def test_input_gradients_match_finite_differences(small_ckpt):
    rec = make_record(n_regions=4, dim=8)
    enc = encode(small_ckpt, rec)
    params = small_ckpt.tensors()
    t0, v0 = embed(params, enc.tokens.ids[None], enc.features[None])
    text, vis = ad.Tensor(t0.data.copy(), requires_grad=True), ad.Tensor(v0.data.copy(), requires_grad=True)
    f = lambda _: ad.reshape(encoder(params, small_ckpt.config, text, vis, enc.key_mask()[None])[0], ())  # noqa: E731
    g = attr.input_gradients(small_ckpt, rec)
    rng = np.random.default_rng(0)
    tpos = np.flatnonzero(~enc.tokens.pad_mask)
    for _ in range(20):
        i, j = int(rng.integers(len(tpos))), int(rng.integers(small_ckpt.config.hidden_dim))
        num = ad.numerical_grad(f, text, (0, tpos[i], j))
        assert ad.relative_error(g.text[i, j], num) <= 1e-4
        r = int(rng.integers(4))
        num = ad.numerical_grad(f, vis, (0, r, j))
        assert ad.relative_error(g.visual[r, j], num) <= 1e-4


def test_duplicate_regions_get_identical_gradients(small_ckpt):
    rec = make_record(n_regions=4, dim=8)
    rec.regions[3] = Region(rec.regions[3].bbox, rec.regions[1].feature.copy())
    g = attr.input_gradients(small_ckpt, rec)
    np.testing.assert_allclose(g.visual[1], g.visual[3], rtol=0, atol=1e-15)


def test_specials_are_excluded_unless_requested(small_ckpt):
    tokens = tokenize("the goat", small_ckpt.vocab, small_ckpt.config.max_text_len)
    assert attr.retained_text_rows(tokens).tolist() == [1, 2]
    assert attr.retained_text_rows(tokens, include_special=True).tolist() == [0, 1, 2, 3]
    rec = make_record(dim=8)
    g = attr.input_gradients(small_ckpt, rec)
    rows = attr.retained_text_rows(encode(small_ckpt, rec).tokens)
    assert attr.modality_attribution(small_ckpt, rec) == modality_contributions(g.text[rows], g.visual)
    assert attr.modality_attribution(small_ckpt, rec, include_special=True) == modality_contributions(g.text, g.visual)


def test_scaling_head_leaves_modality_unchanged_and_scales_ig(small_ckpt):
    rec = make_record(n_regions=4, dim=8)
    scaled = ModelCheckpoint(small_ckpt.config, {k: v.copy() for k, v in small_ckpt.params.items()}, small_ckpt.vocab)
    scaled.params["classifier.weight"] *= 4.0
    scaled.params["classifier.bias"] *= 4.0
    a, b = attr.modality_attribution(small_ckpt, rec), attr.modality_attribution(scaled, rec)
    np.testing.assert_allclose(a, b, rtol=1e-12)
    ig_a = attr.integrated_gradients(small_ckpt, rec, steps=16)
    ig_b = attr.integrated_gradients(scaled, rec, steps=16)
    # power-of-two scaling is exact in binary floating point
    np.testing.assert_array_equal(ig_b.text_scores, 4.0 * ig_a.text_scores)
    np.testing.assert_array_equal(ig_b.region_scores, 4.0 * ig_a.region_scores)


def test_dataset_stats_aggregation_rules(small_ckpt):
    one = DatasetSplit([make_record("a", dim=8)])
    stats = attr.dataset_modality_stats(small_ckpt, one)
    assert stats.text_std == 0.0 and stats.visual_std == 0.0
    recs = [make_record(f"r{i}", n_regions=2 + i, dim=8, seed=i) for i in range(3)]
    base = attr.dataset_modality_stats(small_ckpt, DatasetSplit(recs))
    dup = [make_record(f"d{i}", n_regions=2 + i, dim=8, seed=i) for i in range(3)]
    doubled = attr.dataset_modality_stats(small_ckpt, DatasetSplit(recs + dup))
    assert doubled.text_avg == pytest.approx(base.text_avg, rel=1e-12)
    assert doubled.text_std == pytest.approx(base.text_std, rel=1e-9)
    assert doubled.visual_std == pytest.approx(base.visual_std, rel=1e-9)
    with pytest.raises(ValidationError, match="empty"):
        attr.dataset_modality_stats(small_ckpt, DatasetSplit([]))


# --- integrated gradients -----------------------------------------------------

def test_midpoint_alphas():
    np.testing.assert_array_equal(attr.midpoint_alphas(4), [0.125, 0.375, 0.625, 0.875])
    with pytest.raises(ValidationError):
        attr.midpoint_alphas(0)


@pytest.mark.parametrize("steps", [1, 2, 7, 64])
def test_ig_is_exact_on_linear_model(small_ckpt, steps):
    lin = _linear_ckpt(small_ckpt)
    rec = make_record(n_regions=5, dim=8)
    enc = encode(lin, rec)
    x_t, x_v = attr._embedded(lin, enc.tokens.ids, enc.features)
    b_t, b_v = attr.baseline_embeddings(lin, enc, BaselineSpec())
    w_t, w_v, _ = _logit_grad(lin, enc, x_t, x_v)
    res = attr.integrated_gradients(lin, rec, steps=steps)
    tpos, rpos = np.flatnonzero(~enc.tokens.pad_mask), np.flatnonzero(enc.region_mask)
    np.testing.assert_allclose(res.text_scores, (w_t * (x_t - b_t)).sum(-1)[tpos], rtol=0, atol=1e-9)
    np.testing.assert_allclose(res.region_scores, (w_v * (x_v - b_v)).sum(-1)[rpos], rtol=0, atol=1e-9)
    assert res.completeness_delta <= 1e-9


def test_linear_model_really_is_linear(small_ckpt):
    lin = _linear_ckpt(small_ckpt)
    enc = encode(lin, make_record(dim=8))
    x_t, x_v = attr._embedded(lin, enc.tokens.ids, enc.features)
    rng = np.random.default_rng(0)
    d_t, d_v = rng.normal(size=x_t.shape), rng.normal(size=x_v.shape)
    f = lambda a: _logit_grad(lin, enc, x_t + a * d_t, x_v + a * d_v)[2]  # noqa: E731
    assert f(2.0) - f(1.0) == pytest.approx(f(1.0) - f(0.0), abs=1e-10)


def test_ig_at_baseline_is_zero(small_ckpt):
    rec = make_record(dim=8)
    enc = encode(small_ckpt, rec)
    x_t, x_v = attr._embedded(small_ckpt, enc.tokens.ids, enc.features)
    res = attr.integrated_gradients(small_ckpt, rec, baseline=BaselineSpec(text_emb=x_t, visual_emb=x_v), steps=8)
    assert not res.text_scores.any() and not res.region_scores.any()


def test_ig_completeness_converges_at_second_order(small_ckpt):
    # midpoint rule: once asymptotic, doubling steps divides the error by ~4
    rec = make_record(n_regions=5, dim=8)
    deltas = [attr.integrated_gradients(small_ckpt, rec, steps=s).completeness_delta for s in (128, 256, 512)]
    for a, b in zip(deltas, deltas[1:]):
        assert 3.0 <= a / b <= 5.0


def test_ig_chunking_does_not_change_result(small_ckpt):
    rec = make_record(dim=8)
    a = attr.integrated_gradients(small_ckpt, rec, steps=10, chunk=3)
    b = attr.integrated_gradients(small_ckpt, rec, steps=10, chunk=64)
    np.testing.assert_allclose(a.text_scores, b.text_scores, rtol=1e-12, atol=1e-15)


def test_predicted_target_flips_sign_for_negative_logit(small_ckpt):
    rec = make_record(dim=8)
    logit = attr.input_gradients(small_ckpt, rec).logit
    h = attr.integrated_gradients(small_ckpt, rec, target="hateful", steps=8)
    p = attr.integrated_gradients(small_ckpt, rec, target="predicted", steps=8)
    sign = 1.0 if logit >= 0 else -1.0
    np.testing.assert_array_equal(p.text_scores, sign * h.text_scores)
    with pytest.raises(ValidationError):
        attr.integrated_gradients(small_ckpt, rec, target="bogus")


def test_gradient_attribution_scores_are_grad_times_delta(small_ckpt):
    rec = make_record(n_regions=3, dim=8)
    res = attr.gradient_attribution(small_ckpt, rec)
    enc = encode(small_ckpt, rec)
    x_t, x_v = attr._embedded(small_ckpt, enc.tokens.ids, enc.features)
    _, b_v = attr.baseline_embeddings(small_ckpt, enc, BaselineSpec())
    g = attr.input_gradients(small_ckpt, rec)
    np.testing.assert_allclose(res.region_scores, (g.visual * (x_v - b_v)[:3]).sum(-1), rtol=1e-12)
    assert (res.text_modality_sum, res.visual_modality_sum) == attr.modality_attribution(small_ckpt, rec)


# --- word and region summaries -------------------------------------------------

def test_token_scores_sum_piece_spans(small_ckpt):
    rec = MemeRecord("w", "the dishwasher goat", 1, make_record(dim=8).regions)
    res = attr.integrated_gradients(small_ckpt, rec, steps=4)
    tokens = encode(small_ckpt, rec).tokens
    words = attr.token_scores(res, tokens)
    assert [w for w, _ in words] == ["the", "dishwasher", "goat"]
    s = res.text_scores
    assert words[0][1] == s[1]
    assert words[1][1] == pytest.approx(s[2] + s[3] + s[4], abs=1e-15)
    assert words[2][1] == s[5]


def test_rank_regions_examples():
    assert attr.rank_regions([0.1, -0.9, 0.5], 2) == [1, 2]
    assert attr.rank_regions([0.3] * 12, 9) == list(range(9))
    assert attr.rank_regions([0.2, 0.1], 9) == [0, 1]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=30), st.integers(1, 40))
def test_rank_regions_is_permutation_prefix(scores, k):
    out = attr.rank_regions(scores, k)
    assert len(out) == min(k, len(scores)) and len(set(out)) == len(out)
    assert all(0 <= i < len(scores) for i in out)
