import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csc_rcl.corpus import Batch, SentencePair
from csc_rcl.errors import NumericalError
from csc_rcl.lexicon import Lexicon
from csc_rcl.rcl import (NegativeSets, RclConfig, dump_pairs, mine_pairs, rcl_confusion_loss,
                         rcl_gradients, rcl_pinyin_loss, rcl_terms, total_loss)

from conftest import central_diff, oracle_anchor_loss, oracle_mine, rel_error

SQRT_HALF = math.sqrt(0.5)
# log(1 + e^{cos 45deg / tau}) for tau = 1 and tau = 0.5, evaluated by hand with math.log/exp
K3_TAU1 = 1.10794030765725
K3_TAU05 = 1.6318352839548387


@pytest.fixture
def k3():
    return np.array([[1.0, 0.0], [0.0, 1.0], [SQRT_HALF, SQRT_HALF]])


def random_lexicon(rng, n_chars=40, n_keys=12):
    chars = [chr(0x4E00 + i) for i in range(n_chars)]
    keys = [f"k{'abcdefghijklmnop'[j]}" for j in range(n_keys)]
    pinyin = {c: keys[rng.integers(n_keys)] for c in chars if rng.random() < 0.9}
    conf = {}
    for c in chars:
        k = int(rng.integers(0, 4))
        conf[c] = "".join(rng.choice(chars, size=k, replace=False))
    return Lexicon.from_tables(chars + ["，"], pinyin, conf, allow_missing_pinyin=True)


# mining -----------------------------------------------------------------------

def test_sample_batch(sample_lex, backend):
    c = sample_lex.char_id
    sents = ["我喜欢跳舞", "希望", "无观"]
    batch = Batch(tuple(SentencePair(tuple(sample_lex.encode(s)), tuple(sample_lex.encode(s)))
                        for s in sents))
    sets = mine_pairs(batch, sample_lex, RclConfig())
    ids = batch.source_ids.tolist()
    chars = [sample_lex.char(i) for i in ids]
    s_pairs = {(chars[i], chars[j]) for i in range(len(ids)) for j in sets.S(i)}
    w_pairs = {(chars[i], chars[j]) for i in range(len(ids)) for j in sets.W(i)}
    assert s_pairs == {("喜", "希"), ("希", "喜"), ("舞", "无"), ("无", "舞")}
    assert ("欢", "观") in w_pairs
    assert ("观", "欢") not in w_pairs
    assert c("望") in ids


def test_no_shared_keys_gives_empty_sets(backend):
    lex = Lexicon.from_tables("甲乙丙", {"甲": "a", "乙": "b", "丙": "c"})
    ids = np.array(lex.encode("甲乙丙"))
    assert mine_pairs(ids, lex, RclConfig()).is_empty()


def test_identical_characters_excluded_by_default(sample_lex, backend):
    ids = np.array(sample_lex.encode("喜喜希"))
    on = mine_pairs(ids, sample_lex, RclConfig())
    off = mine_pairs(ids, sample_lex, RclConfig(exclude_identical=False))
    assert on.S(0) == {2}
    assert off.S(0) == {1, 2}


def test_reserved_ids_get_empty_sets(sample_lex, backend):
    ids = np.array([0, 1] + sample_lex.encode("喜希"))
    sets = mine_pairs(ids, sample_lex, RclConfig())
    assert sets.S(0) == sets.S(1) == set() and sets.W(1) == set()
    assert sets.S(2) == {3}


@pytest.mark.parametrize("flags", [(True, True, True), (True, False, True), (False, True, False),
                                   (True, True, False)])
def test_mining_matches_brute_force(backend, flags):
    rng = np.random.default_rng(1234)
    lex = random_lexicon(rng)
    use_p, use_c, excl = flags
    cfg = RclConfig(use_pinyin=use_p, use_confusion=use_c, exclude_identical=excl, alpha=0.0)
    for _ in range(60):
        k = int(rng.integers(1, 33))
        ids = rng.integers(0, lex.vocab_size, size=k)
        sets = mine_pairs(ids, lex, cfg)
        S, W = oracle_mine(ids, lex, use_p, use_c, excl)
        assert all(sets.S(i) == S[i] and sets.W(i) == W[i] for i in range(k))


def test_backends_agree():
    from csc_rcl import kernels

    impls = kernels.available_backends()
    if len(impls) < 2:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(5)
    lex = random_lexicon(rng)
    for _ in range(20):
        ids = rng.integers(0, lex.vocab_size, size=30)
        args = (ids, lex.pinyin_ids, lex.confusion_indptr, lex.confusion_indices, True, True, True)
        s1, w1 = impls["python"].mine_masks(*args)
        s2, w2 = impls["cython"].mine_masks(*args)
        assert np.array_equal(s1, s2) and np.array_equal(w1, w2)
        sim = np.clip(rng.normal(size=(30, 30)), -1, 1)
        a = impls["python"].rcl_rows(sim, s1, w1, 0.3)
        b = impls["cython"].rcl_rows(sim, s1, w1, 0.3)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)


def test_dump_pairs(sample_lex):
    ids = np.array(sample_lex.encode("喜欢希观"))
    sets = mine_pairs(ids, sample_lex, RclConfig())
    dump = dump_pairs(ids, sets, sample_lex)
    assert dump[0] == {"anchor_index": 0, "char": "喜", "pinyin": "xi", "S": [2], "W": []}
    assert dump[1]["W"] == [3]


# single-anchor losses -------------------------------------------------------------

def test_two_anchor_identity():
    h = np.array([[0.3, -1.2, 2.0], [1.5, 0.1, -0.7]])
    for tau in (0.05, 0.1, 1.0, 3.0):
        assert abs(rcl_pinyin_loss(h, {1}, 0, tau)) <= 1e-12
        assert abs(rcl_confusion_loss(h, {1}, 0, tau)) <= 1e-12


def test_k3_hand_values(k3):
    assert rcl_pinyin_loss(k3, {1}, 0, 1.0) == pytest.approx(K3_TAU1, abs=1e-12)
    assert rcl_pinyin_loss(k3, {1}, 0, 0.5) == pytest.approx(K3_TAU05, abs=1e-12)
    assert K3_TAU1 == pytest.approx(oracle_anchor_loss(k3, [1], 0, 1.0), abs=1e-12)


def test_confusion_form_equals_pinyin_form():
    rng = np.random.default_rng(0)
    h = rng.normal(size=(6, 4))
    assert rcl_confusion_loss(h, {2, 4}, 1, 0.2) == rcl_pinyin_loss(h, {2, 4}, 1, 0.2)


def test_random_k5_matches_scalar_oracle():
    rng = np.random.default_rng(42)
    h = rng.normal(size=(5, 3))
    for i, members in [(0, [1, 3]), (2, [4]), (4, [0, 1, 2, 3])]:
        assert rcl_confusion_loss(h, members, i, 0.7) == pytest.approx(
            oracle_anchor_loss(h, members, i, 0.7), abs=1e-10)


def test_zero_row_is_an_error():
    h = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    with pytest.raises(NumericalError):
        rcl_pinyin_loss(h, {1}, 0, 1.0)
    sets = NegativeSets.from_lists(3, S={0: {2}})
    with pytest.raises(NumericalError, match=r"\[1\]"):
        rcl_terms(h, sets, 1.0)


def test_small_tau_stays_finite():
    rng = np.random.default_rng(3)
    h = rng.normal(size=(8, 4))
    sets = NegativeSets.from_lists(8, S={i: {(i + 1) % 8} for i in range(8)})
    l_p, _, g = rcl_terms(h, sets, 1e-3)
    assert np.all(np.isfinite(l_p)) and np.all(np.isfinite(g))


# total loss ---------------------------------------------------------------------

def test_alpha_zero_total_is_correction_loss(k3):
    sets = NegativeSets.from_lists(3, S={0: {1}})
    br = total_loss(2.0, k3, sets, RclConfig(alpha=0.0))
    assert br.total == 2.0
    assert br.l_rcl == pytest.approx(oracle_anchor_loss(k3, [1], 0, 0.1))


def test_empty_sets_zero_rcl(k3):
    br = total_loss(1.3, k3, NegativeSets.from_lists(3), RclConfig(alpha=0.5))
    assert br.l_rcl == 0.0 and br.total == 1.3


def test_k3_composition(k3):
    sets = NegativeSets.from_lists(3, S={0: {1}})
    br = total_loss(2.0, k3, sets, RclConfig(alpha=0.1, tau=1.0))
    assert br.l_p[0] == pytest.approx(K3_TAU1, abs=1e-12)
    assert br.total == pytest.approx(2.0 - 0.1 * K3_TAU1, abs=1e-12)
    assert br.total == pytest.approx(1.889205969234275, abs=1e-12)


def test_breakdown_invariant():
    rng = np.random.default_rng(9)
    h = rng.normal(size=(7, 5))
    sets = NegativeSets.from_lists(7, S={0: {1, 2}, 3: {4}}, W={0: {6}, 5: {1}})
    cfg = RclConfig(alpha=0.3, tau=0.4)
    br = total_loss(0.9, h, sets, cfg)
    assert br.l_rcl == pytest.approx(float(np.sum(br.l_p + br.l_c)), abs=1e-12)
    assert br.total == pytest.approx(0.9 - 0.3 * br.l_rcl, abs=1e-12)
    for i in range(7):
        assert br.l_p[i] == pytest.approx(oracle_anchor_loss(h, sorted(sets.S(i)), i, 0.4), abs=1e-10)
        assert br.l_c[i] == pytest.approx(oracle_anchor_loss(h, sorted(sets.W(i)), i, 0.4), abs=1e-10)


def test_ablation_switches_zero_their_channel(sample_lex, backend):
    ids = np.array(sample_lex.encode("我喜欢跳舞希望无观欣惯"))
    h = np.random.default_rng(0).normal(size=(len(ids), 6))
    full = total_loss(0.0, h, mine_pairs(ids, sample_lex, RclConfig()), RclConfig())
    assert full.l_p.any() and full.l_c.any()
    no_conf = RclConfig(use_confusion=False)
    no_pin = RclConfig(use_pinyin=False)
    a = total_loss(0.0, h, mine_pairs(ids, sample_lex, no_conf), no_conf)
    b = total_loss(0.0, h, mine_pairs(ids, sample_lex, no_pin), no_pin)
    assert not a.l_c.any() and np.array_equal(a.l_p, full.l_p)
    assert not b.l_p.any() and np.array_equal(b.l_c, full.l_c)


def test_config_validation():
    with pytest.raises(ValueError):
        RclConfig(tau=0.0)
    with pytest.raises(ValueError):
        RclConfig(alpha=0.1, use_pinyin=False, use_confusion=False)
    RclConfig(alpha=0.0, use_pinyin=False, use_confusion=False)


# invariances --------------------------------------------------------------------

def _mixed_sets(k, rng):
    S = {i: set(rng.choice([j for j in range(k) if j != i], size=2, replace=False).tolist())
         for i in range(0, k, 2)}
    W = {i: {(i + 3) % k} for i in range(1, k, 3)}
    return NegativeSets.from_lists(k, S=S, W=W)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(6, 4))
    sets = _mixed_sets(6, rng)
    a = rcl_terms(h, sets, 0.3)
    b = rcl_terms(h * scale, sets, 0.3)
    np.testing.assert_allclose(a[0], b[0], atol=1e-9)
    np.testing.assert_allclose(a[1], b[1], atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(6, 4))
    sets = _mixed_sets(6, rng)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    a = total_loss(0.0, h, sets, RclConfig(tau=0.3))
    b = total_loss(0.0, h @ q, sets, RclConfig(tau=0.3))
    assert abs(a.l_rcl - b.l_rcl) <= 1e-9


def test_single_negative_loss_falls_as_it_gets_closer():
    # dL/dz_s = p_s - 1/|S| < 0 when |S| = 1 and K >= 3
    rng = np.random.default_rng(2)
    h = rng.normal(size=(5, 3))
    prev = None
    for t in np.linspace(0.0, 0.95, 12):
        g = h.copy()
        g[1] = (1 - t) * h[1] + t * h[0]
        val = rcl_pinyin_loss(g, {1}, 0, 0.5)
        if prev is not None:
            assert val < prev
        prev = val


def test_multi_negative_sensitivity_follows_softmax_weight():
    rng = np.random.default_rng(4)
    h = rng.normal(size=(6, 3))
    members = {1, 2, 3}
    sets = NegativeSets.from_lists(6, S={0: members})
    from csc_rcl import kernels
    from csc_rcl.rcl import cosine_matrix
    sim = cosine_matrix(h)
    _, _, d_sim = kernels.rcl_rows(sim, sets.s_mask, sets.w_mask, 0.5)
    z = sim[0] / 0.5
    z[0] = -np.inf
    p = np.exp(z - z.max())
    p /= p.sum()
    for s in members:
        assert d_sim[0, s] == pytest.approx((p[s] - 1 / 3) / 0.5, abs=1e-12)


# gradients ---------------------------------------------------------------------

def test_empty_sets_zero_gradient():
    h = np.random.default_rng(0).normal(size=(4, 3))
    g = rcl_gradients(h, NegativeSets.from_lists(4), RclConfig(alpha=0.1))
    assert not g.any()


@pytest.mark.parametrize("tau", [1.0, 0.5, 0.1])
def test_k3_gradient_matches_finite_differences(k3, tau, backend):
    cfg = RclConfig(alpha=0.1, tau=tau)
    sets = NegativeSets.from_lists(3, S={0: {1}})
    h = k3.copy()
    analytic = rcl_gradients(h, sets, cfg)
    numeric = central_diff(lambda: -cfg.alpha * total_loss(0.0, h, sets, cfg).l_rcl, h)
    assert rel_error(analytic, numeric) <= 1e-3


def test_mixed_gradient_matches_finite_differences(backend):
    rng = np.random.default_rng(11)
    h = rng.normal(size=(8, 5))
    sets = _mixed_sets(8, rng)
    cfg = RclConfig(alpha=0.7, tau=0.3)
    analytic = rcl_gradients(h, sets, cfg)
    numeric = central_diff(lambda: total_loss(0.0, h, sets, cfg).total, h)
    assert rel_error(analytic, numeric) <= 1e-3


def test_descent_step_pushes_negatives_apart(k3):
    cfg = RclConfig(alpha=0.1, tau=1.0)
    sets = NegativeSets.from_lists(3, S={0: {1}})
    h = k3.copy()
    before = h[0] @ h[1] / (np.linalg.norm(h[0]) * np.linalg.norm(h[1]))
    h -= 0.5 * rcl_gradients(h, sets, cfg)
    after = h[0] @ h[1] / (np.linalg.norm(h[0]) * np.linalg.norm(h[1]))
    assert after < before
