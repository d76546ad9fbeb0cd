import itertools
import math
from collections import Counter
from fractions import Fraction

import pytest

from fnlabel.langmodel import (BOS, UNK, OrderingResult, load_lm,
                               order_labels, render_name, save_lm, score,
                               train_lm)


# --- exact-arithmetic transcription of the estimator, used as oracle ----

def oracle_counts(seqs):
    tri = Counter()
    for s in seqs:
        padded = [BOS, BOS] + list(s)
        for i in range(2, len(padded)):
            tri[tuple(padded[i - 2:i + 1])] += 1
    bi = Counter()
    for (u, v, w) in tri:
        bi[(v, w)] += 1
    uni = Counter()
    for (v, w) in bi:
        uni[w] += 1
    return tri, bi, uni


def oracle_discounts(counts):
    n = Counter(c for c in counts if c <= 4)
    n1, n2, n3, n4 = n[1], n[2], n[3], n[4]
    if min(n1, n2, n3, n4) > 0:
        y = Fraction(n1, n1 + 2 * n2)
        d1 = 1 - 2 * y * Fraction(n2, n1)
        d2 = 2 - 3 * y * Fraction(n3, n2)
        d3 = 3 - 4 * y * Fraction(n4, n3)
        if 0 <= d1 <= 1 and 0 <= d2 <= 2 and 0 <= d3 <= 3:
            return d1, d2, d3
    return (Fraction(3, 4),) * 3


def _apply_d(c, d):
    return d[min(c, 3) - 1] if c else Fraction(0)


def oracle_p(seqs, w, u, v):
    tri, bi, uni = oracle_counts(seqs)
    vocab = {t for s in seqs for t in s}
    d3, d2, d1 = (oracle_discounts(tri.values()),
                  oracle_discounts(bi.values()),
                  oracle_discounts(uni.values()))

    def p_uni(w):
        total = sum(uni.values())
        gamma = sum(d1[min(c, 3) - 1] for c in uni.values()) / total
        c = uni.get(w, 0)
        return (max(c - _apply_d(c, d1), 0) / total
                + gamma / (len(vocab) + 1))

    def p_bi(w, v):
        ctx = {ww: c for (vv, ww), c in bi.items() if vv == v}
        total = sum(ctx.values())
        if not total:
            return p_uni(w)
        gamma = sum(d2[min(c, 3) - 1] for c in ctx.values()) / total
        c = ctx.get(w, 0)
        return (max(c - _apply_d(c, d2), 0) / total + gamma * p_uni(w))

    def p_tri(w, u, v):
        ctx = {ww: c for (uu, vv, ww), c in tri.items()
               if (uu, vv) == (u, v)}
        total = sum(ctx.values())
        if not total:
            return p_bi(w, v)
        gamma = sum(d3[min(c, 3) - 1] for c in ctx.values()) / total
        c = ctx.get(w, 0)
        return (max(c - _apply_d(c, d3), 0) / total + gamma * p_bi(w, v))

    return p_tri(w, u, v)


# ten sequences whose count-of-count statistics keep every order of the
# estimator on the formula path: n1..n4 positive and the resulting D1/D2/D3
# inside their valid ranges at the trigram, bigram-continuation, and
# unigram-continuation levels alike
FIXTURE = [
    ["a", "d", "e"], ["b", "d", "e"], ["c", "d", "e"], ["d", "e", "f"],
    ["a", "d", "f"], ["b", "d", "f"], ["d", "f"], ["a", "e", "f"],
    ["a", "e", "a", "d"], ["b", "f", "b", "d"],
]


def test_fixture_statistics_are_healthy():
    tri, bi, uni = oracle_counts(FIXTURE)
    for counts in (tri.values(), bi.values(), uni.values()):
        n = Counter(min(c, 4) for c in counts)
        assert min(n[1], n[2], n[3], n[4]) > 0, dict(n)
        assert oracle_discounts(counts) != (Fraction(3, 4),) * 3


def test_discounts_match_textbook_formulas():
    lm = train_lm(FIXTURE)
    tri, bi, uni = oracle_counts(FIXTURE)
    for got, counts in ((lm.d_tri, tri.values()),
                        (lm.d_bi, bi.values()),
                        (lm.d_uni, uni.values())):
        want = oracle_discounts(counts)
        for g, w in zip(got, want):
            assert g == pytest.approx(float(w), rel=1e-12)


def test_interpolated_probability_matches_oracle():
    lm = train_lm(FIXTURE)
    vocab = list(lm.vocab) + [UNK]
    contexts = [(BOS, BOS), (BOS, "a"), ("a", "d"), ("d", "e"),
                ("e", "f"), ("f", "a"), (UNK, "d"), (UNK, UNK)]
    for u, v in contexts:
        for w in vocab:
            want = float(oracle_p(FIXTURE, w, u, v))
            assert lm.p_tri(w, u, v) == pytest.approx(want, rel=1e-9), \
                (w, u, v)


def test_small_model_score_hand_rolled():
    seqs = [["a", "b"], ["b", "a"], ["a", "b", "a"]]
    lm = train_lm(seqs)
    want = math.log(float(oracle_p(seqs, "a", BOS, BOS))) + \
        math.log(float(oracle_p(seqs, "b", BOS, "a")))
    assert score(lm, ["a", "b"]) == pytest.approx(want, rel=1e-9)


def test_observed_context_distributions_sum_to_one():
    lm = train_lm(FIXTURE)
    events = list(lm.vocab) + [UNK]
    for (u, v) in lm.tri_total:
        assert sum(lm.p_tri(w, u, v) for w in events) == \
            pytest.approx(1.0, abs=1e-6)
    for v in lm.bi_total:
        assert sum(lm.p_bi(w, v) for w in events) == \
            pytest.approx(1.0, abs=1e-6)
    assert sum(lm.p_uni(w) for w in events) == pytest.approx(1.0, abs=1e-6)


def test_direct_evidence_dominates():
    lm = train_lm([["a", "b"]] * 5)
    assert score(lm, ["a", "b"]) > score(lm, ["b", "a"])


def test_score_finite_and_monotone():
    lm = train_lm(FIXTURE)
    for perm in itertools.permutations(["a", "b", "c"]):
        s = score(lm, list(perm))
        assert math.isfinite(s)
    base = score(lm, ["a", "b"])
    assert score(lm, ["a", "b", "c"]) < base
    assert score(lm, ["a", "b", UNK]) < base


def test_score_unknown_tokens_and_empty():
    lm = train_lm(FIXTURE)
    assert math.isfinite(score(lm, ["zzz", "qqq"]))
    with pytest.raises(ValueError, match="empty sequence"):
        score(lm, [])


def test_train_validation():
    with pytest.raises(ValueError, match="empty corpus"):
        train_lm([])
    with pytest.raises(ValueError, match="empty corpus"):
        train_lm([[], []])
    with pytest.raises(ValueError, match="2 distinct tokens"):
        train_lm([["a"], ["a", "a"]])


def test_order_labels_mcx_realloc():
    seqs = [["mcx", "realloc"], ["mcx", "alloc"], ["mcx", "free"],
            ["make", "buffer"], ["realloc", "guard"]] * 2
    lm = train_lm(seqs)
    res = order_labels(lm, {"realloc", "mcx"})
    assert res.sequence == ["mcx", "realloc"]
    assert res.optimal
    assert render_name(res.sequence, "snake") == "mcx_realloc"


def test_order_singleton():
    lm = train_lm(FIXTURE)
    res = order_labels(lm, {"a"})
    assert res.sequence == ["a"]
    assert res.optimal
    assert res.log_score == pytest.approx(score(lm, ["a"]))


def test_order_matches_exhaustive_argmax():
    lm = train_lm(FIXTURE + [["e", "f", "a"], ["f", "e", "b"]])
    sets = [
        {"a", "b"}, {"a", "b", "c"}, {"a", "b", "c", "d"},
        {"b", "c", "d", "e"}, {"a", "b", "c", "d", "e"},
        {"a", "b", "c", "d", "e", "f"}, {"zz", "a", "b"},
    ]
    for labels in sets:
        res = order_labels(lm, labels)
        best = None
        for perm in itertools.permutations(sorted(labels)):
            s = score(lm, list(perm))
            if best is None or s > best[0]:
                best = (s, list(perm))
        assert res.optimal
        assert res.log_score == pytest.approx(best[0], rel=1e-12)
        assert res.sequence == best[1]
        assert sorted(res.sequence) == sorted(labels)


def test_order_beats_or_matches_greedy_and_caps():
    lm = train_lm(FIXTURE + [["e", "f"], ["f", "a", "e"]])
    labels = {"a", "b", "c", "d", "e", "f"}
    full = order_labels(lm, labels)
    capped = order_labels(lm, labels, step_cap=3)
    assert capped.steps <= 3
    assert not capped.optimal
    assert full.log_score >= capped.log_score
    assert sorted(capped.sequence) == sorted(labels)


def test_order_label_count_guard():
    lm = train_lm(FIXTURE)
    with pytest.raises(ValueError, match="between 1 and 32"):
        order_labels(lm, set())
    with pytest.raises(ValueError, match="between 1 and 32"):
        order_labels(lm, {f"t{i}" for i in range(33)})


def test_order_deterministic():
    lm = train_lm(FIXTURE)
    a = order_labels(lm, {"a", "b", "c", "d"})
    b = order_labels(lm, {"a", "b", "c", "d"})
    assert a == b


def test_render_name():
    assert render_name(["make", "random", "color", "map"]) == \
        "make_random_color_map"
    assert render_name(["mcx", "realloc"], "snake") == "mcx_realloc"
    assert render_name(["is", "window", "open"], "camel") == "isWindowOpen"
    with pytest.raises(ValueError, match="empty sequence"):
        render_name([])
    with pytest.raises(ValueError, match="unknown naming convention"):
        render_name(["a"], "kebab")


def test_save_load_round_trip(tmp_path):
    lm = train_lm(FIXTURE)
    path = tmp_path / "lm.bin"
    save_lm(lm, path)
    back = load_lm(path)
    assert back.vocab == lm.vocab
    assert back.tri == lm.tri
    assert back.d_tri == lm.d_tri
    assert score(back, ["a", "b", "c"]) == score(lm, ["a", "b", "c"])
    first = path.read_bytes()
    save_lm(back, path)
    assert path.read_bytes() == first


def test_load_rejects_unknown_version(tmp_path):
    path = tmp_path / "lm.bin"
    path.write_text('{"format_version": 42}')
    with pytest.raises(ValueError, match="unrecognized language-model"):
        load_lm(path)
