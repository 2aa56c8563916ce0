import math
import random

import numpy as np
import pytest

from distillcap.errors import UndefinedMetricError
from distillcap.metrics import (
    accuracy_diff,
    bleu_n,
    cider,
    cider_per_video,
    corpus_bleu,
    final_score,
    lcs_length,
    rouge_l,
    score_corpus,
)


def toks(s):
    return s.split()


# --- BLEU -------------------------------------------------------------------


def test_bleu_identity():
    c = toks("a man is singing a song")
    for n in range(1, 5):
        assert bleu_n(c, [c], n) == pytest.approx(1.0, abs=1e-12)


def test_bleu_clipping_hand_example():
    assert bleu_n(toks("a a a"), [toks("a b")], 1) == pytest.approx(1 / 3, abs=1e-12)


def test_bleu_no_overlap():
    assert bleu_n(toks("x y z"), [toks("a b c")], 1) == 0.0


def test_bleu_short_candidate_contributes_nothing():
    assert bleu_n(toks("a b"), [toks("a b")], 3) == 0.0


def test_bleu_brevity_penalty():
    # every unigram matches; candidate 2 vs reference 4 -> BP = exp(1 - 4/2)
    assert bleu_n(toks("a b"), [toks("a b c d")], 1) == pytest.approx(math.exp(-1.0), abs=1e-12)


def test_bleu_corpus_pools_counts():
    cands = [toks("a b"), toks("c d e f")]
    refs = [[toks("a x")], [toks("c d e f")]]
    # 5 of 6 unigrams matched; c=6 r=6 -> no penalty
    assert corpus_bleu(cands, refs, 1) == pytest.approx(5 / 6, abs=1e-12)


def test_bleu_empty_references():
    with pytest.raises(ValueError):
        bleu_n(toks("a"), [], 1)


def test_bleu_monotone_in_order_on_nested_matches():
    cand = toks("the cat sat on the mat today")
    ref = toks("the cat sat on the mat")
    scores = [bleu_n(cand, [ref], n) for n in range(1, 5)]
    assert all(a >= b for a, b in zip(scores, scores[1:]))


# --- ROUGE-L ----------------------------------------------------------------


def test_rouge_identity():
    assert rouge_l(toks("a b c"), [toks("a b c")]) == pytest.approx(1.0)


def test_rouge_hand_example():
    assert lcs_length(toks("a b c"), toks("a c d")) == 2
    assert rouge_l(toks("a b c"), [toks("a c d")]) == pytest.approx(2 / 3, abs=1e-12)


def test_rouge_disjoint():
    assert rouge_l(toks("a b"), [toks("c d")]) == 0.0


def test_rouge_beta_weighting():
    # P = 1, R = 1/2 -> F = (1 + b^2) P R / (R + b^2 P)
    b2 = 1.2**2
    expected = (1 + b2) * 0.5 / (0.5 + b2)
    assert rouge_l(toks("a b"), [toks("a b c d")]) == pytest.approx(expected, abs=1e-12)


# --- CIDEr ------------------------------------------------------------------


def brute_cider(cands, refs, max_n=4):
    """Dense TF-IDF vectors over every n-gram in the corpus, numpy cosine."""
    n_docs = len(refs)
    total = np.zeros(len(cands))
    for n in range(1, max_n + 1):
        grams = lambda s: [tuple(s[i : i + n]) for i in range(len(s) - n + 1)]  # noqa: E731
        space = sorted({g for rs in refs for r in rs for g in grams(r)} | {g for c in cands for g in grams(c)})
        pos = {g: i for i, g in enumerate(space)}
        df = np.array([sum(any(g in grams(r) for r in rs) for rs in refs) for g in space], dtype=float)
        idf = np.log(n_docs) - np.log(np.maximum(df, 1.0))

        def vec(s):
            v = np.zeros(len(space))
            for g in grams(s):
                v[pos[g]] += 1.0
            return v * idf

        for i, (c, rs) in enumerate(zip(cands, refs)):
            vc = vec(c)
            sims = []
            for r in rs:
                vr = vec(r)
                denom = np.linalg.norm(vc) * np.linalg.norm(vr)
                sims.append(0.0 if denom == 0 else float(vc @ vr) / denom)
            total[i] += np.mean(sims)
    return total * 10.0 / max_n


TOY_CANDS = [toks("a man plays a guitar"), toks("a dog runs on grass")]
TOY_REFS = [
    [toks("a man is playing a guitar"), toks("someone plays the guitar")],
    [toks("a dog is running on the grass"), toks("a puppy runs outside")],
]


def test_cider_matches_brute_force_oracle():
    per = cider_per_video(TOY_CANDS, TOY_REFS)
    np.testing.assert_allclose(per, brute_cider(TOY_CANDS, TOY_REFS), atol=1e-9, rtol=0)
    assert cider(TOY_CANDS, TOY_REFS) == pytest.approx(np.mean(per), abs=1e-12)


def test_cider_zero_overlap():
    cands = [toks("zzz yyy"), toks("a dog runs on grass")]
    assert cider_per_video(cands, TOY_REFS)[0] == 0.0


def test_cider_is_linear_in_cosines(monkeypatch):
    from distillcap import metrics

    base = cider(TOY_CANDS, TOY_REFS)
    plain = metrics._cosine
    monkeypatch.setattr(metrics, "_cosine", lambda a, b: 2.0 * plain(a, b))
    assert cider(TOY_CANDS, TOY_REFS) == pytest.approx(2.0 * base, abs=1e-12)


def test_cider_degenerate_corpus():
    refs = [[toks("a b c")], [toks("a b c")]]
    with pytest.raises(UndefinedMetricError):
        cider([toks("a b c"), toks("a b")], refs)
    with pytest.raises(UndefinedMetricError):
        cider([toks("a")], [[toks("a")]])


# --- invariants -------------------------------------------------------------


def test_metrics_ignore_reference_order():
    cands = TOY_CANDS
    rev = [list(reversed(r)) for r in TOY_REFS]
    a, b = score_corpus(cands, TOY_REFS), score_corpus(cands, rev)
    for k in a:
        assert a[k] == pytest.approx(b[k], abs=1e-12)


def test_metric_ranges_fuzz():
    rng = random.Random(0)
    words = list("abcdefg")

    def sent():
        return [rng.choice(words) for _ in range(rng.randint(1, 9))]

    for _ in range(1000):
        n = rng.randint(2, 4)
        cands = [sent() for _ in range(n)]
        refs = [[sent() for _ in range(rng.randint(1, 3))] for _ in range(n)]
        for order in range(1, 5):
            assert 0.0 <= corpus_bleu(cands, refs, order) <= 1.0
        for c, r in zip(cands, refs):
            assert 0.0 <= rouge_l(c, r) <= 1.0
        try:
            value = cider(cands, refs)
        except UndefinedMetricError:
            continue
        assert 0.0 <= value <= 10.0 + 1e-9


# --- aggregates ---------------------------------------------------------------


def test_final_score_teacher_row():
    row = {"BLEU-1": 0.760, "BLEU-2": 0.612, "BLEU-3": 0.473, "BLEU-4": 0.352, "CIDEr": 0.397, "METEOR": 0.254, "ROUGE-L": 0.583, "SPICE": 0.054}
    assert final_score(row) == pytest.approx(0.36745, abs=1e-12)


def test_final_score_single_metric():
    assert final_score({"CIDEr": 1.25}) == 1.25


def test_final_score_skips_missing_and_ignores_score_key():
    report = {"BLEU-1": 0.5, "BLEU-2": 0.3, "ROUGE-L": 0.6, "SCORE": 99.0}
    assert final_score(report) == pytest.approx((0.4 + 0.6) / 2)


def test_final_score_empty():
    with pytest.raises(ValueError):
        final_score({})


@pytest.mark.parametrize("teacher,student,expected", [(0.368, 0.365, 0.008), (0.368, 0.366, 0.005), (0.4, 0.4, 0.0)])
def test_accuracy_diff(teacher, student, expected):
    assert accuracy_diff(teacher, student) == expected


def test_accuracy_diff_needs_positive_teacher():
    with pytest.raises(ValueError):
        accuracy_diff(0.0, 0.1)
