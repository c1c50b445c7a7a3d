import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hitcm.errors import ContractError
from hitcm.metrics import (corpus_bleu, evaluate_classification, evaluate_mt, evaluate_tagging, lcs_length,
                           rouge_l)


def brute_force_prf(preds, gold):
    """Per-class counts by explicit enumeration; macro over classes in gold or preds."""
    classes = sorted(set(gold) | set(preds))
    out = {}
    for c in classes:
        tp = sum(1 for p, g in zip(preds, gold) if p == c and g == c)
        fp = sum(1 for p, g in zip(preds, gold) if p == c and g != c)
        fn = sum(1 for p, g in zip(preds, gold) if p != c and g == c)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        out[c] = (p, r, f)
    macro = tuple(float(np.mean([v[i] for v in out.values()])) for i in range(3))
    return out, macro


def test_perfect_predictions():
    rep = evaluate_classification(list("abcab"), list("abcab"))
    assert rep.precision == rep.recall == rep.f1 == rep.accuracy == 1.0


def test_hand_computed_example():
    rep = evaluate_classification(list("ABBB"), list("AABB"))
    a, b = rep.per_class["A"], rep.per_class["B"]
    assert (a["precision"], a["recall"]) == (1.0, 0.5)
    assert a["f1"] == pytest.approx(2 / 3)
    assert b["precision"] == pytest.approx(2 / 3) and b["recall"] == 1.0 and b["f1"] == pytest.approx(0.8)
    assert rep.f1 == pytest.approx(11 / 15)
    assert rep.confusion == [[1, 1], [0, 2]]


def test_absent_class_excluded_from_macro():
    rep = evaluate_classification(list("ABBB"), list("AABB"), labels=["A", "B", "C"])
    assert rep.f1 == pytest.approx(11 / 15)
    assert rep.per_class["C"]["f1"] == 0.0


def test_length_mismatch():
    with pytest.raises(ContractError):
        evaluate_classification([1, 2], [1])
    with pytest.raises(ContractError):
        evaluate_tagging([["A"]], [["A", "B"]])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 20).flatmap(lambda n: st.tuples(st.lists(st.sampled_from("abcd"), min_size=n, max_size=n),
                                                       st.lists(st.sampled_from("abcd"), min_size=n, max_size=n))))
def test_prf_brute_force_oracle(pair):
    preds, gold = pair
    rep = evaluate_classification(preds, gold)
    per, macro = brute_force_prf(preds, gold)
    for c, (p, r, f) in per.items():
        pc = rep.per_class[c]
        assert (pc["precision"], pc["recall"], pc["f1"]) == (p, r, f)
    assert (rep.precision, rep.recall, rep.f1) == macro
    cm = np.array(rep.confusion)
    for i, lab in enumerate(rep.labels):
        assert cm[i].sum() == gold.count(lab)
    assert 0 <= rep.f1 <= 1


def test_tagging_flattens():
    rep = evaluate_tagging([["A", "B"], ["B"]], [["A", "A"], ["B"]])
    assert rep.task == "tagging" and rep.support == 3 and rep.accuracy == pytest.approx(2 / 3)


def test_bleu_identity_and_rouge_identity():
    refs = [["a", "b", "c", "d", "e"], ["x", "y", "z", "w"]]
    rep = evaluate_mt(refs, refs)
    assert rep.bleu == 1.0 and rep.rouge_l == 1.0 and rep.accuracy == 1.0


def test_rouge_no_overlap():
    assert rouge_l(["a", "b"], ["c", "d"]) == 0.0


def test_bleu_brevity_penalty_case():
    hyp, ref = "a b c d".split(), "a b c d e f g h".split()
    # every n-gram precision is 1, so BLEU is exactly the brevity penalty exp(1 - 8/4)
    assert corpus_bleu([hyp], [ref]) == pytest.approx(math.exp(1 - 8 / 4), abs=1e-9)


def test_bleu_smoothing_hand_value():
    hyp, ref = "a b c d".split(), "a b c e".split()
    # p1 = 3/4, p2 = 2/3, p3 = 1/2, p4: zero matches -> (0+1)/(1+1)
    expected = (3 / 4 * 2 / 3 * 1 / 2 * 1 / 2) ** 0.25
    assert corpus_bleu([hyp], [ref]) == pytest.approx(expected, abs=1e-9)
    assert rouge_l(hyp, ref) == pytest.approx(0.75, abs=1e-9)


def test_rouge_hand_value():
    # LCS("a b c d e", "a x c e") = "a c e": P = 3/5, R = 3/4
    p, r = 3 / 5, 3 / 4
    assert rouge_l("a b c d e".split(), "a x c e".split()) == pytest.approx(2 * p * r / (p + r), abs=1e-9)


def test_empty_hypothesis_scored():
    rep = evaluate_mt([[], ["a"]], [["a", "b"], ["a"]])
    assert 0.0 <= rep.bleu <= 1.0 and rep.rouge_l == pytest.approx(0.5)
    assert corpus_bleu([[]], [["a"]]) == 0.0


def test_lcs_brute_force():
    r = np.random.default_rng(0)
    for _ in range(50):
        a = list(r.choice(list("abc"), size=int(r.integers(0, 6))))
        b = list(r.choice(list("abc"), size=int(r.integers(0, 6))))
        best = 0
        for k in range(len(a) + 1):
            for sub in itertools.combinations(a, k):
                it = iter(b)
                if all(ch in it for ch in sub):
                    best = max(best, k)
        assert lcs_length(a, b) == best


def test_order_invariance():
    r = np.random.default_rng(2)
    hyps = [list(r.choice(list("abcde"), size=int(r.integers(1, 8)))) for _ in range(6)]
    refs = [list(r.choice(list("abcde"), size=int(r.integers(1, 8)))) for _ in range(6)]
    perm = r.permutation(6)
    a, b = evaluate_mt(hyps, refs), evaluate_mt([hyps[i] for i in perm], [refs[i] for i in perm])
    assert a.bleu == pytest.approx(b.bleu, abs=1e-12) and a.rouge_l == pytest.approx(b.rouge_l, abs=1e-12)


def test_report_serialisation():
    rep = evaluate_classification(list("ABBB"), list("AABB"), task="sentiment")
    d = json.loads(rep.to_json())
    assert d["task"] == "sentiment" and d["confusion"] == [[1, 1], [0, 2]]
    text = rep.to_text()
    assert "confusion" in text and "f1" in text
