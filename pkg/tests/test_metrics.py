import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from mmh.metrics import (
    EmptyInput,
    LengthMismatch,
    MetricError,
    NonFinite,
    UnknownMetric,
    chrf,
    compute_metric,
    corpus_bleu,
    perplexity,
    read_predictions,
    write_predictions,
)

from helpers import bleu_oracle, chrf_oracle, random_corpus


def test_bleu_prefix_example():
    # p1..p3 = 1, no 4-grams in the hypothesis, brevity penalty exp(1 - 4/3)
    score = corpus_bleu(["the cat sat"], ["the cat sat down"]).score
    assert score == pytest.approx(100 * math.exp(1 - 4 / 3), abs=1e-9)
    assert abs(score - bleu_oracle(["the cat sat"], ["the cat sat down"])) <= 1e-9


def test_bleu_identical_is_100():
    refs = ["Hi!", "The aileron is the control surface in the wing."]
    assert corpus_bleu(refs, refs).score == 100.0
    assert corpus_bleu(refs, refs).formatted() == "bleu: 100.00"


def test_bleu_zero_cases():
    assert corpus_bleu([""], ["a b c"]).score == 0.0
    # no matches at all still gives a small smoothed score
    assert 0 < corpus_bleu(["x y z w"], ["a b c d"]).score < 10


def test_chrf_example():
    expected = (0.75 + 2 / 3 + 0.5 + 0.0) / 4 * 100
    assert chrf(["abcd"], ["abce"]).score == pytest.approx(expected, abs=1e-9)
    assert chrf(["a b c"], ["abc"]).score == 100.0


def test_oracles_on_100_random_corpora():
    rng = random.Random(2024)
    for _ in range(100):
        hyps, refs = random_corpus(rng)
        assert abs(corpus_bleu(hyps, refs).score - bleu_oracle(hyps, refs)) <= 1e-9
        assert abs(chrf(hyps, refs).score - chrf_oracle(hyps, refs)) <= 1e-9


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.text("ab c.", max_size=12), st.text("ab c.", max_size=12)), min_size=1, max_size=5),
       st.randoms())
def test_corpus_scores_ignore_pair_order(pairs, rnd):
    hyps, refs = map(list, zip(*pairs))
    order = list(range(len(pairs)))
    rnd.shuffle(order)
    h2, r2 = [hyps[i] for i in order], [refs[i] for i in order]
    assert corpus_bleu(hyps, refs).score == pytest.approx(corpus_bleu(h2, r2).score, abs=1e-9)
    assert chrf(hyps, refs).score == pytest.approx(chrf(h2, r2).score, abs=1e-9)


def test_metric_errors():
    with pytest.raises(LengthMismatch):
        corpus_bleu(["a"], ["a", "b"])
    with pytest.raises(EmptyInput):
        chrf([], [])
    with pytest.raises(UnknownMetric):
        compute_metric("comet", ["a"], ["a"])
    with pytest.raises(NonFinite):
        perplexity(float("nan"))
    assert perplexity(math.log(7)) == pytest.approx(7)


def test_prediction_dump_format(tmp_path):
    labels = ["Hi!", "The aileron is the control surface."]
    preds = ["Hi, my name is Dean.", ""]
    path = tmp_path / "pred.txt"
    write_predictions(labels, preds, path)
    text = path.read_text(encoding="utf-8")
    assert text == (
        "L [0]\tHi!\nP [0]\tHi, my name is Dean.\n\n"
        "L [1]\tThe aileron is the control surface.\nP [1]\t\n\n"
    )
    assert len(text.splitlines()) == 3 * len(labels)
    assert read_predictions(path) == (labels, preds)


def test_prediction_dump_rejects_garbage(tmp_path):
    path = tmp_path / "pred.txt"
    path.write_text("L [0]\ta\nX [0]\tb\n\n")
    with pytest.raises(MetricError):
        read_predictions(path)
