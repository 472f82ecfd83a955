"""Corpus BLEU, chrF, perplexity and the prediction dump format."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import InputError
from .processors.tokenization import pretokenize

METRICS = ("bleu", "chrf", "perplexity")


class MetricError(InputError):
    pass


class LengthMismatch(MetricError):
    pass


class EmptyInput(MetricError):
    pass


class NonFinite(MetricError):
    pass


class UnknownMetric(MetricError):
    pass


@dataclass
class EvalResult:
    metric_name: str
    score: float
    n_samples: int
    details: dict = field(default_factory=dict)

    def formatted(self) -> str:
        return f"{self.metric_name}: {self.score:.2f}"


def _check_pairs(hypotheses, references):
    if len(hypotheses) != len(references):
        raise LengthMismatch(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise EmptyInput("need at least one hypothesis/reference pair")


def _ngrams(items: Sequence, n: int) -> Counter:
    return Counter(tuple(items[i:i + n]) for i in range(len(items) - n + 1))


def corpus_bleu(hypotheses: Sequence[str], references: Sequence[str], max_order: int = 4) -> EvalResult:
    """Corpus BLEU over punctuation-split whitespace tokens, one reference each.

    Orders for which the hypotheses contain no n-grams at all are left out
    of the geometric mean. An order with n-grams but no matches gets the
    exponentially halving precision ``1 / (2**k * total)``, k counting such
    orders so far.
    """
    _check_pairs(hypotheses, references)
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = pretokenize(hyp), pretokenize(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_order + 1):
            h_counts, r_counts = _ngrams(h, n), _ngrams(r, n)
            totals[n - 1] += sum(h_counts.values())
            matches[n - 1] += sum(min(c, r_counts[g]) for g, c in h_counts.items())

    details = {"matches": matches, "totals": totals, "hyp_len": hyp_len, "ref_len": ref_len}
    if hyp_len == 0:
        details.update(precisions=[0.0] * max_order, brevity_penalty=0.0)
        return EvalResult("bleu", 0.0, len(hypotheses), details)

    precisions = []
    halvings = 1
    for m, t in zip(matches, totals):
        if t == 0:
            break
        if m == 0:
            halvings *= 2
            precisions.append(1.0 / (halvings * t))
        else:
            precisions.append(m / t)
    log_mean = sum(math.log(p) for p in precisions) / len(precisions)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    score = 100.0 * bp * math.exp(log_mean)
    details.update(precisions=precisions, brevity_penalty=bp, effective_order=len(precisions))
    return EvalResult("bleu", score, len(hypotheses), details)


def chrf(hypotheses: Sequence[str], references: Sequence[str], n: int = 6, beta: float = 2.0) -> EvalResult:
    """Corpus chrF: per-order character n-gram F-beta, averaged over orders.

    Whitespace is deleted before n-grams are taken. Statistics are summed
    over the corpus; orders where either side has no n-grams are skipped.
    """
    _check_pairs(hypotheses, references)
    hyp_tot = [0] * n
    ref_tot = [0] * n
    match = [0] * n
    for hyp, ref in zip(hypotheses, references):
        h = "".join(hyp.split())
        r = "".join(ref.split())
        for k in range(1, n + 1):
            hc, rc = _ngrams(h, k), _ngrams(r, k)
            hyp_tot[k - 1] += sum(hc.values())
            ref_tot[k - 1] += sum(rc.values())
            match[k - 1] += sum(min(c, rc[g]) for g, c in hc.items())

    b2 = beta * beta
    f_scores = []
    for m, ht, rt in zip(match, hyp_tot, ref_tot):
        if ht == 0 or rt == 0:
            continue
        p, r = m / ht, m / rt
        f_scores.append(0.0 if p + r == 0 else (1 + b2) * p * r / (b2 * p + r))
    score = 100.0 * sum(f_scores) / len(f_scores) if f_scores else 0.0
    details = {"hyp_totals": hyp_tot, "ref_totals": ref_tot, "matches": match,
               "f_scores": f_scores, "beta": beta}
    return EvalResult("chrf", score, len(hypotheses), details)


def perplexity(mean_token_nll: float) -> float:
    if not isinstance(mean_token_nll, (int, float)) or not math.isfinite(mean_token_nll) or mean_token_nll < 0:
        raise NonFinite(f"mean token NLL must be finite and >= 0, got {mean_token_nll!r}")
    return math.exp(mean_token_nll)


def compute_metric(name: str, hypotheses, references) -> EvalResult:
    if name == "bleu":
        return corpus_bleu(hypotheses, references)
    if name == "chrf":
        return chrf(hypotheses, references)
    raise UnknownMetric(f"unknown metric {name!r}; available: {METRICS}")


# -- prediction dump ---------------------------------------------------------

def _one_line(text: str) -> str:
    return " ".join(text.splitlines()) if ("\n" in text or "\r" in text) else text


def write_predictions(labels: Sequence[str], predictions: Sequence[str], path) -> None:
    """``L [i]<TAB>label`` / ``P [i]<TAB>prediction`` / blank line, per sample."""
    if len(labels) != len(predictions):
        raise LengthMismatch(f"{len(labels)} labels vs {len(predictions)} predictions")
    chunks = []
    for i, (label, pred) in enumerate(zip(labels, predictions)):
        chunks.append(f"L [{i}]\t{_one_line(label)}\nP [{i}]\t{_one_line(pred)}\n\n")
    Path(path).write_text("".join(chunks), encoding="utf-8", newline="\n")


def read_predictions(path) -> tuple[list[str], list[str]]:
    labels, predictions = [], []
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    for lineno, line in enumerate(lines):
        if not line:
            continue
        tag, sep, text = line.partition("\t")
        if not sep or len(tag) < 5 or tag[1:3] != " [" or tag[-1] != "]":
            raise MetricError(f"{path}:{lineno + 1}: malformed prediction line {line!r}")
        kind, index = tag[0], int(tag[3:-1])
        target = labels if kind == "L" else predictions if kind == "P" else None
        if target is None or index != len(target):
            raise MetricError(f"{path}:{lineno + 1}: unexpected tag {tag!r}")
        target.append(text)
    if len(labels) != len(predictions):
        raise MetricError(f"{path}: {len(labels)} labels but {len(predictions)} predictions")
    return labels, predictions
