"""Caption metrics (BLEU-1..4, ROUGE-L, CIDEr) and the SCORE/Diff aggregates.

All functions take already-tokenized captions (lists of words).
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Mapping, Sequence

from .errors import UndefinedMetricError

Tokens = Sequence[str]

BLEU_KEYS = ("BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4")
OTHER_KEYS = ("CIDEr", "METEOR", "ROUGE-L", "SPICE")
ROUGE_BETA = 1.2
CIDER_N = 4


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_length(cand_len: int, refs: Sequence[Tokens]) -> int:
    return min((abs(len(r) - cand_len), len(r)) for r in refs)[1]


def corpus_bleu(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]], n: int) -> float:
    """Cumulative BLEU-n with corpus-level clipped counts and brevity penalty, unsmoothed."""
    if not 1 <= n <= 4:
        raise ValueError("BLEU order must be in 1..4")
    if len(candidates) != len(references):
        raise ValueError("one reference set per candidate required")
    matched = [0] * n
    total = [0] * n
    cand_len = ref_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ValueError("empty reference list")
        cand_len += len(cand)
        ref_len += _closest_ref_length(len(cand), refs)
        for order in range(1, n + 1):
            counts = ngrams(cand, order)
            max_ref: Counter = Counter()
            for r in refs:
                max_ref |= ngrams(r, order)
            matched[order - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            total[order - 1] += sum(counts.values())
    if cand_len == 0 or any(m == 0 for m in matched):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, total)) / n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)


def bleu_n(candidate: Tokens, references: Sequence[Tokens], n: int) -> float:
    return corpus_bleu([candidate], [references], n)


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def _rouge_pair(cand: Tokens, ref: Tokens, beta: float) -> float:
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(cand)
    r = lcs / len(ref)
    return (1 + beta**2) * p * r / (r + beta**2 * p)


def rouge_l(candidate: Tokens, references: Sequence[Tokens], beta: float = ROUGE_BETA) -> float:
    """LCS F-measure, best over references."""
    if not references:
        raise ValueError("empty reference list")
    return max(_rouge_pair(candidate, r, beta) for r in references)


def corpus_rouge_l(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]]) -> float:
    return sum(rouge_l(c, r) for c, r in zip(candidates, references)) / len(candidates)


def _tfidf(counts: Counter, df: Counter, log_n: float) -> dict:
    # idf floors the document frequency at 1 so unseen n-grams stay finite
    return {g: tf * (log_n - math.log(max(1.0, df[g]))) for g, tf in counts.items()}


def _cosine(a: dict, b: dict) -> float:
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)


def cider_per_video(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]]) -> list[float]:
    """Plain CIDEr per video (TF-IDF cosine averaged over references and n=1..4, times 10).

    Document frequencies come from the reference corpus: an n-gram's count is
    the number of videos whose references contain it.
    """
    if len(candidates) != len(references):
        raise ValueError("one reference set per candidate required")
    if len(candidates) < 2:
        raise UndefinedMetricError("CIDEr needs at least two videos to define IDF")
    log_n = math.log(len(references))
    df: list[Counter] = [Counter() for _ in range(CIDER_N)]
    for refs in references:
        if not refs:
            raise ValueError("empty reference list")
        for n in range(1, CIDER_N + 1):
            df[n - 1].update(set().union(*(ngrams(r, n).keys() for r in refs)))
    if all(c == len(references) for d in df for c in d.values()):
        raise UndefinedMetricError("every reference n-gram occurs in every video; IDF is zero everywhere")
    scores = []
    for cand, refs in zip(candidates, references):
        per_n = []
        for n in range(1, CIDER_N + 1):
            vc = _tfidf(ngrams(cand, n), df[n - 1], log_n)
            per_n.append(sum(_cosine(vc, _tfidf(ngrams(r, n), df[n - 1], log_n)) for r in refs) / len(refs))
        scores.append(10.0 * sum(per_n) / CIDER_N)
    return scores


def cider(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]]) -> float:
    scores = cider_per_video(candidates, references)
    return sum(scores) / len(scores)


def score_corpus(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]]) -> dict[str, float]:
    """All implemented metrics plus ``SCORE`` for one corpus."""
    report = {f"BLEU-{n}": corpus_bleu(candidates, references, n) for n in range(1, 5)}
    report["CIDEr"] = cider(candidates, references)
    report["ROUGE-L"] = corpus_rouge_l(candidates, references)
    report["SCORE"] = final_score(report)
    return report


def final_score(report: Mapping[str, float]) -> float:
    """Mean of {mean of the BLEU scores} and each other metric present.

    Missing metrics are skipped and the divisor shrinks accordingly; keys
    that are not metrics (such as ``SCORE`` itself) are ignored.
    """
    bleu = [report[k] for k in BLEU_KEYS if k in report]
    terms = [report[k] for k in OTHER_KEYS if k in report]
    if bleu:
        terms.append(sum(bleu) / len(bleu))
    if not terms:
        raise ValueError("no metrics to aggregate")
    return sum(terms) / len(terms)


def _truncate(x: float, places: int) -> float:
    # printed tables truncate rather than round; the 1e-9 nudge absorbs binary noise
    f = 10**places
    return math.trunc(x * f + math.copysign(1e-9, x)) / f


def accuracy_diff(teacher_score: float, student_score: float) -> float:
    """Relative SCORE drop as a fraction, truncated to 3 decimals."""
    if teacher_score <= 0:
        raise ValueError("teacher score must be positive")
    return _truncate((teacher_score - student_score) / teacher_score, 3)
