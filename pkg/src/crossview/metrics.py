"""Retrieval and captioning metrics with pinned-down definitions.

Definitional switches in force (also echoed by the report formatter):

- nDCG uses linear gain rel/log2(rank+1); an exponential-gain variant
  (2^rel - 1) is selectable.
- Multiple-choice ties count as incorrect.
- CIDEr is the plain tf-idf variant (no length penalty), scaled by 10.
- METEOR is not implemented (needs external synonym resources); reports
  list it as unavailable.

Caption text is normalized exactly like decoder captions: whitespace
split, lowercased, surrounding punctuation stripped.
"""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from crossview import kernels
from crossview.captioning.tokenizer import tokenize_caption
from crossview.exceptions import ValidationError


@dataclass(frozen=True)
class MetricResult:
    name: str
    value: float
    evaluated: int
    excluded: int = 0
    detail: dict = field(default_factory=dict)

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class CandidateGroup:
    """One multiple-choice question: pick the match among 5 candidates."""

    query_id: str
    candidate_ids: tuple
    correct_index: int
    label: str = "all"

    def __post_init__(self):
        if len(self.candidate_ids) != 5:
            raise ValidationError(f"{self.query_id}: need exactly 5 candidates")
        if len(set(self.candidate_ids)) != 5:
            raise ValidationError(f"{self.query_id}: candidates must be distinct")
        if not 0 <= self.correct_index < 5:
            raise ValidationError(f"{self.query_id}: correct_index out of range")


@dataclass(frozen=True)
class CaptionPair:
    hypothesis: str
    references: tuple

    def __post_init__(self):
        if not self.references:
            raise ValidationError("references must be non-empty")


# ---------------------------------------------------------------------------
# ranking metrics


def recall_at_k(
    rankings: Mapping[str, Sequence[str]],
    relevant: Mapping[str, set],
    k: int,
) -> MetricResult:
    """Fraction of queries whose top-k ranking holds >= 1 relevant id.

    Queries with an empty relevant set are excluded from the average and
    counted in the result.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    hits = 0
    evaluated = 0
    excluded = 0
    for query in sorted(rankings):
        good = relevant.get(query, set())
        if not good:
            excluded += 1
            continue
        evaluated += 1
        if any(cand in good for cand in rankings[query][:k]):
            hits += 1
    if evaluated == 0:
        raise ValidationError("no queries with a non-empty relevant set")
    return MetricResult(f"R@{k}", hits / evaluated, evaluated, excluded)


def _ranked_order(scores_row: np.ndarray, candidate_ids: Sequence[str]) -> list[int]:
    """Candidate indices by score descending, id ascending on ties."""
    return sorted(range(len(scores_row)), key=lambda j: (-scores_row[j], candidate_ids[j]))


def _check_matrix(scores: np.ndarray, rel: np.ndarray, candidate_ids):
    scores = np.asarray(scores, dtype=np.float64)
    rel = np.asarray(rel, dtype=np.float64)
    if scores.ndim != 2 or scores.shape != rel.shape:
        raise ValidationError(
            f"scores {scores.shape} and relevance {rel.shape} must be equal 2-D shapes"
        )
    if rel.min() < 0:
        raise ValidationError("relevance grades must be non-negative")
    if candidate_ids is None:
        candidate_ids = [f"{j:06d}" for j in range(scores.shape[1])]
    elif len(candidate_ids) != scores.shape[1]:
        raise ValidationError("candidate_ids length must match the candidate axis")
    return scores, rel, list(candidate_ids)


def mean_average_precision(
    scores: np.ndarray, rel: np.ndarray, candidate_ids: Sequence[str] | None = None
) -> MetricResult:
    """mAP with grade > 0 treated as relevant.

    Per query, candidates are ranked by score descending (id ascending on
    ties); AP averages precision at each relevant hit over the number of
    relevant candidates.  All-zero relevance rows are excluded.
    """
    scores, rel, candidate_ids = _check_matrix(scores, rel, candidate_ids)
    aps = []
    excluded = 0
    for q in range(scores.shape[0]):
        n_rel = int((rel[q] > 0).sum())
        if n_rel == 0:
            excluded += 1
            continue
        order = _ranked_order(scores[q], candidate_ids)
        hits = 0
        precision_sum = 0.0
        for rank, j in enumerate(order, start=1):
            if rel[q, j] > 0:
                hits += 1
                precision_sum += hits / rank
        aps.append(precision_sum / n_rel)
    if not aps:
        raise ValidationError("no queries with a positive relevance entry")
    return MetricResult("mAP", float(np.mean(aps)), len(aps), excluded)


def ndcg(
    scores: np.ndarray,
    rel: np.ndarray,
    candidate_ids: Sequence[str] | None = None,
    gain: str = "linear",
) -> MetricResult:
    """Mean nDCG over queries: DCG(rank order) / DCG(ideal order).

    DCG = sum over the full list of gain(rel)/log2(rank+1) with rank
    starting at 1.  ``gain`` is "linear" (rel) or "exp" (2^rel - 1).
    """
    if gain not in ("linear", "exp"):
        raise ValidationError(f"unknown gain {gain!r}")
    scores, rel, candidate_ids = _check_matrix(scores, rel, candidate_ids)
    g = rel if gain == "linear" else 2.0**rel - 1.0
    discounts = 1.0 / np.log2(np.arange(2, scores.shape[1] + 2))
    values = []
    excluded = 0
    for q in range(scores.shape[0]):
        if not (rel[q] > 0).any():
            excluded += 1
            continue
        order = _ranked_order(scores[q], candidate_ids)
        dcg = float((g[q, order] * discounts).sum())
        ideal = float((np.sort(g[q])[::-1] * discounts).sum())
        values.append(dcg / ideal)
    if not values:
        raise ValidationError("no queries with a positive relevance entry")
    return MetricResult(
        f"nDCG({gain})", float(np.mean(values)), len(values), excluded
    )


def mcq_accuracy(
    groups: Sequence[CandidateGroup], scores: Mapping[str, Mapping[str, float]]
) -> MetricResult:
    """Multiple-choice accuracy, overall and per group label.

    A group counts as correct only when the correct candidate's score is
    strictly highest — ties are incorrect.
    """
    if not groups:
        raise ValidationError("no candidate groups")
    per_label: dict[str, list[int]] = {}
    for group in groups:
        row = scores.get(group.query_id)
        if row is None:
            raise ValidationError(f"no scores for query {group.query_id!r}")
        try:
            values = [row[c] for c in group.candidate_ids]
        except KeyError as missing:
            raise ValidationError(
                f"{group.query_id}: missing score for candidate {missing.args[0]!r}"
            ) from None
        best = max(values)
        winner = values[group.correct_index] == best and values.count(best) == 1
        per_label.setdefault(group.label, []).append(int(winner))
    detail = {
        label: float(np.mean(marks)) for label, marks in sorted(per_label.items())
    }
    overall = float(np.mean([m for marks in per_label.values() for m in marks]))
    return MetricResult(
        "MCQ accuracy", overall, len(groups), 0, {"per_label": detail}
    )


# ---------------------------------------------------------------------------
# captioning metrics


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(corpus: Sequence[CaptionPair]) -> MetricResult:
    """Corpus BLEU, uniform weights over 1..4-gram modified precisions.

    Clipped n-gram counts are pooled over the corpus before the geometric
    mean; the brevity penalty uses the closest reference length per pair
    (shorter wins ties).  Any all-zero precision gives 0.
    """
    if not corpus:
        raise ValidationError("empty caption corpus")
    clipped = [0] * 4
    totals = [0] * 4
    hyp_len = 0
    ref_len = 0
    for pair in corpus:
        hyp = tokenize_caption(pair.hypothesis)
        refs = [tokenize_caption(r) for r in pair.references]
        hyp_len += len(hyp)
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, 5):
            counts = _ngrams(hyp, n)
            if not counts:
                continue
            best = Counter()
            for ref in refs:
                for gram, c in _ngrams(ref, n).items():
                    if c > best[gram]:
                        best[gram] = c
            totals[n - 1] += sum(counts.values())
            clipped[n - 1] += sum(min(c, best[gram]) for gram, c in counts.items())
    if hyp_len == 0 or any(t == 0 or c == 0 for c, t in zip(clipped, totals)):
        return MetricResult("BLEU-4", 0.0, len(corpus))
    log_precision = sum(0.25 * math.log(c / t) for c, t in zip(clipped, totals))
    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return MetricResult("BLEU-4", brevity * math.exp(log_precision), len(corpus))


def _lcs(a: list[str], b: list[str]) -> int:
    table = {tok: i for i, tok in enumerate(dict.fromkeys(a + b))}
    xa = np.asarray([table[t] for t in a], dtype=np.int64)
    xb = np.asarray([table[t] for t in b], dtype=np.int64)
    return int(kernels.lcs_length(xa, xb))


def rouge_l(corpus: Sequence[CaptionPair]) -> MetricResult:
    """Mean best-reference LCS F1 (beta = 1)."""
    if not corpus:
        raise ValidationError("empty caption corpus")
    values = []
    for pair in corpus:
        hyp = tokenize_caption(pair.hypothesis)
        best = 0.0
        for ref_text in pair.references:
            ref = tokenize_caption(ref_text)
            if not hyp or not ref:
                continue
            lcs = _lcs(hyp, ref)
            if lcs == 0:
                continue
            precision = lcs / len(hyp)
            recall = lcs / len(ref)
            best = max(best, 2 * precision * recall / (precision + recall))
        values.append(best)
    return MetricResult("ROUGE-L", float(np.mean(values)), len(corpus))


def cider(corpus: Sequence[CaptionPair]) -> MetricResult:
    """Plain CIDEr: mean over pairs of the n-gram tf-idf cosine, n = 1..4,
    averaged over n and references, scaled by 10.

    idf(g) = log(N / max(1, df(g))) where df counts the pairs whose
    references contain g.  No length penalty (not CIDEr-D).
    """
    if len(corpus) < 2:
        raise ValidationError("CIDEr needs a corpus of >= 2 pairs (idf)")
    n_docs = len(corpus)
    df = [Counter() for _ in range(4)]
    for pair in corpus:
        for n in range(1, 5):
            seen = set()
            for ref in pair.references:
                seen.update(_ngrams(tokenize_caption(ref), n))
            for gram in seen:
                df[n - 1][gram] += 1

    def tfidf(tokens: list[str], n: int) -> dict:
        return {
            gram: count * math.log(n_docs / max(1, df[n - 1][gram]))
            for gram, count in _ngrams(tokens, n).items()
        }

    def cosine(u: dict, v: dict) -> float:
        dot = sum(w * v[g] for g, w in u.items() if g in v)
        nu = math.sqrt(sum(w * w for w in u.values()))
        nv = math.sqrt(sum(w * w for w in v.values()))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        return dot / (nu * nv)

    scores = []
    for pair in corpus:
        hyp = tokenize_caption(pair.hypothesis)
        per_n = []
        for n in range(1, 5):
            hv = tfidf(hyp, n)
            sims = [
                cosine(hv, tfidf(tokenize_caption(ref), n))
                for ref in pair.references
            ]
            per_n.append(float(np.mean(sims)))
        scores.append(10.0 * float(np.mean(per_n)))
    return MetricResult("CIDEr", float(np.mean(scores)), len(corpus))


# ---------------------------------------------------------------------------
# reporting


_SWITCH_LINES = (
    "nDCG gain: linear (rel / log2(rank+1)) unless stated in the metric name",
    "MCQ ties: counted incorrect",
    "CIDEr variant: plain tf-idf (no length penalty), scaled by 10",
    "METEOR: unavailable (requires external synonym resources)",
)


def format_report(results: Sequence[MetricResult], title: str = "evaluation") -> str:
    """Deterministic text report: values, counts, and active definitions."""
    lines = [f"== {title} ==\n"]
    for res in results:
        lines.append(
            f"{res.name:<16} {res.value:.6f}"
            f"   evaluated={res.evaluated} excluded={res.excluded}"
        )
        for label, value in sorted(res.detail.get("per_label", {}).items()):
            lines.append(f"    {label:<12} {value:.6f}")
    lines.append("")
    lines.append("definitions:")
    lines.extend(f"  - {line}" for line in _SWITCH_LINES)
    return "\n".join(lines) + "\n"
