"""Evaluation statistics: completeness histogram, field accuracy and ROUGE."""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .backends import similarity_fallback
from .errors import AlignmentError
from .sca import FIELDS, SENTINEL, ScaNode, canonicalize, completeness

# ---------------------------------------------------------------------------
# Completeness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompletenessDistribution:
    counts: dict[int, int]
    total: int

    def percentage(self, k: int) -> float:
        return 100.0 * self.counts[k] / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "counts": {str(k): {"count": v, "percentage": round(self.percentage(k), 4)} for k, v in self.counts.items()},
        }

    def table(self) -> str:
        lines = ["fields | count | percentage"]
        for k, v in self.counts.items():
            label = "1 field" if k == 1 else f"{k} fields"
            lines.append(f"{label} | {v} | {self.percentage(k):.2f}%")
        return "\n".join(lines)


def completeness_distribution(nodes: Iterable[ScaNode]) -> CompletenessDistribution:
    counts = Counter(int(completeness(n)) for n in nodes)
    full = {k: counts.get(k, 0) for k in range(len(FIELDS) + 1)}
    return CompletenessDistribution(full, sum(full.values()))


# ---------------------------------------------------------------------------
# Field accuracy
# ---------------------------------------------------------------------------

EXACT = "exact_canonical"
SIMILARITY = "similarity"


@dataclass(frozen=True)
class FieldAccuracyReport:
    matches: dict[str, int]
    compared: dict[str, int]
    mode: str
    threshold: float | None = None

    def accuracy(self, fld: str) -> float:
        return self.matches[fld] / self.compared[fld] if self.compared[fld] else 0.0

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "threshold": self.threshold,
            "fields": {
                f: {"matches": self.matches[f], "compared": self.compared[f], "accuracy": self.accuracy(f)}
                for f in FIELDS
            },
        }

    def table(self) -> str:
        lines = ["field | matches | compared | accuracy"]
        lines += [f"{f} | {self.matches[f]} | {self.compared[f]} | {self.accuracy(f):.4f}" for f in FIELDS]
        return "\n".join(lines)


def field_match(a: str, b: str, mode: str = SIMILARITY, threshold: float = 0.8) -> bool:
    if a == SENTINEL or b == SENTINEL:
        return a == b
    if mode == EXACT:
        return canonicalize(a) == canonicalize(b)
    if mode == SIMILARITY:
        return canonicalize(a) == canonicalize(b) or similarity_fallback(a, b) >= threshold
    raise ValueError(f"unknown match mode {mode!r}")


def _source_key(node: ScaNode) -> tuple[str, int]:
    return (node.source.spec_id, node.source.sentence_id)


def field_accuracy(
    extracted: Sequence[ScaNode],
    gold: Sequence[ScaNode],
    mode: str = SIMILARITY,
    threshold: float = 0.8,
) -> FieldAccuracyReport:
    """Compare gold nodes to extracted nodes aligned by source sentence."""
    by_source = {_source_key(n): n for n in extracted}
    matches = dict.fromkeys(FIELDS, 0)
    compared = dict.fromkeys(FIELDS, 0)
    for g in gold:
        e = by_source.get(_source_key(g))
        if e is None:
            raise AlignmentError(
                f"gold node {g.node_id} ({g.source.spec_id} sentence {g.source.sentence_id}) has no extracted counterpart"
            )
        ef, gf = e.fields(), g.fields()
        for f in FIELDS:
            compared[f] += 1
            matches[f] += field_match(ef[f], gf[f], mode, threshold)
    return FieldAccuracyReport(matches, compared, mode, threshold if mode == SIMILARITY else None)


# ---------------------------------------------------------------------------
# ROUGE
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: int, candidate_units: int, reference_units: int) -> PRF:
        p = overlap / candidate_units if candidate_units else 0.0
        r = overlap / reference_units if reference_units else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f)

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass(frozen=True)
class RougeScores:
    rouge1: PRF
    rouge2: PRF
    rougeL: PRF

    def to_dict(self) -> dict:
        return {"rouge1": self.rouge1.to_dict(), "rouge2": self.rouge2.to_dict(), "rougeL": self.rougeL.to_dict()}


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip surrounding punctuation, drop empties."""
    out = []
    for tok in text.lower().split():
        tok = tok.strip(string.punctuation)
        if tok:
            out.append(tok)
    return out


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Longest common subsequence length, bit-parallel over the positions of ``a``.

    Each zero bit of ``v`` marks a position of ``a`` used by the current LCS, so one
    pass over ``b`` with a few integer operations per token gives the answer.
    """
    if not a or not b:
        return 0
    masks: dict = {}
    for i, x in enumerate(a):
        masks[x] = masks.get(x, 0) | (1 << i)
    full = (1 << len(a)) - 1
    v = full
    for y in b:
        u = v & masks.get(y, 0)
        v = ((v + u) | (v - u)) & full
    return len(a) - bin(v).count("1")


def rouge_n(cand: Sequence[str], ref: Sequence[str], n: int) -> PRF:
    c, r = _ngrams(cand, n), _ngrams(ref, n)
    overlap = sum((c & r).values())
    return PRF.from_counts(overlap, sum(c.values()), sum(r.values()))


def rouge_l(cand: Sequence[str], ref: Sequence[str]) -> PRF:
    return PRF.from_counts(lcs_length(cand, ref), len(cand), len(ref))


def rouge(candidate: str, reference: str) -> RougeScores:
    cand, ref = tokenize(candidate), tokenize(reference)
    return RougeScores(rouge_n(cand, ref, 1), rouge_n(cand, ref, 2), rouge_l(cand, ref))


def rouge_table(scores: RougeScores) -> str:
    lines = ["metric | precision | recall | f1"]
    for name, prf in (("ROUGE-1", scores.rouge1), ("ROUGE-2", scores.rouge2), ("ROUGE-L", scores.rougeL)):
        lines.append(f"{name} | {prf.precision:.4f} | {prf.recall:.4f} | {prf.f1:.4f}")
    return "\n".join(lines)
