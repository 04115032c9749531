"""Ranking protocol and metrics: raw/filtered MRR, Hits@K, accuracy.

Every test triple is ranked twice, once per corrupted side, against all
|V| candidate substitutions. Ties receive the average rank. The filtered
setting removes candidates that would form a different known-true triple;
the test entity itself is never removed.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

SETTINGS = ("raw", "filtered")
SIDES = ("head", "tail")


@dataclass
class RankingResult:
    triple: tuple
    side: str
    raw_rank: float
    filtered_rank: float


class FilterIndex:
    """Known positives indexed for O(1) per-query candidate filtering."""

    def __init__(self, triples):
        self.tails = defaultdict(list)  # (s, r) -> [o, ...]
        self.heads = defaultdict(list)  # (o, r) -> [s, ...]
        for s, r, o in triples:
            self.tails[(s, r)].append(o)
            self.heads[(o, r)].append(s)

    def filter_ids(self, triple, side):
        s, r, o = triple
        if side == "tail":
            return self.tails.get((s, r), ())
        return self.heads.get((o, r), ())


def _rank_of(scores, target, removed=None):
    t = scores[target]
    greater = scores > t
    equal = scores == t
    if removed is not None and len(removed):
        removed = np.asarray(removed)
        keep = removed != target
        greater[removed[keep]] = False
        equal[removed[keep]] = False
    return 1.0 + greater.sum() + 0.5 * (equal.sum() - 1)


def rank_candidates(triple, side, scorer, known):
    """Raw and filtered rank of one triple's true entity on one side.

    `scorer(triple, side)` returns scores over all candidate entities;
    `known` is the positive set (any triple iterable or a FilterIndex).
    """
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")
    if not isinstance(known, FilterIndex):
        known = FilterIndex(known)
    scores = np.asarray(scorer(triple, side), dtype=np.float64)
    s, _r, o = triple
    target = s if side == "head" else o
    raw = _rank_of(scores, target)
    filtered = _rank_of(scores, target, known.filter_ids(triple, side))
    return RankingResult(triple=tuple(triple), side=side,
                         raw_rank=raw, filtered_rank=filtered)


def evaluate_ranking(test_triples, scorer, known):
    """Both-sides ranking of every test triple, in input order."""
    if not isinstance(known, FilterIndex):
        known = FilterIndex(known)
    results = []
    for triple in test_triples:
        triple = (int(triple[0]), int(triple[1]), int(triple[2]))
        for side in SIDES:
            results.append(rank_candidates(triple, side, scorer, known))
    return results


def _ranks(results, setting):
    if setting not in SETTINGS:
        raise ValueError(f"setting must be one of {SETTINGS}, got {setting!r}")
    if setting == "raw":
        return np.array([r.raw_rank for r in results])
    return np.array([r.filtered_rank for r in results])


def mrr(results, setting="filtered"):
    if not results:
        raise ValueError("mrr of an empty result set is undefined")
    return float((1.0 / _ranks(results, setting)).mean())


def hits_at_k(results, k, setting="filtered"):
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not results:
        raise ValueError("hits@k of an empty result set is undefined")
    return float((_ranks(results, setting) <= k).mean())


def classification_accuracy(probs, true_classes):
    """Percentage of rows whose argmax (lowest id on ties) is the label."""
    probs = np.asarray(probs)
    predictions = probs.argmax(axis=1)
    return float(100.0 * (predictions == np.asarray(true_classes)).mean())


# ---------------------------------------------------------------------------
# reports


def link_report(results, dataset):
    return {
        "task": "linkpred",
        "dataset": dataset,
        "mrr_raw": mrr(results, "raw"),
        "mrr_filtered": mrr(results, "filtered"),
        "hits1": hits_at_k(results, 1),
        "hits3": hits_at_k(results, 3),
        "hits10": hits_at_k(results, 10),
    }


def classify_report(accuracy, dataset):
    return {"task": "classify", "dataset": dataset, "accuracy": accuracy}


def report_csv(report):
    """Two CSV lines (header, values) for table aggregation."""
    keys = list(report)
    values = [f"{report[k]:.6f}" if isinstance(report[k], float)
              else str(report[k]) for k in keys]
    return ",".join(keys) + "\n" + ",".join(values) + "\n"
