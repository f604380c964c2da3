"""Graded-relevance evaluation and the fixed-criterion baseline rankers.

File formats (UTF-8, tab separated, ``#`` starts a comment line):

* judgments: ``query_id  email_id  grade`` with grade in 0..3;
* runs: ``query_id  rank  email_id  score``.

NDCG normalizes by the ideal ordering of the *retrieved list itself*, not
of the whole judgment pool, so a run that merely sorts what it found
perfectly scores 1.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Iterable, Mapping, Sequence

BASELINES = ("date", "subject", "sender", "thread-date")
GRADES = (0, 1, 2, 3)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class Judgment:
    query_id: str
    email_id: str
    grade: int

    def __post_init__(self) -> None:
        if self.grade not in GRADES:
            raise EvaluationError(f"grade must be one of {GRADES}, got {self.grade!r}")


def dcg_at_k(grades: Sequence[int], k: int) -> float:
    if k < 1:
        raise EvaluationError(f"K must be >= 1, got {k}")
    return sum((2 ** rel - 1) / math.log2(1 + i) for i, rel in enumerate(grades[:k], 1))


def ndcg_at_k(grades: Sequence[int], k: int) -> float:
    ideal = dcg_at_k(sorted(grades, reverse=True), k)
    if ideal == 0:
        return 0.0
    return dcg_at_k(grades, k) / ideal


def recall_precision_f(retrieved: Iterable[str], judgments: Mapping[str, int]) -> tuple[float, float, float]:
    """Binary recall/precision/F with grades 1-3 relevant; unjudged is irrelevant."""
    retrieved = list(dict.fromkeys(retrieved))
    relevant = {eid for eid, g in judgments.items() if g > 0}
    hits = sum(1 for eid in retrieved if eid in relevant)
    recall = hits / len(relevant) if relevant else 0.0
    precision = hits / len(retrieved) if retrieved else 0.0
    if recall + precision == 0:
        return recall, precision, 0.0
    return recall, precision, 2 * recall * precision / (recall + precision)


def rank_baseline(emails: Iterable, method: str, thread_of: Mapping[str, str] | None = None) -> list:
    """Order emails by a fixed criterion.

    ``date``: newest first.  ``subject``/``sender``: descending alphabetical.
    ``thread-date``: threads kept contiguous, the thread with the newest
    member first, members newest first.  Ties fall back to email id.
    """
    emails = list(emails)
    by_id = sorted(emails, key=lambda e: e.id)
    if method == "date":
        return sorted(by_id, key=lambda e: e.date, reverse=True)
    if method == "subject":
        return sorted(by_id, key=lambda e: e.subject.casefold(), reverse=True)
    if method == "sender":
        return sorted(by_id, key=lambda e: e.sender.casefold(), reverse=True)
    if method == "thread-date":
        thread_of = thread_of or {}
        groups: dict[str, list] = defaultdict(list)
        for e in sorted(by_id, key=lambda e: e.date, reverse=True):
            groups[thread_of.get(e.id, e.id)].append(e)
        ordered = sorted(groups.items(), key=lambda kv: (-kv[1][0].date.timestamp(), kv[0]))
        return [e for _, members in ordered for e in members]
    raise EvaluationError(f"unknown baseline {method!r}; choose from {BASELINES}")


def pool_top_k(runs: Iterable[Sequence[str]], k: int = 100) -> list[str]:
    """Union of each run's top-k ids, first-seen order."""
    pooled: dict[str, None] = {}
    for run in runs:
        for eid in list(run)[:k]:
            pooled.setdefault(eid, None)
    return list(pooled)


# -- files -------------------------------------------------------------------

def _rows(path: str | Path, width: int) -> Iterable[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != width:
                raise EvaluationError(f"{path}:{lineno}: expected {width} tab-separated fields, got {len(parts)}")
            yield lineno, parts


def load_judgments(path: str | Path) -> dict[str, dict[str, int]]:
    out: dict[str, dict[str, int]] = defaultdict(dict)
    for lineno, (qid, eid, grade) in _rows(path, 3):
        try:
            j = Judgment(qid, eid, int(grade))
        except ValueError as exc:
            raise EvaluationError(f"{path}:{lineno}: {exc}") from None
        if eid in out[qid] and out[qid][eid] != j.grade:
            raise EvaluationError(f"{path}:{lineno}: conflicting grade for ({qid}, {eid})")
        out[qid][eid] = j.grade
    return dict(out)


def load_run(path: str | Path) -> dict[str, list[str]]:
    rows: dict[str, list[tuple[int, str]]] = defaultdict(list)
    for lineno, (qid, rank, eid, _score) in _rows(path, 4):
        try:
            rows[qid].append((int(rank), eid))
        except ValueError:
            raise EvaluationError(f"{path}:{lineno}: rank must be an integer") from None
    return {qid: [eid for _, eid in sorted(items)] for qid, items in rows.items()}


def format_run(query_id: str, ranked: Iterable[tuple[str, float]]) -> list[str]:
    return [f"{query_id}\t{i}\t{eid}\t{score:.6f}" for i, (eid, score) in enumerate(ranked, 1)]


# -- reports -------------------------------------------------------------------

@dataclass
class QueryMetrics:
    ndcg: dict[int, float]
    recall: float
    precision: float
    f_measure: float


@dataclass
class MetricReport:
    run: str
    ks: list[int]
    per_query: dict[str, QueryMetrics] = field(default_factory=dict)

    def mean(self) -> dict:
        qs = list(self.per_query.values())
        if not qs:
            return {"ndcg": {k: 0.0 for k in self.ks}, "recall": 0.0, "precision": 0.0, "f_measure": 0.0}
        return {
            "ndcg": {k: fmean(q.ndcg[k] for q in qs) for k in self.ks},
            "recall": fmean(q.recall for q in qs),
            "precision": fmean(q.precision for q in qs),
            "f_measure": fmean(q.f_measure for q in qs),
        }

    def to_dict(self) -> dict:
        mean = self.mean()
        mean["ndcg"] = {str(k): v for k, v in mean["ndcg"].items()}
        return {
            "run": self.run,
            "ks": self.ks,
            "per_query": {
                qid: {"ndcg": {str(k): v for k, v in m.ndcg.items()}, "recall": m.recall,
                      "precision": m.precision, "f_measure": m.f_measure}
                for qid, m in sorted(self.per_query.items())
            },
            "mean": mean,
        }


def evaluate_run(name: str, run: Mapping[str, Sequence[str]], qrels: Mapping[str, Mapping[str, int]],
                 ks: Sequence[int]) -> MetricReport:
    """Score a run; ids missing from the judgments count as grade 0."""
    for k in ks:
        if k < 1:
            raise EvaluationError(f"K must be >= 1, got {k}")
    report = MetricReport(run=name, ks=list(ks))
    for qid in sorted(set(run) | set(qrels)):
        ranked = list(run.get(qid, ()))
        judged = qrels.get(qid, {})
        grades = [judged.get(eid, 0) for eid in ranked]
        r, p, f = recall_precision_f(ranked, judged)
        report.per_query[qid] = QueryMetrics({k: ndcg_at_k(grades, k) for k in ks}, r, p, f)
    return report


def format_table(reports: Sequence[MetricReport]) -> str:
    """Mean metrics, one column per run."""
    if not reports:
        return ""
    ks = reports[0].ks
    names = [r.run for r in reports]
    width = max(12, *(len(n) for n in names))
    means = [r.mean() for r in reports]
    lines = ["metric".ljust(10) + "".join(n.rjust(width + 2) for n in names)]
    for k in ks:
        lines.append(f"NDCG@{k}".ljust(10) + "".join(f"{m['ndcg'][k]:.4f}".rjust(width + 2) for m in means))
    for key, label in (("recall", "Recall"), ("precision", "Precision"), ("f_measure", "F-Measure")):
        lines.append(label.ljust(10) + "".join(f"{m[key]:.4f}".rjust(width + 2) for m in means))
    return "\n".join(lines)


def reports_json(reports: Sequence[MetricReport]) -> str:
    return json.dumps({"runs": [r.to_dict() for r in reports]}, indent=2, sort_keys=False)
