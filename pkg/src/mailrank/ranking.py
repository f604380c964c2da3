"""Scoring of retrieved emails and the end-to-end search pipeline.

``score = sscore * (cscore + tscore)`` where

* ``tscore`` is 1 when the email sits in a thread whose subject holds every
  query word;
* ``cscore`` sums the cosine similarity of each of the email's documents to
  the query, halved for every quotation level;
* ``sscore`` is the cosine similarity between the sender's pooled profile
  and the query.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import TYPE_CHECKING, Mapping, Sequence

from .query import ExpandedQuery, expand_query, parse_query

if TYPE_CHECKING:
    from .engine import Engine

INDEX_HIT = "index"
DESCENDANT_HIT = "descendant"
SUBJECT_HIT = "subject"

Vector = Mapping[str, float]


@dataclass
class ScoredEmail:
    email_id: str
    tscore: int
    cscore: float
    sscore: float
    score: float
    date: datetime
    subject: str
    provenance: frozenset[str] = field(default_factory=frozenset)
    rank: int = 0

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "score": self.score,
            "tscore": self.tscore,
            "cscore": self.cscore,
            "sscore": self.sscore,
            "id": self.email_id,
            "date": self.date.isoformat(),
            "subject": self.subject,
            "provenance": sorted(self.provenance),
        }


@dataclass
class RetrievedSet:
    provenance: dict[str, set[str]]
    thread_ids: set[str]
    candidates: set[str]

    @property
    def email_ids(self) -> list[str]:
        return sorted(self.provenance)


def cosine(u: Vector, v: Vector) -> float:
    """Cosine of two sparse vectors; 0 when either has zero norm."""
    if len(u) > len(v):
        u, v = v, u
    dot = sum(w * v.get(t, 0.0) for t, w in u.items())
    if not dot:
        return 0.0
    nu = math.sqrt(sum(w * w for w in u.values()))
    nv = math.sqrt(sum(w * w for w in v.values()))
    if not nu or not nv:
        return 0.0
    return dot / (nu * nv)


def tscore(email_id: str, retrieved_threads) -> int:
    return int(any(email_id in t.member_email_ids for t in retrieved_threads))


def decayed_sum(similarities: Sequence[float]) -> float:
    return sum(0.5 ** j * sim for j, sim in enumerate(similarities))


def cscore(doc_vectors: Sequence[Vector], query_vector: Vector) -> float:
    """Level-decayed content score; ``doc_vectors[j]`` is the document at level j."""
    return decayed_sum([cosine(vec, query_vector) for vec in doc_vectors])


def sscore(sender_vector: Vector, query_vector: Vector) -> float:
    return cosine(sender_vector, query_vector)


def combine(s: float, c: float, t: int, smoothing: float = 0.0) -> float:
    return (s + smoothing) * (c + t)


def query_vectors(engine: "Engine", expanded: ExpandedQuery) -> tuple[dict[str, float], dict[str, float]]:
    """Query vector against the document index and against the sender registry."""
    qtf = expanded.term_weights()
    doc_q, sender_q = {}, {}
    for term, f in qtf.items():
        w = f * engine.index.idf(term)
        if w:
            doc_q[term] = w
        w = f * engine.profiles.idf(term)
        if w:
            sender_q[term] = w
    return doc_q, sender_q


def retrieve(engine: "Engine", expanded: ExpandedQuery) -> RetrievedSet:
    """E_R: index hits, emails below a hit in a thread, and subject-matched threads."""
    store = engine.threads
    candidates = engine.index.retrieve_candidates(expanded)
    matched_threads = store.threads_matching(expanded)
    provenance: dict[str, set[str]] = {}

    def tag(ids, label):
        for eid in ids:
            if eid in engine.mailbox.emails:
                provenance.setdefault(eid, set()).add(label)

    for ref, below in store.descendants(candidates).items():
        tag(store.node_by_ref[ref].body_email_ids, INDEX_HIT)
        for node in below:
            tag(node.body_email_ids, DESCENDANT_HIT)
    for thread in matched_threads:
        tag(thread.member_email_ids, SUBJECT_HIT)
    return RetrievedSet(provenance, {t.id for t in matched_threads}, candidates)


def rank(scored: list[ScoredEmail]) -> list[ScoredEmail]:
    """Score descending, then newest first, then id; assigns 1-based ranks."""
    out = sorted(scored, key=lambda s: (-s.score, -s.date.timestamp(), s.email_id))
    for i, s in enumerate(out, 1):
        s.rank = i
    return out


def score_emails(
    engine: "Engine",
    expanded: ExpandedQuery,
    retrieved: RetrievedSet,
    sender_vector_fn=None,
    smoothing: float | None = None,
) -> list[ScoredEmail]:
    """Score every retrieved email.

    ``sender_vector_fn(sender, vocab)`` replaces the local sender vectors,
    which is how network expertise is folded in.
    """
    if smoothing is None:
        smoothing = engine.config.smoothing
    vocab = expanded.vocab
    doc_q, sender_q = query_vectors(engine, expanded)
    sender_vector_fn = sender_vector_fn or engine.profiles.sender_vector
    sim_cache: dict[str, float] = {}
    s_cache: dict[str, float] = {}
    out = []
    for eid in retrieved.email_ids:
        e = engine.mailbox.emails[eid]
        sims = []
        for ref in engine.threads.email_nodes[eid]:
            sim = sim_cache.get(ref)
            if sim is None:
                sim = sim_cache[ref] = cosine(engine.index.doc_vector(ref, vocab), doc_q)
            sims.append(sim)
        c = decayed_sum(sims)
        s = s_cache.get(e.sender)
        if s is None:
            s = s_cache[e.sender] = sscore(sender_vector_fn(e.sender, vocab), sender_q)
        t = int(engine.threads.email_thread.get(eid) in retrieved.thread_ids)
        out.append(
            ScoredEmail(
                email_id=eid,
                tscore=t,
                cscore=c,
                sscore=s,
                score=combine(s, c, t, smoothing),
                date=e.date,
                subject=e.subject,
                provenance=frozenset(retrieved.provenance[eid]),
            )
        )
    return out


def prepare(engine: "Engine", raw_query: str) -> ExpandedQuery:
    query = parse_query(raw_query, engine.config.stopwords)
    return expand_query(query, engine.vocabulary(), engine.config)


def search(engine: "Engine", raw_query: str, sender_vector_fn=None) -> list[ScoredEmail]:
    """Retrieve and rank emails for ``raw_query``.

    Raises :class:`~mailrank.query.QueryError` when the query has no
    searchable words.
    """
    expanded = prepare(engine, raw_query)
    retrieved = retrieve(engine, expanded)
    return rank(score_emails(engine, expanded, retrieved, sender_vector_fn))
