"""Inverted index over thread-node documents and per-sender term profiles.

Document weights are ``tf * ln(N / df)`` with N the number of indexed
documents.  Sender weights use the same formula with every sender's mail
pooled into one pseudo-document, so N becomes the number of senders and df
the number of senders who used the term.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Iterable

from .corpus import Email
from .text import term_counts, tokenize

__all__ = ["InvertedIndex", "SenderProfiles", "SenderProfile", "idf"]


def idf(n: int, df: int) -> float:
    if df <= 0 or n <= 0:
        return 0.0
    return math.log(n / df)


class InvertedIndex:
    """Postings ``term -> {doc_ref: tf}`` plus per-document term counts."""

    def __init__(self, stopwords: bool = True):
        self.stopwords = stopwords
        self.postings: dict[str, dict[str, int]] = {}
        self.doc_terms: dict[str, dict[str, int]] = {}

    @property
    def doc_count(self) -> int:
        return len(self.doc_terms)

    def doc_freq(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def vocabulary(self) -> set[str]:
        return set(self.postings)

    def __contains__(self, ref: str) -> bool:
        return ref in self.doc_terms

    def add_document(self, ref: str, text: str) -> bool:
        """Index ``text`` under ``ref``; re-adding a known ref is a no-op."""
        if ref in self.doc_terms:
            return False
        counts = Counter(tokenize(text, self.stopwords))
        self.doc_terms[ref] = dict(counts)
        for term, tf in counts.items():
            self.postings.setdefault(term, {})[ref] = tf
        return True

    def remove_document(self, ref: str) -> bool:
        counts = self.doc_terms.pop(ref, None)
        if counts is None:
            return False
        for term in counts:
            plist = self.postings[term]
            del plist[ref]
            if not plist:
                del self.postings[term]
        return True

    def tf(self, term: str, ref: str) -> int:
        return self.postings.get(term, {}).get(ref, 0)

    def idf(self, term: str) -> float:
        return idf(self.doc_count, self.doc_freq(term))

    def tf_idf(self, term: str, ref: str) -> float:
        tf = self.tf(term, ref)
        if not tf:
            return 0.0
        return tf * self.idf(term)

    def doc_vector(self, ref: str, vocab: Iterable[str]) -> dict[str, float]:
        """Sparse TF-IDF vector of a document restricted to ``vocab``."""
        terms = self.doc_terms.get(ref, {})
        out = {}
        for term in vocab:
            tf = terms.get(term)
            if tf:
                w = tf * self.idf(term)
                if w:
                    out[term] = w
        return out

    def retrieve_candidates(self, expanded) -> set[str]:
        """Documents that cover every query word through its expansion set."""
        result: set[str] | None = None
        for word, expansion in expanded.expansions.items():
            refs: set[str] = set()
            for term in expansion:
                refs.update(self.postings.get(term, ()))
            result = refs if result is None else result & refs
            if not result:
                return set()
        return result or set()

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "stopwords": self.stopwords,
            "doc_count": self.doc_count,
            "doc_freq": {t: len(p) for t, p in sorted(self.postings.items())},
            "postings": {t: dict(sorted(p.items())) for t, p in sorted(self.postings.items())},
            "documents": sorted(self.doc_terms),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InvertedIndex":
        idx = cls(stopwords=data.get("stopwords", True))
        idx.postings = {t: dict(p) for t, p in data["postings"].items()}
        idx.doc_terms = {ref: {} for ref in data["documents"]}
        for term, plist in idx.postings.items():
            for ref, tf in plist.items():
                idx.doc_terms[ref][term] = tf
        if idx.doc_count != data["doc_count"]:
            raise ValueError("index snapshot is inconsistent: doc_count does not match documents")
        return idx


class SenderProfile:
    __slots__ = ("sender", "term_freq", "email_ids")

    def __init__(self, sender: str):
        self.sender = sender
        self.term_freq: Counter[str] = Counter()
        self.email_ids: set[str] = set()


def email_terms(e: Email, stopwords: bool = True) -> Counter[str]:
    return term_counts([e.subject, *(d.content for d in e.documents)], stopwords)


class SenderProfiles:
    """Registry of sender pseudo-documents."""

    def __init__(self, stopwords: bool = True):
        self.stopwords = stopwords
        self.profiles: dict[str, SenderProfile] = {}
        self.sender_doc_freq: Counter[str] = Counter()
        self._email_sender: dict[str, str] = {}

    @property
    def sender_count(self) -> int:
        return len(self.profiles)

    def __contains__(self, sender: str) -> bool:
        return sender in self.profiles

    def add_email(self, e: Email) -> bool:
        if e.id in self._email_sender:
            return False
        profile = self.profiles.get(e.sender)
        if profile is None:
            profile = self.profiles[e.sender] = SenderProfile(e.sender)
        counts = email_terms(e, self.stopwords)
        for term in counts:
            if term not in profile.term_freq:
                self.sender_doc_freq[term] += 1
        profile.term_freq.update(counts)
        profile.email_ids.add(e.id)
        self._email_sender[e.id] = e.sender
        return True

    def remove_email(self, e: Email) -> bool:
        sender = self._email_sender.pop(e.id, None)
        if sender is None:
            return False
        profile = self.profiles[sender]
        profile.term_freq.subtract(email_terms(e, self.stopwords))
        for term in [t for t, c in profile.term_freq.items() if c <= 0]:
            del profile.term_freq[term]
            self.sender_doc_freq[term] -= 1
            if self.sender_doc_freq[term] <= 0:
                del self.sender_doc_freq[term]
        profile.email_ids.discard(e.id)
        if not profile.email_ids:
            del self.profiles[sender]
        return True

    def idf(self, term: str) -> float:
        return idf(self.sender_count, self.sender_doc_freq.get(term, 0))

    def weight(self, sender: str, term: str) -> float:
        profile = self.profiles.get(sender)
        if profile is None:
            return 0.0
        tf = profile.term_freq.get(term, 0)
        return tf * self.idf(term) if tf else 0.0

    def sender_vector(self, sender: str, vocab: Iterable[str]) -> dict[str, float]:
        out = {}
        for term in vocab:
            w = self.weight(sender, term)
            if w:
                out[term] = w
        return out

    def to_dict(self) -> dict:
        return {
            "stopwords": self.stopwords,
            "senders": {
                s: {"emails": sorted(p.email_ids), "terms": dict(sorted(p.term_freq.items()))}
                for s, p in sorted(self.profiles.items())
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SenderProfiles":
        reg = cls(stopwords=data.get("stopwords", True))
        for sender, rec in data["senders"].items():
            profile = reg.profiles[sender] = SenderProfile(sender)
            profile.term_freq.update(rec["terms"])
            profile.email_ids = set(rec["emails"])
            reg.sender_doc_freq.update(profile.term_freq.keys())
            for eid in profile.email_ids:
                reg._email_sender[eid] = sender
        return reg
