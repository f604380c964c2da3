"""Query parsing and term expansion (stemming plus edit distance)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .config import Config
from .porter import stem as porter_stem
from .text import tokenize

__all__ = [
    "Query",
    "ExpandedQuery",
    "QueryError",
    "edit_distance",
    "within_distance",
    "expand_term",
    "expand_query",
    "parse_query",
    "porter_stem",
]


class QueryError(ValueError):
    """The query has no searchable words."""


@dataclass(frozen=True)
class Query:
    raw: str
    words: tuple[str, ...]


@dataclass
class ExpandedQuery:
    """Per original word, the vocabulary terms that stand in for it."""

    query: Query
    expansions: dict[str, frozenset[str]] = field(default_factory=dict)

    @property
    def vocab(self) -> list[str]:
        terms = set()
        for exp in self.expansions.values():
            terms |= exp
        return sorted(terms)

    def term_weights(self) -> dict[str, int]:
        """Query-side frequency of each expanded term.

        An expanded term inherits the frequency of every query word whose
        expansion set contains it.
        """
        weights: dict[str, int] = {}
        for word in self.query.words:
            for term in self.expansions.get(word, ()):
                weights[term] = weights.get(term, 0) + 1
        return weights

    def matches(self, tokens: Iterable[str]) -> bool:
        """True when every original word is covered by some token."""
        present = set(tokens)
        return all(
            word in present or not present.isdisjoint(self.expansions.get(word, ()))
            for word in self.expansions
        )


def parse_query(raw: str, stopwords: bool = True) -> Query:
    words = tuple(dict.fromkeys(tokenize(raw, stopwords)))
    if not words:
        raise QueryError(f"query {raw!r} has no searchable words")
    return Query(raw=raw, words=words)


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit insert, delete and substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def within_distance(a: str, b: str, limit: int) -> bool:
    """``edit_distance(a, b) <= limit`` with early exit."""
    if abs(len(a) - len(b)) > limit:
        return False
    if a == b:
        return True
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        if min(cur) > limit:
            return False
        prev = cur
    return prev[-1] <= limit


def expand_term(term: str, vocabulary: Iterable[str], config: Config | None = None) -> frozenset[str]:
    """Vocabulary terms sharing ``term``'s Porter stem or within its edit threshold."""
    config = config or Config()
    limit = config.edit_threshold(term)
    target = porter_stem(term)
    out = set()
    for v in vocabulary:
        if v == term or porter_stem(v) == target or within_distance(v, term, limit):
            out.add(v)
    return frozenset(out)


def expand_query(query: Query, vocabulary: Iterable[str], config: Config | None = None) -> ExpandedQuery:
    vocab = vocabulary if isinstance(vocabulary, (set, frozenset, dict)) else set(vocabulary)
    return ExpandedQuery(
        query=query,
        expansions={w: expand_term(w, vocab, config) for w in query.words},
    )
