"""Tokenization shared by the index, the sender profiles and query parsing."""

from __future__ import annotations

import re
from collections import Counter
from typing import Iterable

_SPLIT_RE = re.compile(r"[\W_]+")

MIN_TOKEN_LEN = 2

# Classic English function-word list (same family as the SMART/NLTK lists).
STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because been
    before being below between both but by can could did do does doing down during
    each few for from further had has have having he her here hers herself him
    himself his how if in into is it its itself just me more most my myself no nor
    not now of off on once only or other our ours ourselves out over own same she
    should so some such than that the their theirs them themselves then there these
    they this those through to too under until up very was we were what when where
    which while who whom why will with would you your yours yourself yourselves
    """.split()
)


def tokenize(text: str, stopwords: bool = True) -> list[str]:
    """Case-fold, split on non-alphanumerics, drop short tokens and stopwords."""
    tokens = [t for t in _SPLIT_RE.split(text.casefold()) if len(t) >= MIN_TOKEN_LEN]
    if stopwords:
        tokens = [t for t in tokens if t not in STOPWORDS]
    return tokens


def term_counts(texts: Iterable[str], stopwords: bool = True) -> Counter[str]:
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(tokenize(text, stopwords))
    return counts
