"""Tunables, loadable from a JSON file and overridable from the command line."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

PUBLIC_RULES = ("flagged", "all", "none")


@dataclass
class Config:
    """Runtime settings.

    ``public_rule`` decides which of the owner's sent emails may feed the
    expertise server: ``flagged`` (only emails marked public), ``all`` or
    ``none``.
    """

    mailbox: str | None = None
    snapshot: str | None = None
    stopwords: bool = True
    short_term_max_len: int = 5
    edit_threshold_short: int = 1
    edit_threshold_long: int = 2
    smoothing: float = 0.0
    shingle_fallback: bool = False
    shingle_size: int = 8
    shingle_threshold: float = 0.9
    server: str | None = None
    public_rule: str = "flagged"

    def __post_init__(self) -> None:
        if self.public_rule not in PUBLIC_RULES:
            raise ValueError(f"public_rule must be one of {PUBLIC_RULES}, got {self.public_rule!r}")
        if self.smoothing < 0:
            raise ValueError("smoothing must be non-negative")

    def edit_threshold(self, term: str) -> int:
        if len(term) <= self.short_term_max_len:
            return self.edit_threshold_short
        return self.edit_threshold_long

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "Config":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
