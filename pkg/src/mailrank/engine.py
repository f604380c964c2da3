"""One mailbox with its thread store, document index and sender profiles.

A snapshot is a directory holding

``mailbox.jsonl``
    line 1 ``{"kind": "mailbox", ...}`` header (owner, contacts, config,
    per-case insertion counts), then one ``{"kind": "email", ...}`` line per
    email (documents inlined with level and fingerprint, plus the thread
    node refs of each level), then one ``{"kind": "thread", ...}`` line per
    thread tree (nested ``fingerprint``/``content``/``children`` objects).
``index.json``
    ``{"doc_count", "doc_freq", "postings": {term: {doc_ref: tf}},
    "documents", "senders": {...}}``.
"""

from __future__ import annotations

import gc
import json
import os
from collections import Counter
from pathlib import Path
from typing import Iterable

from .config import Config
from .corpus import Email, Mailbox
from .index import InvertedIndex, SenderProfiles
from .threads import CASES, InsertionReport, ThreadStore

SNAPSHOT_VERSION = 1


class Engine:
    def __init__(self, config: Config | None = None, owner: str = ""):
        self.config = config or Config()
        self.mailbox = Mailbox(owner=owner)
        self.threads = ThreadStore(self.config)
        self.index = InvertedIndex(self.config.stopwords)
        self.profiles = SenderProfiles(self.config.stopwords)
        self.case_counts: Counter[str] = Counter()

    def add(self, e: Email) -> InsertionReport | None:
        """Thread, index and profile one email. Known ids are ignored."""
        if not self.mailbox.add(e):
            return None
        report = self.threads.add_email(e)
        for node in report.inserted:
            self.index.add_document(node.ref, node.content)
        self.profiles.add_email(e)
        self.case_counts[report.case] += 1
        return report

    def add_all(self, emails: Iterable[Email]) -> list[InsertionReport]:
        return [r for r in (self.add(e) for e in emails) if r is not None]

    def remove(self, email_id: str) -> Email | None:
        e = self.mailbox.remove(email_id)
        if e is None:
            return None
        for node in self.threads.remove_email(email_id):
            self.index.remove_document(node.ref)
        self.profiles.remove_email(e)
        return e

    def vocabulary(self) -> set[str]:
        return self.index.vocabulary() | self.threads.subject_vocabulary()

    def set_owner(self, owner: str) -> None:
        self.mailbox.owner = owner
        self.mailbox.contacts.discard(owner)

    def infer_owner(self) -> str:
        """Most frequent recipient, the usual owner of an inbox dump."""
        counts = Counter(r for e in self.mailbox for r in e.recipients)
        return min(counts, key=lambda a: (-counts[a], a)) if counts else ""

    def stats(self) -> dict:
        return {
            "emails": len(self.mailbox),
            "documents": self.index.doc_count,
            "threads": len(self.threads),
            "terms": len(self.index.postings),
            "senders": self.profiles.sender_count,
            "cases": {c: self.case_counts.get(c, 0) for c in CASES},
        }

    # -- snapshot --------------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        header = {
            "kind": "mailbox",
            "version": SNAPSHOT_VERSION,
            "owner": self.mailbox.owner,
            "contacts": sorted(self.mailbox.contacts),
            "config": self.config.to_dict(),
            "cases": dict(sorted(self.case_counts.items())),
        }
        _atomic_write(directory / "mailbox.jsonl", _mailbox_lines(self, header))
        index_doc = self.index.to_dict()
        index_doc["senders"] = self.profiles.to_dict()["senders"]
        _atomic_write(directory / "index.json", [json.dumps(index_doc, ensure_ascii=False)])

    @classmethod
    def load(cls, directory: str | Path, config: Config | None = None) -> "Engine":
        # every object built here lives as long as the engine; collector passes only cost time
        enabled = gc.isenabled()
        gc.disable()
        try:
            return cls._load(Path(directory), config)
        finally:
            if enabled:
                gc.enable()

    @classmethod
    def _load(cls, directory: Path, config: Config | None) -> "Engine":
        email_nodes: dict[str, list[str]] = {}
        threads = []
        with open(directory / "mailbox.jsonl", encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("kind") != "mailbox":
                raise ValueError(f"{directory}: not a mailbox snapshot")
            stored = Config.from_dict(header["config"])
            if config is not None:
                # index-shaping settings come from the snapshot
                config.stopwords = stored.stopwords
            engine = cls(config or stored, owner=header["owner"])
            emails = engine.mailbox.emails
            for line in fh:
                rec = json.loads(line)
                if rec["kind"] == "email":
                    e = Email.from_record(rec)
                    emails[e.id] = e
                    email_nodes[e.id] = rec["nodes"]
                elif rec["kind"] == "thread":
                    threads.append(rec)
        engine.mailbox.contacts = set(header["contacts"])
        engine.case_counts.update(header.get("cases", {}))
        engine.threads.load_records(threads, email_nodes)
        with open(directory / "index.json", encoding="utf-8") as fh:
            data = json.load(fh)
        engine.index = InvertedIndex.from_dict(data)
        engine.profiles = SenderProfiles.from_dict({"stopwords": data.get("stopwords", True), "senders": data["senders"]})
        return engine


def _mailbox_lines(engine: Engine, header: dict):
    yield json.dumps(header, ensure_ascii=False)
    for eid in sorted(engine.mailbox.emails):
        rec = engine.mailbox.emails[eid].to_record()
        rec["kind"] = "email"
        rec["nodes"] = engine.threads.email_nodes[eid]
        yield json.dumps(rec, ensure_ascii=False)
    for rec in engine.threads.to_records():
        rec["kind"] = "thread"
        yield json.dumps(rec, ensure_ascii=False)


def _atomic_write(path: Path, lines: Iterable[str]) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")
    os.replace(tmp, path)
