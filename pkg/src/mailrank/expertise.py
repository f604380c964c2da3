"""Sender-expertise sharing between mailbox clients and one server.

Clients push the TF-IDF weights of their owner's public mail; the server
keeps the latest push per user and answers "who writes about these terms".

Wire protocol: one JSON object per line (UTF-8) over TCP, every message
carrying ``"v": 1`` and a ``"kind"``:

========  =========  ========================================================
kind      direction  fields
========  =========  ========================================================
UPDATE    c -> s     ``user`` (str), ``epoch`` (int), ``entries``
                     (list of ``[term, weight]``, weight >= 0)
ACK       s -> c     ``user``, ``epoch``, ``accepted`` (bool)
QUERY     c -> s     ``terms`` (non-empty list of str)
ANSWER    s -> c     ``senders``: list of ``{"sender", "weights": {term: w},
                     "aggregate"}`` sorted by aggregate desc, then sender
ERROR     s -> c     ``error`` (str); the connection stays open
========  =========  ========================================================

Server state is an append-only log of accepted updates next to a compacted
snapshot; startup loads the snapshot and replays the log.
"""

from __future__ import annotations

import json
import logging
import math
import os
import socket
import socketserver
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .index import email_terms
from .ranking import cosine

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
MAX_LINE = 1 << 22


class ProtocolError(ValueError):
    pass


@dataclass
class ExpertiseUpdate:
    user: str
    epoch: int
    entries: list[tuple[str, float]]

    def to_message(self) -> dict:
        return {"v": PROTOCOL_VERSION, "kind": "UPDATE", "user": self.user, "epoch": self.epoch,
                "entries": [[t, w] for t, w in self.entries]}

    @classmethod
    def from_message(cls, msg: dict) -> "ExpertiseUpdate":
        user, epoch, entries = msg.get("user"), msg.get("epoch"), msg.get("entries")
        if not isinstance(user, str) or not user:
            raise ProtocolError("UPDATE needs a non-empty string 'user'")
        if not isinstance(epoch, int) or isinstance(epoch, bool):
            raise ProtocolError("UPDATE needs an integer 'epoch'")
        if not isinstance(entries, list):
            raise ProtocolError("UPDATE needs a list 'entries'")
        out = []
        for item in entries:
            if not (isinstance(item, (list, tuple)) and len(item) == 2 and isinstance(item[0], str)
                    and isinstance(item[1], (int, float)) and not isinstance(item[1], bool)):
                raise ProtocolError(f"bad entry {item!r}; expected [term, weight]")
            w = float(item[1])
            if not math.isfinite(w) or w < 0:
                raise ProtocolError(f"weight for {item[0]!r} must be finite and non-negative")
            out.append((item[0], w))
        return cls(user, epoch, out)


@dataclass
class AnswerEntry:
    sender: str
    weights: dict[str, float]
    aggregate: float


@dataclass
class Recommendation:
    sender: str
    aggregate: float
    in_contacts: bool = False


@dataclass
class _UserState:
    epoch: int
    weights: dict[str, float] = field(default_factory=dict)


class ServerState:
    """Per-user latest weights; optionally durable under ``path``.

    ``path`` names the snapshot file; the log lives at ``path + ".log"``.
    """

    def __init__(self, path: str | Path | None = None, compact_every: int = 256):
        self.users: dict[str, _UserState] = {}
        self.path = Path(path) if path is not None else None
        self.compact_every = compact_every
        self._lock = threading.Lock()
        self._log = None
        self._pending = 0
        if self.path is not None:
            self._recover()

    @property
    def log_path(self) -> Path:
        assert self.path is not None
        return self.path.with_name(self.path.name + ".log")

    def _recover(self) -> None:
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                data = json.load(fh)
            for user, rec in data["users"].items():
                self.users[user] = _UserState(rec["epoch"], dict(rec["weights"]))
        if self.log_path.exists():
            good = 0
            with open(self.log_path, "rb") as fh:
                for line in fh:
                    try:
                        if not line.endswith(b"\n"):
                            raise ValueError("unterminated record")
                        update = ExpertiseUpdate.from_message(json.loads(line))
                    except ValueError:
                        log.warning("dropping torn log tail of %s at byte %d", self.log_path, good)
                        break
                    self._apply(update)
                    self._pending += 1
                    good += len(line)
            os.truncate(self.log_path, good)
        self._log = open(self.log_path, "a", encoding="utf-8")

    def _apply(self, update: ExpertiseUpdate) -> bool:
        current = self.users.get(update.user)
        if current is not None and update.epoch <= current.epoch:
            return False
        self.users[update.user] = _UserState(update.epoch, {t: w for t, w in update.entries if w > 0})
        return True

    def apply_update(self, update: ExpertiseUpdate) -> bool:
        with self._lock:
            accepted = self._apply(update)
            if accepted and self._log is not None:
                self._log.write(json.dumps(update.to_message()) + "\n")
                self._log.flush()
                os.fsync(self._log.fileno())
                self._pending += 1
                if self._pending >= self.compact_every:
                    self._compact()
            return accepted

    def _compact(self) -> None:
        tmp = self.path.with_name(self.path.name + ".tmp")
        data = {"version": PROTOCOL_VERSION,
                "users": {u: {"epoch": s.epoch, "weights": s.weights} for u, s in sorted(self.users.items())}}
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(data, fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path)
        self._log.close()
        self._log = open(self.log_path, "w", encoding="utf-8")
        self._pending = 0

    def compact(self) -> None:
        with self._lock:
            if self.path is not None:
                self._compact()

    def answer(self, terms: Iterable[str]) -> list[AnswerEntry]:
        terms = list(dict.fromkeys(terms))
        with self._lock:
            snapshot = [(u, dict(s.weights)) for u, s in self.users.items()]
        return answer_from(snapshot, terms)

    def close(self) -> None:
        with self._lock:
            if self._log is not None:
                self._log.close()
                self._log = None


def answer_from(users: Iterable[tuple[str, Mapping[str, float]]], terms: list[str]) -> list[AnswerEntry]:
    out = []
    for user, weights in users:
        per_term = {t: weights.get(t, 0.0) for t in terms}
        aggregate = sum(per_term.values())
        if aggregate > 0:
            out.append(AnswerEntry(user, per_term, aggregate))
    out.sort(key=lambda a: (-a.aggregate, a.sender))
    return out


def server_apply_update(state: ServerState, update: ExpertiseUpdate) -> dict:
    return {"accepted": state.apply_update(update)}


def server_answer_query(state: ServerState, terms: Iterable[str]) -> list[AnswerEntry]:
    return state.answer(terms)


# -- message handling ----------------------------------------------------------

def _error(text: str) -> dict:
    return {"v": PROTOCOL_VERSION, "kind": "ERROR", "error": text}


def handle_message(state: ServerState, line: bytes | str) -> dict:
    try:
        msg = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        return _error(f"invalid JSON: {exc}")
    if not isinstance(msg, dict):
        return _error("message must be a JSON object")
    if msg.get("v") != PROTOCOL_VERSION:
        return _error(f"unsupported protocol version {msg.get('v')!r}")
    kind = msg.get("kind")
    try:
        if kind == "UPDATE":
            update = ExpertiseUpdate.from_message(msg)
            accepted = state.apply_update(update)
            return {"v": PROTOCOL_VERSION, "kind": "ACK", "user": update.user, "epoch": update.epoch,
                    "accepted": accepted}
        if kind == "QUERY":
            terms = msg.get("terms")
            if not isinstance(terms, list) or not terms or not all(isinstance(t, str) for t in terms):
                raise ProtocolError("QUERY needs a non-empty list of string 'terms'")
            senders = [{"sender": a.sender, "weights": a.weights, "aggregate": a.aggregate}
                       for a in state.answer(terms)]
            return {"v": PROTOCOL_VERSION, "kind": "ANSWER", "senders": senders}
    except ProtocolError as exc:
        return _error(str(exc))
    return _error(f"unknown message kind {kind!r}")


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        state: ServerState = self.server.state  # type: ignore[attr-defined]
        while True:
            line = self.rfile.readline(MAX_LINE)
            if not line:
                return
            if not line.strip():
                continue
            reply = handle_message(state, line)
            self.wfile.write((json.dumps(reply) + "\n").encode("utf-8"))
            self.wfile.flush()


class ExpertiseServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], state: ServerState):
        self.state = state
        super().__init__(address, _Handler)


def parse_address(text: str, default_port: int = 7878) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text, default_port
    return host or "127.0.0.1", int(port)


# -- client side -----------------------------------------------------------------

class ExpertiseClient:
    """Blocking line-protocol client; one connection per instance."""

    def __init__(self, address: tuple[str, int] | str, timeout: float = 5.0):
        if isinstance(address, str):
            address = parse_address(address)
        self.sock = socket.create_connection(address, timeout=timeout)
        self._rfile = self.sock.makefile("rb")

    def _call(self, msg: dict) -> dict:
        self.sock.sendall((json.dumps(msg) + "\n").encode("utf-8"))
        line = self._rfile.readline(MAX_LINE)
        if not line:
            raise ConnectionError("server closed the connection")
        reply = json.loads(line)
        if reply.get("kind") == "ERROR":
            raise ProtocolError(reply.get("error", "server error"))
        return reply

    def send_raw(self, line: bytes) -> dict:
        self.sock.sendall(line)
        return json.loads(self._rfile.readline(MAX_LINE))

    def update(self, update: ExpertiseUpdate) -> bool:
        return bool(self._call(update.to_message())["accepted"])

    def query(self, terms: Iterable[str]) -> list[AnswerEntry]:
        reply = self._call({"v": PROTOCOL_VERSION, "kind": "QUERY", "terms": list(terms)})
        return [AnswerEntry(s["sender"], dict(s["weights"]), s["aggregate"]) for s in reply["senders"]]

    def close(self) -> None:
        self._rfile.close()
        self.sock.close()

    def __enter__(self) -> "ExpertiseClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def is_public(e, rule: str) -> bool:
    if rule == "all":
        return True
    if rule == "none":
        return False
    return e.public


def owner_update(engine, epoch: int, rule: str | None = None) -> ExpertiseUpdate:
    """Weights of the owner's sent mail that the public rule lets out.

    Term frequencies come from the permitted emails only; the inverse
    sender frequency is the local registry's.
    """
    rule = rule or engine.config.public_rule
    owner = engine.mailbox.owner
    counts: Counter[str] = Counter()
    for e in engine.mailbox:
        if e.sender == owner and is_public(e, rule):
            counts.update(email_terms(e, engine.config.stopwords))
    entries = []
    for term in sorted(counts):
        w = counts[term] * engine.profiles.idf(term)
        if w > 0:
            entries.append((term, w))
    return ExpertiseUpdate(owner, epoch, entries)


def network_sender_vector(local_vector_fn, answer: Iterable[AnswerEntry]):
    """Sender-vector function with network weights overriding local ones per term."""
    by_sender = {a.sender: a.weights for a in answer}

    def vector(sender: str, vocab: Iterable[str]) -> dict[str, float]:
        vocab = list(vocab)
        local = local_vector_fn(sender, vocab)
        remote = by_sender.get(sender)
        if not remote:
            return local
        out = {}
        for term in vocab:
            w = remote.get(term, 0.0) or local.get(term, 0.0)
            if w:
                out[term] = w
        return out

    return vector


def global_sscore(e, profiles, answer: Iterable[AnswerEntry], query_vector: Mapping[str, float],
                  vocab: Iterable[str] | None = None) -> float:
    vector = network_sender_vector(profiles.sender_vector, answer)
    return cosine(vector(e.sender, query_vector.keys() if vocab is None else vocab), query_vector)


def search_global(engine, raw_query: str, address, timeout: float = 5.0):
    """Rank with network expertise; returns ``(results, answer)``.

    The server round-trip overlaps the local index and thread lookups.  If
    the server cannot be reached the local ranking is returned with
    ``answer = None``.
    """
    from concurrent.futures import ThreadPoolExecutor

    from .ranking import prepare, rank, retrieve, score_emails

    expanded = prepare(engine, raw_query)

    def fetch():
        with ExpertiseClient(address, timeout=timeout) as client:
            return client.query(expanded.vocab)

    with ThreadPoolExecutor(max_workers=1) as pool:
        pending = pool.submit(fetch)
        retrieved = retrieve(engine, expanded)
        try:
            answer = pending.result()
        except (OSError, ProtocolError, ValueError) as exc:
            log.warning("expertise server %s unavailable (%s); using local sender scores", address, exc)
            answer = None
    vector_fn = None if answer is None else network_sender_vector(engine.profiles.sender_vector, answer)
    return rank(score_emails(engine, expanded, retrieved, vector_fn)), answer


def recommend(answer: Iterable[AnswerEntry], contacts: Iterable[str], exclude: Iterable[str] = ()) -> list[Recommendation]:
    """Answer senders that are not yet contacts, in answer order."""
    contacts = set(contacts)
    skip = set(exclude)
    return [Recommendation(a.sender, a.aggregate, False) for a in answer
            if a.sender not in contacts and a.sender not in skip]
