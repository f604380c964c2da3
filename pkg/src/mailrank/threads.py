"""Thread trees whose nodes are email documents rather than whole emails.

Every email contributes a chain of documents, oldest quotation first and
main body last.  A new email either starts a thread or is grafted onto the
longest chain of existing nodes that its documents match::

    Step1-new  no thread has the email's subject: new thread, whole chain
    Case1      every quotation matched: main body becomes a child of the path end
    Case2      only the oldest quotations matched: insert the rest of the chain
    Case3      every document matched: nothing to insert (late delivery)
    Case4      same subject but nothing matched: new thread, whole chain
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .config import Config
from .corpus import Email, EmailDocument, normalize_content, subject_key
from .text import tokenize

log = logging.getLogger(__name__)

NEW = "Step1-new"
CASE1 = "Case1"
CASE2 = "Case2"
CASE3 = "Case3"
CASE4 = "Case4"
CASES = (NEW, CASE1, CASE2, CASE3, CASE4)


def _digest(*parts: str) -> str:
    return hashlib.blake2b("\x1f".join(parts).encode("utf-8"), digest_size=12).hexdigest()


@dataclass(eq=False)
class ThreadNode:
    ref: str
    fingerprint: str
    content: str
    children: list["ThreadNode"] = field(default_factory=list)
    source_email_ids: set[str] = field(default_factory=set)
    # emails whose main body is this document
    body_email_ids: set[str] = field(default_factory=set)
    parent: "ThreadNode | None" = field(default=None, repr=False)

    def add_child(self, fp: str, content: str) -> "ThreadNode":
        child = ThreadNode(ref=_digest(self.ref, fp), fingerprint=fp, content=content, parent=self)
        self.children.append(child)
        return child

    def child_matching(self, doc: EmailDocument, similar) -> "ThreadNode | None":
        for child in self.children:
            if child.fingerprint == doc.fingerprint:
                return child
        if similar is not None:
            for child in self.children:
                if similar(child.content, doc.content):
                    return child
        return None

    def walk(self) -> Iterator["ThreadNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def descendants(self) -> list["ThreadNode"]:
        out = []
        stack = list(self.children)
        while stack:
            node = stack.pop()
            out.append(node)
            stack.extend(node.children)
        return out

    def to_dict(self) -> dict:
        return {
            "ref": self.ref,
            "fingerprint": self.fingerprint,
            "content": self.content,
            "sources": sorted(self.source_email_ids),
            "bodies": sorted(self.body_email_ids),
            "children": [c.to_dict() for c in self.children],
        }

    @classmethod
    def from_dict(cls, data: dict, parent: "ThreadNode | None" = None) -> "ThreadNode":
        node = cls(
            ref=data["ref"],
            fingerprint=data["fingerprint"],
            content=data["content"],
            source_email_ids=set(data["sources"]),
            body_email_ids=set(data["bodies"]),
            parent=parent,
        )
        node.children = [cls.from_dict(c, node) for c in data["children"]]
        return node


@dataclass(eq=False)
class Thread:
    id: str
    subject: str
    seq: int
    root: ThreadNode
    member_email_ids: set[str] = field(default_factory=set)

    @property
    def key(self) -> str:
        return subject_key(self.subject)

    def nodes(self) -> Iterator[ThreadNode]:
        return self.root.walk()

    def find(self, doc: EmailDocument, similar=None) -> ThreadNode | None:
        """Shallowest node holding ``doc`` (breadth-first)."""
        level = [self.root]
        while level:
            for node in level:
                if node.fingerprint == doc.fingerprint:
                    return node
            level = [c for n in level for c in n.children]
        if similar is not None:
            for node in self.nodes():
                if similar(node.content, doc.content):
                    return node
        return None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "subject": self.subject,
            "seq": self.seq,
            "members": sorted(self.member_email_ids),
            "root": self.root.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Thread":
        return cls(
            id=data["id"],
            subject=data["subject"],
            seq=data["seq"],
            root=ThreadNode.from_dict(data["root"]),
            member_email_ids=set(data["members"]),
        )


@dataclass
class MatchPath:
    """Matched nodes, shallowest (oldest quotation) first."""

    nodes: list[ThreadNode] = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.nodes)

    @property
    def end(self) -> ThreadNode | None:
        return self.nodes[-1] if self.nodes else None


@dataclass
class InsertionReport:
    case: str
    thread: Thread
    inserted: list[ThreadNode]
    # node for each document of the email, indexed by document level
    nodes_by_level: list[ThreadNode]

    @property
    def inserted_fingerprints(self) -> list[str]:
        return [n.fingerprint for n in self.inserted]


def shingles(text: str, size: int) -> set[tuple[str, ...]]:
    words = normalize_content(text).split()
    if len(words) < size:
        return {tuple(words)}
    return {tuple(words[i:i + size]) for i in range(len(words) - size + 1)}


def shingle_similarity(size: int, threshold: float):
    def similar(a: str, b: str) -> bool:
        sa, sb = shingles(a, size), shingles(b, size)
        union = sa | sb
        return bool(union) and len(sa & sb) / len(union) >= threshold

    return similar


def longest_match_path(thread: Thread, e: Email, similar=None) -> MatchPath:
    """Longest downward path matching e's documents from the oldest quotation on.

    The path may start at any node of the tree, not only the root.
    """
    docs = e.documents
    start = thread.find(docs[-1], similar)
    if start is None:
        return MatchPath()
    path = [start]
    for level in range(len(docs) - 2, -1, -1):
        nxt = path[-1].child_matching(docs[level], similar)
        if nxt is None:
            break
        path.append(nxt)
    return MatchPath(path)


def classify(n_p: int, n_e: int) -> str:
    if n_p == 0:
        return CASE4
    if n_p == n_e:
        return CASE3
    if n_p == n_e - 1:
        return CASE1
    return CASE2


class ThreadStore:
    """All thread trees of one mailbox, grouped by normalized subject."""

    def __init__(self, config: Config | None = None):
        self.config = config or Config()
        self.threads: dict[str, list[Thread]] = {}
        self.by_id: dict[str, Thread] = {}
        self.node_by_ref: dict[str, ThreadNode] = {}
        self.email_thread: dict[str, str] = {}
        self.email_nodes: dict[str, list[str]] = {}
        self._token_threads: dict[str, set[str]] = {}
        self._seq = 0
        self._similar = (
            shingle_similarity(self.config.shingle_size, self.config.shingle_threshold)
            if self.config.shingle_fallback
            else None
        )

    def __len__(self) -> int:
        return len(self.by_id)

    def __iter__(self) -> Iterator[Thread]:
        return iter(sorted(self.by_id.values(), key=lambda t: t.seq))

    def same_subject(self, subject: str) -> list[Thread]:
        return list(self.threads.get(subject_key(subject), ()))

    def node_count(self) -> int:
        return len(self.node_by_ref)

    # -- addition ------------------------------------------------------------

    def add_email(self, e: Email) -> InsertionReport:
        if e.id in self.email_thread:
            thread = self.by_id[self.email_thread[e.id]]
            nodes = [self.node_by_ref[r] for r in self.email_nodes[e.id]]
            return InsertionReport(CASE3, thread, [], nodes)

        candidates = self.same_subject(e.subject)
        if not candidates:
            return self._new_thread(e, NEW)

        best_thread, best_path = None, MatchPath()
        for thread in sorted(candidates, key=lambda t: t.seq):
            path = longest_match_path(thread, e, self._similar)
            if path.length > best_path.length:
                best_thread, best_path = thread, path
        case = classify(best_path.length, len(e.documents))
        if case == CASE4:
            return self._new_thread(e, CASE4)

        assert best_thread is not None
        inserted = []
        node = best_path.end
        for level in range(len(e.documents) - best_path.length - 1, -1, -1):
            doc = e.documents[level]
            node = node.add_child(doc.fingerprint, doc.content)
            inserted.append(node)
        chain = best_path.nodes + inserted
        return self._record(e, best_thread, chain, inserted, case)

    def _new_thread(self, e: Email, case: str) -> InsertionReport:
        oldest = e.documents[-1]
        key = subject_key(e.subject)
        tid = _digest(key, oldest.fingerprint)
        root = ThreadNode(ref=_digest(tid, oldest.fingerprint), fingerprint=oldest.fingerprint, content=oldest.content)
        self._seq += 1
        thread = Thread(id=tid, subject=e.subject, seq=self._seq, root=root)
        self.threads.setdefault(key, []).append(thread)
        self.by_id[tid] = thread
        for tok in set(tokenize(e.subject, self.config.stopwords)):
            self._token_threads.setdefault(tok, set()).add(tid)
        chain = [root]
        node = root
        for level in range(len(e.documents) - 2, -1, -1):
            doc = e.documents[level]
            node = node.add_child(doc.fingerprint, doc.content)
            chain.append(node)
        return self._record(e, thread, chain, list(chain), case)

    def _record(self, e: Email, thread: Thread, chain: list[ThreadNode],
                inserted: list[ThreadNode], case: str) -> InsertionReport:
        # chain runs oldest -> newest, so chain[-1] holds the main body
        for node in inserted:
            if node.ref in self.node_by_ref:
                log.debug("duplicate document %s in thread %s", node.fingerprint, thread.id)
            self.node_by_ref.setdefault(node.ref, node)
        for node in chain:
            node.source_email_ids.add(e.id)
        chain[-1].body_email_ids.add(e.id)
        thread.member_email_ids.add(e.id)
        self.email_thread[e.id] = thread.id
        by_level = list(reversed(chain))
        self.email_nodes[e.id] = [n.ref for n in by_level]
        return InsertionReport(case, thread, inserted, by_level)

    # -- deletion ------------------------------------------------------------

    def remove_email(self, email_id: str) -> list[ThreadNode]:
        """Detach an email and prune leaves no email refers to any more.

        Returns the pruned nodes.
        """
        tid = self.email_thread.pop(email_id, None)
        if tid is None:
            return []
        refs = self.email_nodes.pop(email_id)
        thread = self.by_id[tid]
        thread.member_email_ids.discard(email_id)
        for ref in refs:
            node = self.node_by_ref[ref]
            node.source_email_ids.discard(email_id)
            node.body_email_ids.discard(email_id)

        pruned = []
        for ref in refs:
            node = self.node_by_ref.get(ref)
            while node is not None and not node.children and not node.source_email_ids:
                pruned.append(node)
                del self.node_by_ref[node.ref]
                parent = node.parent
                if parent is None:
                    self._drop_thread(thread)
                else:
                    parent.children.remove(node)
                node = parent
        return pruned

    def _drop_thread(self, thread: Thread) -> None:
        del self.by_id[thread.id]
        group = self.threads[thread.key]
        group.remove(thread)
        if not group:
            del self.threads[thread.key]
        for tok in set(tokenize(thread.subject, self.config.stopwords)):
            ids = self._token_threads.get(tok)
            if ids is not None:
                ids.discard(thread.id)
                if not ids:
                    del self._token_threads[tok]

    def update_email(self, e: Email) -> InsertionReport:
        self.remove_email(e.id)
        return self.add_email(e)

    # -- retrieval -----------------------------------------------------------

    def subject_vocabulary(self) -> set[str]:
        return set(self._token_threads)

    def threads_matching(self, query) -> list[Thread]:
        """Threads whose subject covers every query word (``query`` is an ExpandedQuery)."""
        found: set[str] | None = None
        for word, expansion in query.expansions.items():
            ids: set[str] = set()
            for tok in expansion | {word}:
                ids |= self._token_threads.get(tok, set())
            found = ids if found is None else found & ids
            if not found:
                return []
        return sorted((self.by_id[t] for t in found or ()), key=lambda t: t.seq)

    def descendants(self, refs: Iterable[str]) -> dict[str, list[ThreadNode]]:
        return {ref: self.node_by_ref[ref].descendants() for ref in refs if ref in self.node_by_ref}

    # -- persistence -----------------------------------------------------------

    def to_records(self) -> list[dict]:
        return [t.to_dict() for t in self]

    def load_records(self, records: Iterable[dict], email_nodes: dict[str, list[str]]) -> None:
        for rec in records:
            thread = Thread.from_dict(rec)
            self.threads.setdefault(thread.key, []).append(thread)
            self.by_id[thread.id] = thread
            self._seq = max(self._seq, thread.seq)
            for node in thread.nodes():
                self.node_by_ref.setdefault(node.ref, node)
            for tok in set(tokenize(thread.subject, self.config.stopwords)):
                self._token_threads.setdefault(tok, set()).add(thread.id)
            for eid in thread.member_email_ids:
                self.email_thread[eid] = thread.id
        for group in self.threads.values():
            group.sort(key=lambda t: t.seq)
        self.email_nodes.update(email_nodes)


def add_email(store: ThreadStore, e: Email) -> InsertionReport:
    return store.add_email(e)


def retrieve(store: ThreadStore, query, indexed_hits: Iterable[str]):
    """Threads whose subject holds the query words, plus descendants of each hit."""
    return store.threads_matching(query), store.descendants(indexed_hits)
