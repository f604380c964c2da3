"""Parse raw messages into emails and split bodies into main body and quotations.

An email body is cut into documents newest-first: level 0 is the text the
sender actually wrote, and each deeper level is one embedded prior message
with its quote markers and header block removed.  Two quoting styles are
recognized:

* separator lines (``-----Original Message-----``, Gmail-style
  ``---------- Forwarded message ----------`` and Lotus-style
  ``----- Forwarded by ... -----``) followed by an embedded header block;
* ``>``-prefixed line runs, where every extra ``>`` is one level deeper.

Nested quotations are found by peeling one level and segmenting the rest
again, so the two styles may be mixed freely.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from email.utils import getaddresses, parseaddr, parsedate_to_datetime
from pathlib import Path
from typing import Iterable, Iterator

log = logging.getLogger(__name__)

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)

__all__ = [
    "Email",
    "EmailDocument",
    "Mailbox",
    "ParseError",
    "fingerprint",
    "normalize_content",
    "normalize_subject",
    "parse_email",
    "segment_body",
    "email_from_record",
    "iter_directory",
    "iter_jsonl",
]


class ParseError(ValueError):
    """Raised for a message whose header block cannot be read."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


_PREFIX_RE = re.compile(r"^\s*(?:re|fwd?)\s*:\s*", re.IGNORECASE)


def normalize_subject(raw_subject: str) -> str:
    """Strip any run of leading ``Re:``/``Fw:``/``Fwd:`` prefixes.

    >>> normalize_subject("RE: re: FWD:  Budget")
    'Budget'
    """
    s = raw_subject.strip()
    while True:
        m = _PREFIX_RE.match(s)
        if not m:
            return s.strip()
        s = s[m.end():]


def subject_key(subject: str) -> str:
    return " ".join(subject.casefold().split())


_QUOTE_MARKS_RE = re.compile(r"^(?:[ \t]*>)+ ?", re.MULTILINE)


def normalize_content(text: str) -> str:
    text = _QUOTE_MARKS_RE.sub("", text.casefold())
    return " ".join(text.split())


def fingerprint(text: str) -> str:
    return hashlib.blake2b(normalize_content(text).encode("utf-8"), digest_size=16).hexdigest()


@dataclass
class EmailDocument:
    content: str
    level: int
    fingerprint: str = ""

    def __post_init__(self) -> None:
        if not self.fingerprint:
            self.fingerprint = fingerprint(self.content)


@dataclass
class Email:
    id: str
    sender: str
    recipients: list[str]
    date: datetime
    raw_subject: str
    subject: str
    documents: list[EmailDocument]
    date_missing: bool = False
    public: bool = False

    @property
    def main_body(self) -> EmailDocument:
        return self.documents[0]

    @property
    def quotations(self) -> list[EmailDocument]:
        return self.documents[1:]

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "from": self.sender,
            "to": self.recipients,
            "date": self.date.isoformat(),
            "date_missing": self.date_missing,
            "raw_subject": self.raw_subject,
            "subject": self.subject,
            "public": self.public,
            "documents": [
                {"level": d.level, "fingerprint": d.fingerprint, "content": d.content}
                for d in self.documents
            ],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Email":
        return cls(
            id=rec["id"],
            sender=rec["from"],
            recipients=list(rec["to"]),
            date=datetime.fromisoformat(rec["date"]),
            raw_subject=rec["raw_subject"],
            subject=rec["subject"],
            documents=[EmailDocument(d["content"], d["level"], d["fingerprint"]) for d in rec["documents"]],
            date_missing=rec.get("date_missing", False),
            public=rec.get("public", False),
        )


@dataclass
class Mailbox:
    owner: str = ""
    emails: dict[str, Email] = field(default_factory=dict)
    contacts: set[str] = field(default_factory=set)

    def add(self, email: Email) -> bool:
        if email.id in self.emails:
            return False
        self.emails[email.id] = email
        for addr in (email.sender, *email.recipients):
            if addr and addr != self.owner:
                self.contacts.add(addr)
        return True

    def remove(self, email_id: str) -> Email | None:
        return self.emails.pop(email_id, None)

    def __len__(self) -> int:
        return len(self.emails)

    def __iter__(self) -> Iterator[Email]:
        return iter(self.emails.values())


# -- body segmentation -------------------------------------------------------

_SEPARATOR_RES = [
    re.compile(r"^\s*-{2,}\s*original message\s*-{2,}\s*$", re.IGNORECASE),
    re.compile(r"^\s*-{2,}\s*forwarded message\s*-{2,}\s*$", re.IGNORECASE),
    re.compile(r"^\s*-{3,}\s*forwarded by\b.*-{3,}\s*$", re.IGNORECASE),
]
# Outlook's underscore rule only counts when a header block follows it.
_RULE_RE = re.compile(r"^\s*_{10,}\s*$")
_HEADER_LINE_RE = re.compile(r"^\s*\*?(from|sent|date|to|cc|bcc|subject|reply-to|importance)\*?\s*:", re.IGNORECASE)
_ATTRIBUTION_RE = re.compile(r"^\s*on\b.*\bwrote:\s*$", re.IGNORECASE)
_QUOTED_LINE_RE = re.compile(r"^\s*>")
_ONE_LEVEL_RE = re.compile(r"^\s*> ?")


def _is_separator(lines: list[str], i: int) -> bool:
    line = lines[i]
    if any(r.match(line) for r in _SEPARATOR_RES):
        return True
    if _RULE_RE.match(line):
        nxt = next((ln for ln in lines[i + 1:] if ln.strip()), "")
        return bool(_HEADER_LINE_RE.match(nxt))
    return False


def _strip_header_block(lines: list[str]) -> list[str]:
    """Drop the embedded header block that follows a separator line."""
    i = 0
    while i < len(lines) and not lines[i].strip():
        i += 1
    start = i
    # Lotus-style forwards put "Name\nDate" above the To/cc/Subject lines.
    lookahead = lines[i:i + 4]
    if lookahead and not _HEADER_LINE_RE.match(lines[i]):
        k = next((j for j, ln in enumerate(lookahead) if _HEADER_LINE_RE.match(ln)), None)
        if k is None or any(not ln.strip() for ln in lookahead[:k]):
            return lines[start:]
        i += k
    saw_header = saw_subject = False
    while i < len(lines):
        line = lines[i]
        if not line.strip():
            break
        m = _HEADER_LINE_RE.match(line)
        if m:
            saw_header = True
            saw_subject = m.group(1).lower() == "subject"
        elif not saw_header or saw_subject:
            # body text directly under the Subject line, no blank separator
            break
        # anything else is a wrapped header value
        i += 1
    if not saw_header:
        return lines[start:]
    return lines[i:]


def _trim_blank(lines: list[str]) -> list[str]:
    lo, hi = 0, len(lines)
    while lo < hi and not lines[lo].strip():
        lo += 1
    while hi > lo and not lines[hi - 1].strip():
        hi -= 1
    return lines[lo:hi]


def _split(lines: list[str]) -> list[str]:
    for i, line in enumerate(lines):
        if not _QUOTED_LINE_RE.match(line) and _is_separator(lines, i):
            head = "\n".join(_trim_blank(lines[:i]))
            rest = _trim_blank(_strip_header_block(lines[i + 1:]))
            if not rest:
                return [head]
            return [head] + _split(rest)

    quoted = [i for i, line in enumerate(lines) if _QUOTED_LINE_RE.match(line)]
    if not quoted:
        return ["\n".join(_trim_blank(lines))]

    head_lines = [line for line in lines if not _QUOTED_LINE_RE.match(line)]
    # Attribution line ("On ..., X wrote:") just above the first quoted line.
    j = quoted[0] - 1
    while j >= 0 and not lines[j].strip():
        j -= 1
    if j >= 0 and _ATTRIBUTION_RE.match(lines[j]):
        head_lines = [line for k, line in enumerate(lines) if k != j and not _QUOTED_LINE_RE.match(line)]
    inner = _trim_blank([_ONE_LEVEL_RE.sub("", lines[i], count=1) for i in range(quoted[0], quoted[-1] + 1)
                         if _QUOTED_LINE_RE.match(lines[i]) or not lines[i].strip()])
    head = "\n".join(_trim_blank(head_lines))
    if not inner:
        return [head]
    return [head] + _split(inner)


def segment_body(body: str) -> list[EmailDocument]:
    """Split a body into documents, level 0 first.

    A body without any recognizable quotation gives exactly one document.
    """
    lines = body.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    parts = _split(lines)
    return [EmailDocument(content=text, level=i) for i, text in enumerate(parts)]


# -- message parsing ---------------------------------------------------------

_FIELD_RE = re.compile(rb"^([!-9;-~]+)[ \t]*:(.*)$")


def _decode(raw: bytes) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        return raw.decode("latin-1")


def _parse_headers(raw: bytes) -> tuple[dict[str, str], int]:
    """Return lower-cased header fields and the byte offset where the body starts."""
    headers: dict[str, str] = {}
    last: str | None = None
    pos = 0
    n = len(raw)
    while pos < n:
        end = raw.find(b"\n", pos)
        if end == -1:
            raise ParseError("header block is not terminated by a blank line", n)
        line = raw[pos:end].rstrip(b"\r")
        if not line:
            return headers, end + 1
        if line[:1] in (b" ", b"\t"):
            if last is None:
                raise ParseError("continuation line before any header field", pos)
            headers[last] += " " + _decode(line).strip()
        else:
            m = _FIELD_RE.match(line)
            if not m:
                raise ParseError("malformed header line", pos)
            last = _decode(m.group(1)).lower()
            value = _decode(m.group(2)).strip()
            # Keep the first occurrence, except that repeated To/Cc accumulate.
            if last in headers and last in ("to", "cc", "bcc"):
                headers[last] += ", " + value
            else:
                headers.setdefault(last, value)
        pos = end + 1
    raise ParseError("header block is not terminated by a blank line", n)


def _parse_date(value: str | None) -> tuple[datetime, bool]:
    if not value:
        return EPOCH, True
    try:
        dt = parsedate_to_datetime(value)
    except (TypeError, ValueError, IndexError):
        try:
            dt = datetime.fromisoformat(value)
        except ValueError:
            return EPOCH, True
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc), False


def _address(value: str) -> str:
    addr = parseaddr(value)[1] or value.strip()
    return addr.lower()


def _addresses(*values: str | None) -> list[str]:
    return [a.lower() for _, a in getaddresses([v for v in values if v]) if a]


_TRUE = {"1", "true", "yes", "public"}


def parse_email(raw: bytes, id: str) -> Email:
    """Parse an RFC-822 style header block plus plain-text body.

    Raises :class:`ParseError` when the header block is malformed or never
    ends in a blank line.
    """
    headers, body_start = _parse_headers(raw)
    date, missing = _parse_date(headers.get("date"))
    raw_subject = headers.get("subject", "")
    return Email(
        id=id,
        sender=_address(headers.get("from", "")),
        recipients=_addresses(headers.get("to"), headers.get("cc")),
        date=date,
        raw_subject=raw_subject,
        subject=normalize_subject(raw_subject),
        documents=segment_body(_decode(raw[body_start:])),
        date_missing=missing,
        public=headers.get("x-public", "").strip().lower() in _TRUE,
    )


def _record_date(value) -> tuple[datetime, bool]:
    if value is None or value == "":
        return EPOCH, True
    if isinstance(value, (int, float)):
        return datetime.fromtimestamp(value, tz=timezone.utc), False
    return _parse_date(str(value))


def email_from_record(rec: dict) -> Email:
    """Build an email from one line of the JSONL ingestion format.

    Fields: ``id``, ``from``, ``to`` (string or list), ``date`` (RFC 2822,
    ISO 8601 or epoch seconds), ``subject``, ``body`` and optional ``public``.
    """
    try:
        email_id = str(rec["id"])
    except KeyError:
        raise ValueError("record has no id") from None
    to = rec.get("to") or []
    if isinstance(to, str):
        to = [to]
    date, missing = _record_date(rec.get("date"))
    raw_subject = rec.get("subject") or ""
    return Email(
        id=email_id,
        sender=_address(rec.get("from") or ""),
        recipients=_addresses(*to),
        date=date,
        raw_subject=raw_subject,
        subject=normalize_subject(raw_subject),
        documents=segment_body(rec.get("body") or ""),
        date_missing=missing,
        public=bool(rec.get("public", False)),
    )


@dataclass
class IngestProblem:
    source: str
    reason: str


def iter_directory(root: str | Path, problems: list[IngestProblem] | None = None) -> Iterator[Email]:
    """Yield one email per regular file under ``root`` (maildir layout).

    Ids are the file paths relative to ``root``.  Files that fail to parse
    are logged, appended to ``problems`` and skipped.
    """
    root = Path(root)
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root).as_posix()
        try:
            yield parse_email(path.read_bytes(), rel)
        except (OSError, ParseError) as exc:
            log.warning("skipping %s: %s", rel, exc)
            if problems is not None:
                problems.append(IngestProblem(rel, str(exc)))


def iter_jsonl(path: str | Path, problems: list[IngestProblem] | None = None) -> Iterator[Email]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield email_from_record(json.loads(line))
            except (ValueError, TypeError, AttributeError) as exc:
                where = f"{path}:{lineno}"
                log.warning("skipping %s: %s", where, exc)
                if problems is not None:
                    problems.append(IngestProblem(where, str(exc)))


def iter_source(source: str | Path, problems: list[IngestProblem] | None = None) -> Iterable[Email]:
    source = Path(source)
    if source.is_dir():
        return iter_directory(source, problems)
    if source.is_file():
        return iter_jsonl(source, problems)
    raise FileNotFoundError(f"no such mailbox source: {source}")
