from __future__ import annotations

import sys
import threading
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mailrank.config import Config  # noqa: E402
from mailrank.corpus import Email, EmailDocument, email_from_record, normalize_subject  # noqa: E402
from mailrank.engine import Engine  # noqa: E402
from mailrank.expertise import ExpertiseServer, ServerState  # noqa: E402

DATA = Path(__file__).parent / "data"
T0 = datetime(2001, 5, 1, tzinfo=timezone.utc)


def chain_email(eid: str, subject: str, texts: list[str], sender: str = "a@example.com",
                minutes: int = 0, recipients=("owner@example.com",), public: bool = False) -> Email:
    """Email whose documents are ``texts`` given oldest first."""
    docs = [EmailDocument(t, level) for level, t in enumerate(reversed(texts))]
    return Email(id=eid, sender=sender, recipients=list(recipients), date=T0 + timedelta(minutes=minutes),
                 raw_subject=subject, subject=normalize_subject(subject), documents=docs, public=public)


def record(eid, sender, subject, body, minutes=0, to="owner@example.com", public=False) -> Email:
    return email_from_record({"id": eid, "from": sender, "to": to, "subject": subject, "body": body,
                              "date": (T0 + timedelta(minutes=minutes)).isoformat(), "public": public})


def build_engine(emails, owner: str = "owner@example.com", config: Config | None = None) -> Engine:
    engine = Engine(config or Config(), owner=owner)
    engine.add_all(emails)
    return engine


@pytest.fixture
def expertise_server():
    """In-process expertise server on a free port; yields (server, "host:port")."""
    servers = []

    def start(state: ServerState | None = None):
        server = ExpertiseServer(("127.0.0.1", 0), state or ServerState())
        threading.Thread(target=server.serve_forever, daemon=True).start()
        servers.append(server)
        host, port = server.server_address
        return server, f"{host}:{port}"

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()
        server.state.close()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
