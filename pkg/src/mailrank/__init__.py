"""Email search that ranks by thread subject, quoted-content and sender expertise."""

from .config import Config
from .corpus import Email, EmailDocument, Mailbox, ParseError, normalize_subject, parse_email, segment_body
from .engine import Engine
from .query import QueryError, edit_distance, expand_term, porter_stem
from .ranking import ScoredEmail, search

__version__ = "0.1.0"

__all__ = [
    "Config",
    "Email",
    "EmailDocument",
    "Engine",
    "Mailbox",
    "ParseError",
    "QueryError",
    "ScoredEmail",
    "edit_distance",
    "expand_term",
    "normalize_subject",
    "parse_email",
    "porter_stem",
    "search",
    "segment_body",
]
