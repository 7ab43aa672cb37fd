"""chist: consistency-model checking and replicated-store simulation for
transactional histories."""

from .history import (
    History,
    HistoryError,
    ItemKind,
    MalformedEvent,
    UnmatchedInvocation,
    InterleavedSession,
    DuplicateSeq,
    parse_history,
    serialize_history,
    derive_realtime,
    derive_session,
)
from .versions import AmbiguousVersion, DanglingRead, infer_versions
from .checkers import CheckBudget, ModelId, Outcome, Verdict, check, validate_verdict

__version__ = "0.1.0"

__all__ = [
    "History",
    "HistoryError",
    "ItemKind",
    "MalformedEvent",
    "UnmatchedInvocation",
    "InterleavedSession",
    "DuplicateSeq",
    "parse_history",
    "serialize_history",
    "derive_realtime",
    "derive_session",
    "AmbiguousVersion",
    "DanglingRead",
    "infer_versions",
    "CheckBudget",
    "ModelId",
    "Outcome",
    "Verdict",
    "check",
    "validate_verdict",
    "__version__",
]
