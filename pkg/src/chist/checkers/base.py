"""Verdicts, anomaly witnesses, budgets and certificate validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from ..history import History, derive_realtime, derive_session


class ModelId(Enum):
    RC_strict = "RC_strict"
    RC_loose = "RC_loose"
    RA = "RA"
    MR = "MR"
    MW = "MW"
    RMW = "RMW"
    WFR = "WFR"
    CM = "CM"
    CS = "CS"
    CC = "CC"
    SI = "SI"
    SSI = "SSI"
    PSI = "PSI"
    NMSI = "NMSI"
    SER = "SER"
    SSER = "SSER"
    LIN = "LIN"
    SC = "SC"
    EC_quiescent = "EC_quiescent"

    @classmethod
    def parse(cls, token: str) -> "ModelId":
        lowered = token.strip().lower().replace("-", "_")
        for m in cls:
            if m.value.lower() == lowered:
                return m
        raise UnknownModel(token)


class UnknownModel(Exception):
    def __init__(self, token: str):
        self.token = token
        super().__init__(f"unknown model {token!r}")


class NotSingleOp(Exception):
    """LIN/SC require every transaction to contain exactly one operation."""


class AnomalyKind(Enum):
    DIVERGENCE = "Divergence"
    CAUSALITY_VIOLATION = "CausalityViolation"
    DIRTY_VALUE = "DirtyValue"
    LOST_UPDATE = "LostUpdate"
    FRACTURED_READ = "FracturedRead"
    SNAPSHOT_VIOLATION = "SnapshotViolation"
    WRITE_CONFLICT = "WriteConflict"
    WRITE_SKEW = "WriteSkew"
    SESSION_BREACH = "SessionBreach"
    STALE_SNAPSHOT = "StaleSnapshot"
    NON_MONOTONIC_READ = "NonMonotonicRead"


@dataclass(frozen=True)
class Anomaly:
    kind: AnomalyKind
    participants: tuple[int, ...]
    narrative: str
    keys: tuple[str, ...] = ()
    guarantee: Optional[str] = None  # SessionBreach only

    @property
    def label(self) -> str:
        if self.kind is AnomalyKind.SESSION_BREACH and self.guarantee:
            return f"SessionBreach({self.guarantee})"
        return self.kind.value


@dataclass(frozen=True)
class CheckBudget:
    max_txns: int = 12
    max_states: int = 1_000_000

    def __post_init__(self):
        if self.max_txns <= 0 or self.max_states <= 0:
            raise ValueError("budget fields must be positive")


DEFAULT_BUDGET = CheckBudget()


class Outcome(Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class Verdict:
    model: ModelId
    outcome: Outcome
    certificate: Optional[object] = None
    anomaly: Optional[Anomaly] = None
    explored: int = 0
    elapsed: float = 0.0
    reason: Optional[str] = None  # inconclusive detail

    @property
    def accepted(self) -> bool:
        return self.outcome is Outcome.ACCEPTED

    @property
    def rejected(self) -> bool:
        return self.outcome is Outcome.REJECTED

    def line(self) -> str:
        """External verdict line: <model> <outcome> [<anomaly-kind> txns=<ids>]."""
        parts = [self.model.value, self.outcome.value]
        if self.anomaly is not None:
            ids = ",".join(str(i) for i in self.anomaly.participants)
            parts.append(self.anomaly.label)
            parts.append(f"txns={ids}")
        elif self.outcome is Outcome.INCONCLUSIVE and self.reason:
            parts.append(self.reason)
        return " ".join(parts)


def accepted(model: ModelId, certificate: object, explored: int = 0) -> Verdict:
    return Verdict(model, Outcome.ACCEPTED, certificate=certificate, explored=explored)


def rejected(model: ModelId, anomaly: Anomaly, explored: int = 0) -> Verdict:
    return Verdict(model, Outcome.REJECTED, anomaly=anomaly, explored=explored)


def inconclusive(model: ModelId, reason: str, explored: int = 0) -> Verdict:
    return Verdict(model, Outcome.INCONCLUSIVE, reason=reason, explored=explored)


@dataclass(frozen=True)
class SerialCertificate:
    """A total order of transaction ids whose replay is legal."""

    order: tuple[int, ...]


@dataclass(frozen=True)
class SnapshotCertificate:
    """Commit order plus, per transaction, its snapshot point.

    cuts[t] is a prefix length of order: transaction t read from the state
    produced by the first cuts[t] commits.
    """

    order: tuple[int, ...]
    cuts: dict[int, int] = field(compare=False)


@dataclass(frozen=True)
class VersionOrderCertificate:
    """Per-key total orders over update transactions satisfying the model."""

    orders: dict[str, tuple[int, ...]] = field(compare=False)


@dataclass(frozen=True)
class ReadsFromCertificate:
    """Reads matched to committed writers (read-committed family)."""

    edges: frozenset[tuple[int, int]]


@dataclass(frozen=True)
class QuiescentCertificate:
    """Common value observed per key by post-quiescence reads."""

    finals: dict[str, object] = field(compare=False)


def single_op_or_raise(h: History) -> None:
    if not h.single_op():
        offending = [t.id for t in h.txns if len(t.ops) != 1]
        raise NotSingleOp(f"transactions {offending} contain more than one operation")


def rt_concurrent_pairs(h: History) -> list[tuple[int, int]]:
    rt = derive_realtime(h).edges
    ids = [t.id for t in h.txns]
    out = []
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            if (a, b) not in rt and (b, a) not in rt:
                out.append((a, b))
    return out


def session_predecessors(h: History) -> dict[int, tuple[int, ...]]:
    out: dict[int, tuple[int, ...]] = {t.id: () for t in h.txns}
    for txns in h.sessions().values():
        for i, t in enumerate(txns):
            out[t.id] = tuple(x.id for x in txns[:i])
    return out


def realtime_predecessors(h: History) -> dict[int, frozenset[int]]:
    rt = derive_realtime(h).edges
    out: dict[int, set[int]] = {t.id: set() for t in h.txns}
    for (a, b) in rt:
        out[b].add(a)
    return {k: frozenset(v) for k, v in out.items()}


__all__ = [
    "ModelId",
    "UnknownModel",
    "NotSingleOp",
    "AnomalyKind",
    "Anomaly",
    "CheckBudget",
    "DEFAULT_BUDGET",
    "Outcome",
    "Verdict",
    "SerialCertificate",
    "SnapshotCertificate",
    "VersionOrderCertificate",
    "ReadsFromCertificate",
    "QuiescentCertificate",
    "accepted",
    "rejected",
    "inconclusive",
    "single_op_or_raise",
    "rt_concurrent_pairs",
    "session_predecessors",
    "realtime_predecessors",
    "derive_session",
]
