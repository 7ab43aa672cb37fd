"""Version and reads-from inference for dependency-based checkers.

Register/kv reads are matched to the unique update transaction that wrote the
returned value; counter reads are matched to the unique subset of update
transactions whose deltas sum to the returned value.  Reads that follow an
update of the same key inside their own transaction observe the transaction's
own effect first; only the residue is matched externally.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .history import (
    History,
    ItemKind,
    OpKind,
    Relation,
    RelationKind,
    Transaction,
    Value,
    transitive_closure,
)

_SUBSET_LIMIT = 24  # counter keys with more updates than this are not resolvable


class InferenceError(Exception):
    pass


class AmbiguousVersion(InferenceError):
    def __init__(self, key: str, value: Value, txn: int, detail: str = ""):
        self.key, self.value, self.txn = key, value, txn
        msg = f"read of {key!r} in txn {txn} matches more than one version"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class DanglingRead(InferenceError):
    """A read returned a value no update produced (thin-air / dirty value)."""

    def __init__(self, key: str, value: Value, txn: int):
        self.key, self.value, self.txn = key, value, txn
        super().__init__(f"txn {txn} read {value!r} from {key!r}, written by no transaction")


@dataclass(frozen=True)
class Version:
    """State of one item as produced by one update transaction.

    For counters the value is the transaction's net delta on the key.  The
    initial version is represented with writer None and value None.
    """

    key: str
    writer: Optional[int]
    value: Value


@dataclass(frozen=True)
class ReadObs:
    """External observation of one completed read operation.

    writers is the set of update transactions observed: empty for a read of
    the initial state, a singleton for register/kv reads, and the matched
    update subset for counter reads.
    """

    txn: int
    op_index: int
    key: str
    kind: ItemKind
    value: Value
    writers: frozenset[int]
    res_seq: int
    inv_seq: int
    masked: bool = False  # register/kv read satisfied by the txn's own write

    @property
    def writer(self) -> Optional[int]:
        if len(self.writers) == 1:
            return next(iter(self.writers))
        return None


@dataclass(frozen=True)
class VersionInfo:
    versions: dict[str, tuple[Version, ...]]  # update versions per key, by txn id
    reads: tuple[ReadObs, ...]
    reads_from: Relation

    def version_of(self, key: str, writer: int) -> Version:
        for v in self.versions.get(key, ()):
            if v.writer == writer:
                return v
        raise KeyError((key, writer))

    def updates_of(self, key: str) -> tuple[int, ...]:
        return tuple(v.writer for v in self.versions.get(key, ()))

    def reads_of(self, txn: int) -> tuple[ReadObs, ...]:
        return tuple(r for r in self.reads if r.txn == txn and not r.masked)

    def external_reads(self) -> tuple[ReadObs, ...]:
        return tuple(r for r in self.reads if not r.masked)


def txn_versions(h: History, t: Transaction) -> dict[str, Version]:
    """The versions transaction t produces, one per updated key."""
    out: dict[str, Version] = {}
    for txo in t.ops:
        op = txo.op
        if not op.kind.is_update:
            continue
        kind = h.item_kind(op.key)
        if kind is ItemKind.COUNTER:
            prev = out.get(op.key)
            base = prev.value if prev is not None else 0
            out[op.key] = Version(op.key, t.id, base + op.delta)
        else:
            out[op.key] = Version(op.key, t.id, op.arg)
    return out


def _match_counter(
    target: int, candidates: list[Version]
) -> Optional[list[frozenset[int]]]:
    """Subsets of candidates whose deltas sum to target (at most two returned)."""
    if len(candidates) > _SUBSET_LIMIT:
        return None
    deltas = [(v.writer, v.value) for v in candidates]
    pos_tail = [0] * (len(deltas) + 1)
    neg_tail = [0] * (len(deltas) + 1)
    for i in range(len(deltas) - 1, -1, -1):
        d = deltas[i][1]
        pos_tail[i] = pos_tail[i + 1] + (d if d > 0 else 0)
        neg_tail[i] = neg_tail[i + 1] + (d if d < 0 else 0)
    found: list[frozenset[int]] = []

    def go(i: int, acc: int, chosen: tuple[int, ...]) -> bool:
        if acc + pos_tail[i] < target or acc + neg_tail[i] > target:
            return False
        if i == len(deltas):
            if acc == target:
                found.append(frozenset(chosen))
                return len(found) >= 2
            return False
        if go(i + 1, acc, chosen):
            return True
        writer, d = deltas[i]
        return go(i + 1, acc + d, chosen + (writer,))

    go(0, 0, ())
    return found


def infer_versions(h: History) -> VersionInfo:
    """Derive versions, per-read observations and the reads-from relation.

    Raises AmbiguousVersion when a read value matches several versions, and
    DanglingRead when it matches none.  Deterministic: equal histories yield
    equal edge sets.
    """
    per_key: dict[str, list[Version]] = {}
    by_txn: dict[int, dict[str, Version]] = {}
    for t in h.txns:
        vs = txn_versions(h, t)
        by_txn[t.id] = vs
        for key, v in vs.items():
            per_key.setdefault(key, []).append(v)
    for vs in per_key.values():
        vs.sort(key=lambda v: v.writer)

    reads: list[ReadObs] = []
    edges: set[tuple[int, int]] = set()
    for t in h.txns:
        own_register: dict[str, Value] = {}
        own_delta: dict[str, int] = {}
        for idx, txo in enumerate(t.ops):
            op = txo.op
            kind = h.item_kind(op.key)
            if op.kind.is_update:
                if kind is ItemKind.COUNTER:
                    own_delta[op.key] = own_delta.get(op.key, 0) + op.delta
                else:
                    own_register[op.key] = op.arg
                continue
            if not op.kind.is_read:
                continue
            if kind is ItemKind.COUNTER:
                if not isinstance(op.ret, int):
                    raise DanglingRead(op.key, op.ret, t.id)
                target = op.ret - own_delta.get(op.key, 0)
                others = [v for v in per_key.get(op.key, []) if v.writer != t.id]
                matches = _match_counter(target, others)
                if matches is None:
                    raise AmbiguousVersion(op.key, op.ret, t.id, "too many counter updates")
                if len(matches) == 0:
                    raise DanglingRead(op.key, op.ret, t.id)
                if len(matches) > 1:
                    raise AmbiguousVersion(
                        op.key, op.ret, t.id, f"{len(matches)}+ update subsets sum to it"
                    )
                writers = matches[0]
                reads.append(
                    ReadObs(t.id, idx, op.key, kind, op.ret, writers, txo.res_seq, txo.inv_seq)
                )
                for w in writers:
                    edges.add((w, t.id))
            else:
                if op.key in own_register:
                    if op.ret != own_register[op.key]:
                        raise DanglingRead(op.key, op.ret, t.id)
                    reads.append(
                        ReadObs(
                            t.id, idx, op.key, kind, op.ret, frozenset(),
                            txo.res_seq, txo.inv_seq, masked=True,
                        )
                    )
                    continue
                if op.ret is None:
                    reads.append(
                        ReadObs(t.id, idx, op.key, kind, None, frozenset(), txo.res_seq, txo.inv_seq)
                    )
                    continue
                matches = [
                    v for v in per_key.get(op.key, [])
                    if v.value == op.ret and v.writer != t.id
                ]
                if len(matches) > 1:
                    raise AmbiguousVersion(
                        op.key, op.ret, t.id, f"written by txns {[v.writer for v in matches]}"
                    )
                if not matches:
                    raise DanglingRead(op.key, op.ret, t.id)
                w = matches[0].writer
                reads.append(
                    ReadObs(t.id, idx, op.key, kind, op.ret, frozenset({w}), txo.res_seq, txo.inv_seq)
                )
                edges.add((w, t.id))

    versions = {k: tuple(vs) for k, vs in per_key.items()}
    return VersionInfo(versions, tuple(reads), Relation(RelationKind.READS_FROM, frozenset(edges)))


def wr_closure(info: VersionInfo) -> frozenset[tuple[int, int]]:
    """depends-on: transitive closure of reads-from, as (dependency, dependent)."""
    return transitive_closure(info.reads_from.edges)


def depends_on(info: VersionInfo, txn: int) -> frozenset[int]:
    closed = wr_closure(info)
    return frozenset(a for (a, b) in closed if b == txn)
