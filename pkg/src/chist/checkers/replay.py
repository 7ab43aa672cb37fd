"""Sequential replay semantics shared by the permutation and snapshot checkers.

A state maps each key to its current content: last written (value, writer) for
register/kv items, running delta total for counters.  Reads inside a replayed
transaction see the transaction's own earlier effects.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..history import History, ItemKind, OpKind, Transaction, Value


@dataclass(frozen=True)
class ReplayFailure:
    txn: int
    op_index: int
    key: str
    expected: Value  # value the state dictates
    got: Value  # value the history recorded


class ReplayState:
    """Mutable per-key state under sequential semantics."""

    __slots__ = ("h", "cells", "counts")

    def __init__(self, h: History):
        self.h = h
        self.cells: dict[str, tuple[Value, Optional[int]]] = {}
        self.counts: dict[str, int] = {}

    def copy(self) -> "ReplayState":
        s = ReplayState.__new__(ReplayState)
        s.h = self.h
        s.cells = dict(self.cells)
        s.counts = dict(self.counts)
        return s

    def read_value(self, key: str) -> Value:
        if self.h.item_kind(key) is ItemKind.COUNTER:
            return self.counts.get(key, 0)
        cell = self.cells.get(key)
        return cell[0] if cell else None

    def last_writer(self, key: str) -> Optional[int]:
        cell = self.cells.get(key)
        return cell[1] if cell else None

    def apply_update(self, op, writer: int) -> None:
        if op.kind in (OpKind.INC, OpKind.DEC):
            self.counts[op.key] = self.counts.get(op.key, 0) + op.delta
        else:
            self.cells[op.key] = (op.arg, writer)

    def digest(self) -> tuple:
        cells = tuple(sorted((k, v[0], v[1]) for k, v in self.cells.items()))
        counts = tuple(sorted(self.counts.items()))
        return (cells, counts)


def apply_txn(state: ReplayState, t: Transaction) -> Optional[ReplayFailure]:
    """Run one transaction against state, checking every read; mutates state."""
    for idx, txo in enumerate(t.ops):
        op = txo.op
        if op.kind.is_read:
            expected = state.read_value(op.key)
            if expected != op.ret:
                return ReplayFailure(t.id, idx, op.key, expected, op.ret)
        else:
            state.apply_update(op, t.id)
    return None


def replay_serial(h: History, order: tuple[int, ...]) -> Optional[ReplayFailure]:
    """Replay the transactions of h in the given total order; None if legal."""
    state = ReplayState(h)
    for tid in order:
        failure = apply_txn(state, h.txn(tid))
        if failure is not None:
            return failure
    return None


def txn_reads_ok(state: ReplayState, t: Transaction) -> bool:
    """Check t's reads against a frozen snapshot state without leaking writes."""
    scratch = state.copy()
    return apply_txn(scratch, t) is None
