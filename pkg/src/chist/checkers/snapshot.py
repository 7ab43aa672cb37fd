"""Snapshot-isolation family: SI, SSI and PSI.

Acceptance means: there is a total commit order O and, per transaction, a
snapshot point (a prefix of O taken before the transaction commits, always
containing the transaction's own session predecessors) from which all of its
reads replay, and no two transactions that are concurrent in real time update
a common item.  SSI additionally forces the prefix to contain every
real-time predecessor; PSI restricts it to transactions that finished before
the reader's first invocation.

The search interleaves per-transaction snapshot and commit events over the
growing commit order, memoised on (committed, snapshotted, state).
"""

from __future__ import annotations

from typing import Optional

from ..history import History, ItemKind, derive_realtime
from ..versions import AmbiguousVersion, DanglingRead, VersionInfo, infer_versions
from .base import (
    Anomaly,
    AnomalyKind,
    CheckBudget,
    DEFAULT_BUDGET,
    ModelId,
    SnapshotCertificate,
    Verdict,
    accepted,
    inconclusive,
    realtime_predecessors,
    rejected,
    session_predecessors,
)
from .dependency import write_conflict
from .replay import ReplayState, txn_reads_ok


class _Exhausted(Exception):
    pass


def _started_before(h: History) -> dict[int, frozenset[int]]:
    out = {}
    for t in h.txns:
        out[t.id] = frozenset(o.id for o in h.txns if o.id != t.id and o.last_res < t.first_inv)
    return out


def _search(h: History, budget: CheckBudget, model: ModelId) -> Verdict:
    ids = sorted(t.id for t in h.txns)
    if not ids:
        return accepted(model, SnapshotCertificate((), {}))
    if len(ids) > budget.max_txns:
        return inconclusive(model, f"more than {budget.max_txns} transactions")

    conflict = write_conflict(h)
    if conflict is not None:
        return rejected(model, conflict)

    sess_preds = {t: frozenset(v) for t, v in session_predecessors(h).items()}
    rt_preds = realtime_predecessors(h) if model is ModelId.SSI else {}
    started = _started_before(h) if model is ModelId.PSI else {}

    explored = 0
    visited: set[tuple[frozenset[int], frozenset[int], tuple]] = set()
    cuts: dict[int, int] = {}

    def eligible(tid: int, committed: frozenset[int]) -> bool:
        if not sess_preds[tid] <= committed:
            return False
        if model is ModelId.SSI and not rt_preds[tid] <= committed:
            return False
        if model is ModelId.PSI and not committed <= started[tid]:
            return False
        return True

    def go(
        order: list[int],
        committed: set[int],
        snapped: set[int],
        state: ReplayState,
    ) -> Optional[list[int]]:
        nonlocal explored
        if len(order) == len(ids):
            return list(order)
        key = (frozenset(committed), frozenset(snapped), state.digest())
        if key in visited:
            return None
        visited.add(key)
        # commit moves first so the serial schedule is found greedily
        for tid in ids:
            if tid not in snapped or tid in committed:
                continue
            explored += 1
            if explored > budget.max_states:
                raise _Exhausted
            branch = state.copy()
            for txo in h.txn(tid).ops:
                if txo.op.kind.is_update:
                    branch.apply_update(txo.op, tid)
            order.append(tid)
            committed.add(tid)
            got = go(order, committed, snapped, branch)
            if got is not None:
                return got
            order.pop()
            committed.remove(tid)
        frozen = frozenset(committed)
        for tid in ids:
            if tid in snapped or not eligible(tid, frozen):
                continue
            explored += 1
            if explored > budget.max_states:
                raise _Exhausted
            if not txn_reads_ok(state, h.txn(tid)):
                continue
            snapped.add(tid)
            cuts[tid] = len(order)
            got = go(order, committed, snapped, state)
            if got is not None:
                return got
            snapped.remove(tid)
            del cuts[tid]
        return None

    try:
        found = go([], set(), set(), ReplayState(h))
    except _Exhausted:
        return inconclusive(model, "state budget exhausted", explored)
    if found is not None:
        return accepted(model, SnapshotCertificate(tuple(found), dict(cuts)), explored)
    return rejected(model, _classify(h, model), explored)


def _classify(h: History, model: ModelId) -> Anomaly:
    info: Optional[VersionInfo] = None
    try:
        info = infer_versions(h)
    except DanglingRead as exc:
        return Anomaly(AnomalyKind.DIRTY_VALUE, (exc.txn,), str(exc), keys=(exc.key,))
    except AmbiguousVersion:
        info = None
    if info is not None:
        if model is ModelId.PSI:
            for obs in sorted(info.external_reads(), key=lambda o: (o.txn, o.op_index)):
                reader = h.txn(obs.txn)
                for w in sorted(obs.writers):
                    if h.txn(w).last_res >= reader.first_inv:
                        return Anomaly(
                            AnomalyKind.STALE_SNAPSHOT,
                            (w, obs.txn),
                            f"txn {obs.txn} reads {obs.key!r} from txn {w}, which was "
                            f"not finished when txn {obs.txn} started; a start-time "
                            f"snapshot cannot contain it",
                            keys=(obs.key,),
                        )
        if model is ModelId.SSI:
            rt = derive_realtime(h).edges
            for obs in sorted(info.external_reads(), key=lambda o: (o.txn, o.op_index)):
                for w in info.updates_of(obs.key):
                    if w == obs.txn or w in obs.writers or (w, obs.txn) not in rt:
                        continue
                    seen = obs.writer
                    if not obs.writers or (seen is not None and (seen, w) in rt):
                        return Anomaly(
                            AnomalyKind.STALE_SNAPSHOT,
                            (w, obs.txn),
                            f"txn {obs.txn}'s snapshot misses txn {w}'s update of "
                            f"{obs.key!r} although txn {w} precedes it in real time",
                            keys=(obs.key,),
                        )
        # all-or-nothing shape: an observed writer is missed on another key
        for t in h.txns:
            reads = sorted(info.reads_of(t.id), key=lambda o: o.op_index)
            seen_writers: set[int] = set()
            for obs in reads:
                seen_writers.update(w for w in obs.writers if w != t.id)
            for w in sorted(seen_writers):
                w_keys = set(h.txn(w).update_keys())
                for obs in reads:
                    if obs.key in w_keys and w not in obs.writers and (
                        obs.kind is ItemKind.COUNTER or not obs.writers
                    ):
                        src = next(o.key for o in reads if w in o.writers)
                        return Anomaly(
                            AnomalyKind.SNAPSHOT_VIOLATION,
                            (w, t.id),
                            f"no snapshot can contain txn {w}'s update of {src!r} "
                            f"while missing its update of {obs.key!r}, both read by "
                            f"txn {t.id}",
                            keys=(src, obs.key),
                        )
    return Anomaly(
        AnomalyKind.SNAPSHOT_VIOLATION,
        tuple(sorted(t.id for t in h.txns)),
        "no commit order admits consistent snapshot points for every transaction",
    )


def check_si(h: History, budget: CheckBudget = DEFAULT_BUDGET) -> Verdict:
    """Snapshot isolation: reads from a commit-order prefix, disjoint
    concurrent write sets."""
    return _search(h, budget, ModelId.SI)


def check_ssi(h: History, budget: CheckBudget = DEFAULT_BUDGET) -> Verdict:
    """Strong SI: the snapshot must contain all real-time predecessors."""
    return _search(h, budget, ModelId.SSI)


def check_psi(h: History, budget: CheckBudget = DEFAULT_BUDGET) -> Verdict:
    """Parallel SI: the snapshot is taken at transaction start."""
    return _search(h, budget, ModelId.PSI)
