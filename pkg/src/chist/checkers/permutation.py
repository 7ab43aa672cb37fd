"""Equivalence-to-a-legal-sequential-history checkers: SER, SSER, LIN, SC.

The decision procedure is a backtracking topological search over candidate
commit orders, pruned by forced precedence edges (real-time or session order
as the model requires, plus data-flow edges recovered from version inference
when the history's values are unambiguous) and memoised on (placed set,
state) pairs.  oracle_ser is the naive permutation enumeration used as ground
truth in tests.
"""

from __future__ import annotations

import itertools
from typing import Iterable, Optional

from ..history import History, ItemKind, derive_realtime, derive_session
from ..versions import AmbiguousVersion, DanglingRead, InferenceError, VersionInfo, infer_versions
from .base import (
    Anomaly,
    AnomalyKind,
    CheckBudget,
    DEFAULT_BUDGET,
    ModelId,
    SerialCertificate,
    Verdict,
    accepted,
    inconclusive,
    rejected,
    rt_concurrent_pairs,
    single_op_or_raise,
)
from .replay import ReplayState, apply_txn


class TooLarge(Exception):
    """oracle_ser is restricted to histories of at most 8 transactions."""


class _Exhausted(Exception):
    pass


def _dataflow_edges(h: History, info: VersionInfo) -> set[tuple[int, int]]:
    """Precedences any legal serial order must satisfy, from read observations."""
    edges: set[tuple[int, int]] = set()
    for obs in info.external_reads():
        updates = info.updates_of(obs.key)
        if obs.kind is ItemKind.COUNTER:
            # the matched subset is exactly the set of prior update txns
            for u in updates:
                if u == obs.txn:
                    continue
                if u in obs.writers:
                    edges.add((u, obs.txn))
                else:
                    edges.add((obs.txn, u))
        elif not obs.writers:
            # read of the initial state: every other update comes later
            for u in updates:
                if u != obs.txn:
                    edges.add((obs.txn, u))
        else:
            edges.add((next(iter(obs.writers)), obs.txn))
    return edges


def _find_cycle(ids: list[int], edges: set[tuple[int, int]]) -> Optional[list[int]]:
    succ: dict[int, list[int]] = {i: [] for i in ids}
    for a, b in edges:
        if a in succ and b in succ:
            succ[a].append(b)
    color: dict[int, int] = {i: 0 for i in ids}
    stack: list[int] = []

    def visit(node: int) -> Optional[list[int]]:
        color[node] = 1
        stack.append(node)
        for nxt in succ[node]:
            if color[nxt] == 1:
                return stack[stack.index(nxt) :]
            if color[nxt] == 0:
                got = visit(nxt)
                if got is not None:
                    return got
        stack.pop()
        color[node] = 2
        return None

    for i in ids:
        if color[i] == 0:
            got = visit(i)
            if got is not None:
                return got
    return None


def _search_serial(
    h: History,
    budget: CheckBudget,
    required: set[tuple[int, int]],
) -> tuple[Optional[tuple[int, ...]], int, bool]:
    """Find a legal total order containing `required`.

    Returns (order or None, explored states, exhausted flag).
    Transactions are explored in ascending id order, so the first certificate
    found is deterministic.
    """
    ids = sorted(t.id for t in h.txns)
    preds: dict[int, set[int]] = {i: set() for i in ids}
    for a, b in required:
        preds[b].add(a)

    explored = 0
    visited: set[tuple[frozenset[int], tuple]] = set()

    def go(placed: list[int], placed_set: set[int], state: ReplayState) -> Optional[list[int]]:
        nonlocal explored
        if len(placed) == len(ids):
            return list(placed)
        key = (frozenset(placed_set), state.digest())
        if key in visited:
            return None
        visited.add(key)
        for tid in ids:
            if tid in placed_set or not preds[tid] <= placed_set:
                continue
            explored += 1
            if explored > budget.max_states:
                raise _Exhausted
            branch = state.copy()
            if apply_txn(branch, h.txn(tid)) is not None:
                continue
            placed.append(tid)
            placed_set.add(tid)
            got = go(placed, placed_set, branch)
            if got is not None:
                return got
            placed.pop()
            placed_set.remove(tid)
        return None

    try:
        got = go([], set(), ReplayState(h))
    except _Exhausted:
        return None, explored, True
    return (tuple(got) if got is not None else None), explored, False


def _session_stale_pattern(h: History, info: VersionInfo, order_edges: frozenset
                           ) -> Optional[Anomaly]:
    """A read missing an update that the given order places before the reader."""
    rt = derive_realtime(h).edges
    for obs in sorted(info.external_reads(), key=lambda o: (o.txn, o.op_index)):
        for w in info.updates_of(obs.key):
            if w == obs.txn or w in obs.writers:
                continue
            if (w, obs.txn) not in order_edges:
                continue
            if not obs.writers:
                return Anomaly(
                    AnomalyKind.STALE_SNAPSHOT,
                    (w, obs.txn),
                    f"txn {obs.txn} read the initial state of {obs.key!r} although "
                    f"txn {w} updated it before the read",
                    keys=(obs.key,),
                )
            seen = obs.writer
            if seen is not None and (seen, w) in rt:
                return Anomaly(
                    AnomalyKind.STALE_SNAPSHOT,
                    (w, obs.txn),
                    f"txn {obs.txn} read {obs.key!r} from txn {seen}, missing the "
                    f"later update by txn {w} that precedes the read",
                    keys=(obs.key,),
                )
    return None


def _nonmonotonic_pattern(h: History, info: VersionInfo) -> Optional[Anomaly]:
    rt = derive_realtime(h).edges
    for txns in h.sessions().values():
        seen: dict[str, object] = {}
        for t in txns:
            for obs in sorted(info.reads_of(t.id), key=lambda o: o.op_index):
                prev = seen.get(obs.key)
                if prev is not None:
                    if obs.kind is ItemKind.COUNTER:
                        if not prev.writers <= obs.writers:
                            return Anomaly(
                                AnomalyKind.NON_MONOTONIC_READ,
                                (prev.txn, obs.txn),
                                f"session {t.proc!r} observed fewer updates of "
                                f"{obs.key!r} on a later read",
                                keys=(obs.key,),
                            )
                    else:
                        a, b = prev.writer, obs.writer
                        if a is not None and a != b and (b is None or (b, a) in rt):
                            return Anomaly(
                                AnomalyKind.NON_MONOTONIC_READ,
                                (prev.txn, obs.txn),
                                f"session {t.proc!r} read {obs.key!r} backwards in time",
                                keys=(obs.key,),
                            )
                seen[obs.key] = obs
    return None


def _write_skew_pattern(h: History) -> Optional[Anomaly]:
    for a, b in rt_concurrent_pairs(h):
        ta, tb = h.txn(a), h.txn(b)
        common = set(ta.read_keys()) & set(tb.read_keys())
        wa, wb = set(ta.update_keys()), set(tb.update_keys())
        if common and wa and wb and not (wa & wb):
            return Anomaly(
                AnomalyKind.WRITE_SKEW,
                (a, b),
                f"concurrent txns {a} and {b} read {sorted(common)} and wrote "
                f"disjoint keys {sorted(wa)} / {sorted(wb)}",
                keys=tuple(sorted(common | wa | wb)),
            )
    return None


def _lost_update_pattern(h: History, info: VersionInfo) -> Optional[Anomaly]:
    rt = derive_realtime(h).edges
    concurrent = set(rt_concurrent_pairs(h))
    for obs in sorted(info.external_reads(), key=lambda o: (o.txn, o.op_index)):
        updates = [u for u in info.updates_of(obs.key) if u != obs.txn]
        for i, u1 in enumerate(updates):
            for u2 in updates[i + 1 :]:
                pair = (u1, u2) if u1 < u2 else (u2, u1)
                if pair not in concurrent:
                    continue
                if (u1, obs.txn) not in rt or (u2, obs.txn) not in rt:
                    continue
                if (u1 in obs.writers) != (u2 in obs.writers):
                    missing = u1 if u1 not in obs.writers else u2
                    kept = u2 if missing == u1 else u1
                    return Anomaly(
                        AnomalyKind.LOST_UPDATE,
                        (missing, kept, obs.txn),
                        f"txn {obs.txn} observes txn {kept}'s update of {obs.key!r} "
                        f"but not the concurrent update by txn {missing}",
                        keys=(obs.key,),
                    )
    return None


def _classify_rejection(
    h: History,
    model: ModelId,
    info: Optional[VersionInfo],
    dangling: Optional[DanglingRead],
) -> Anomaly:
    if dangling is not None:
        return Anomaly(
            AnomalyKind.DIRTY_VALUE,
            (dangling.txn,),
            str(dangling),
            keys=(dangling.key,),
        )
    if model in (ModelId.SER, ModelId.SSER):
        skew = _write_skew_pattern(h)
        if skew is not None:
            return skew
    if info is not None:
        lost = _lost_update_pattern(h, info)
        if lost is not None and model in (ModelId.SSER, ModelId.LIN):
            return lost
        if model in (ModelId.SSER, ModelId.LIN):
            stale = _session_stale_pattern(h, info, derive_realtime(h).edges)
            if stale is not None:
                return stale
        if model is ModelId.SC:
            stale = _session_stale_pattern(h, info, derive_session(h).edges)
            if stale is not None:
                g = "RMW" if h.txn(stale.participants[0]).proc == h.txn(stale.participants[1]).proc else "MR"
                return Anomaly(
                    AnomalyKind.SESSION_BREACH,
                    stale.participants,
                    stale.narrative,
                    keys=stale.keys,
                    guarantee=g,
                )
        nonmono = _nonmonotonic_pattern(h, info)
        if nonmono is not None:
            return nonmono
        if model is ModelId.SER:
            lost = _lost_update_pattern(h, info)
            if lost is not None:
                return lost
    return Anomaly(
        AnomalyKind.SNAPSHOT_VIOLATION,
        tuple(sorted(t.id for t in h.txns)),
        "no legal sequential history is equivalent under the model's order constraints",
    )


def _check_serializable(
    h: History, budget: CheckBudget, model: ModelId, required: set[tuple[int, int]]
) -> Verdict:
    if not h.txns:
        return accepted(model, SerialCertificate(()))
    if len(h.txns) > budget.max_txns:
        return inconclusive(model, f"more than {budget.max_txns} transactions")

    info: Optional[VersionInfo] = None
    dangling: Optional[DanglingRead] = None
    try:
        info = infer_versions(h)
    except DanglingRead as exc:
        dangling = exc
    except AmbiguousVersion:
        info = None  # search without data-flow pruning

    edges = set(required)
    if info is not None:
        edges |= _dataflow_edges(h, info)
        cycle = _find_cycle([t.id for t in h.txns], edges)
        if cycle is not None:
            return rejected(model, _classify_rejection(h, model, info, None))

    order, explored, exhausted = _search_serial(h, budget, edges)
    if order is not None:
        return accepted(model, SerialCertificate(order), explored)
    if exhausted:
        return inconclusive(model, "state budget exhausted", explored)
    return rejected(model, _classify_rejection(h, model, info, dangling), explored)


def check_ser(h: History, budget: CheckBudget = DEFAULT_BUDGET) -> Verdict:
    """Serialisability: some total order of the transactions replays legally."""
    return _check_serializable(h, budget, ModelId.SER, set())


def check_sser(h: History, budget: CheckBudget = DEFAULT_BUDGET) -> Verdict:
    """Strict serialisability: the serial order must extend real-time order."""
    return _check_serializable(h, budget, ModelId.SSER, set(derive_realtime(h).edges))


def check_lin(h: History, budget: CheckBudget = DEFAULT_BUDGET) -> Verdict:
    """Linearizability: SSER restricted to single-operation transactions."""
    single_op_or_raise(h)
    return _check_serializable(h, budget, ModelId.LIN, set(derive_realtime(h).edges))


def check_sc(h: History, budget: CheckBudget = DEFAULT_BUDGET) -> Verdict:
    """Sequential consistency: only per-process order constrains the serial order."""
    single_op_or_raise(h)
    return _check_serializable(h, budget, ModelId.SC, set(derive_session(h).edges))


def oracle_ser(
    h: History, required: Optional[Iterable[tuple[int, int]]] = None
) -> Verdict:
    """Ground-truth serialisability by exhaustive permutation replay.

    With `required` edges this doubles as an SSER/SC oracle.  Only intended
    for test corpora; histories above 8 transactions raise TooLarge.
    """
    ids = sorted(t.id for t in h.txns)
    if len(ids) > 8:
        raise TooLarge(f"{len(ids)} transactions exceed the oracle limit of 8")
    req = frozenset(required or ())
    tried = 0
    for perm in itertools.permutations(ids):
        pos = {tid: i for i, tid in enumerate(perm)}
        if any(pos[a] > pos[b] for a, b in req):
            continue
        tried += 1
        state = ReplayState(h)
        if all(apply_txn(state, h.txn(tid)) is None for tid in perm):
            return accepted(ModelId.SER, SerialCertificate(perm), tried)
    info = None
    dangling = None
    try:
        info = infer_versions(h)
    except DanglingRead as exc:
        dangling = exc
    except AmbiguousVersion:
        pass
    return rejected(ModelId.SER, _classify_rejection(h, ModelId.SER, info, dangling), tried)
