"""Checkers phrased over inferred versions and existential per-key version orders.

Each checker collects, per key, precedence constraints that any witnessing
version order must satisfy, plus hard conditions with no order freedom (a
counter read either contains an update or it does not).  The model holds iff
no hard condition fails and every per-key constraint graph is acyclic; the
certificate is a concrete total order per key.  DanglingRead from version
inference rejects with a DirtyValue witness; AmbiguousVersion propagates.
"""

from __future__ import annotations

import heapq
from typing import Callable, Optional

from ..history import History, ItemKind, OpKind, derive_realtime, derive_session, transitive_closure
from ..versions import DanglingRead, ReadObs, VersionInfo, infer_versions
from .base import (
    Anomaly,
    AnomalyKind,
    CheckBudget,
    DEFAULT_BUDGET,
    ModelId,
    ReadsFromCertificate,
    Verdict,
    VersionOrderCertificate,
    accepted,
    rejected,
    rt_concurrent_pairs,
)
from .permutation import _find_cycle

GUARANTEES = ("MR", "MW", "RMW", "WFR")


def _dirty_verdict(model: ModelId, exc: DanglingRead) -> Verdict:
    return rejected(
        model,
        Anomaly(AnomalyKind.DIRTY_VALUE, (exc.txn,), str(exc), keys=(exc.key,)),
    )


def _infer(h: History, model: ModelId):
    """(info, None) on success, (None, dirty verdict) on a dangling read."""
    try:
        return infer_versions(h), None
    except DanglingRead as exc:
        return None, _dirty_verdict(model, exc)


class _Constraints:
    """Per-key precedence edges plus the first hard violation encountered."""

    def __init__(self) -> None:
        self.edges: dict[str, set[tuple[int, int]]] = {}
        self.violation: Optional[Anomaly] = None

    def require(self, key: str, before: int, after: int) -> None:
        if before != after:
            self.edges.setdefault(key, set()).add((before, after))

    def fail(self, anomaly: Anomaly) -> None:
        if self.violation is None:
            self.violation = anomaly

    def merge(self, other: "_Constraints") -> None:
        for key, es in other.edges.items():
            self.edges.setdefault(key, set()).update(es)
        if self.violation is None:
            self.violation = other.violation


def _topo_orders(info: VersionInfo, edges: dict[str, set[tuple[int, int]]]) -> dict[str, tuple[int, ...]]:
    orders: dict[str, tuple[int, ...]] = {}
    for key in sorted(info.versions):
        updates = sorted(info.updates_of(key))
        preds: dict[int, set[int]] = {u: set() for u in updates}
        succs: dict[int, list[int]] = {u: [] for u in updates}
        for a, b in edges.get(key, ()):
            if a in preds and b in preds and a not in preds[b]:
                preds[b].add(a)
                succs[a].append(b)
        ready = [u for u in updates if not preds[u]]
        heapq.heapify(ready)
        out: list[int] = []
        while ready:
            u = heapq.heappop(ready)
            out.append(u)
            for v in succs[u]:
                preds[v].discard(u)
                if not preds[v]:
                    heapq.heappush(ready, v)
        orders[key] = tuple(out)
    return orders


def _solve(
    h: History,
    model: ModelId,
    info: VersionInfo,
    cons: _Constraints,
    cycle_kind: AnomalyKind,
    cycle_guarantee: Optional[str] = None,
) -> Verdict:
    if cons.violation is not None:
        return rejected(model, cons.violation)
    for key in sorted(cons.edges):
        updates = list(info.updates_of(key))
        cycle = _find_cycle(updates, cons.edges[key])
        if cycle is not None:
            return rejected(
                model,
                Anomaly(
                    cycle_kind,
                    tuple(cycle),
                    f"no version order of {key!r} can satisfy the model's "
                    f"constraints: txns {cycle} form a precedence cycle",
                    keys=(key,),
                    guarantee=cycle_guarantee,
                ),
            )
    return accepted(model, VersionOrderCertificate(_topo_orders(info, cons.edges)))


def _session_reads_and_updates(h: History, info: VersionInfo, proc: str):
    """Flattened (position, kind, payload) stream for one session.

    Yields ("read", ReadObs) for external reads and ("update", txn, key) for
    update ops, in session op order.
    """
    obs_index = {(o.txn, o.op_index): o for o in info.reads}
    stream = []
    for t in h.sessions().get(proc, []):
        for idx, txo in enumerate(t.ops):
            if txo.op.kind.is_read:
                o = obs_index.get((t.id, idx))
                if o is not None and not o.masked:
                    stream.append(("read", o, txo.op.key))
            elif txo.op.kind.is_update:
                stream.append(("update", t.id, txo.op.key))
    return stream


def _guarantee_constraints(h: History, info: VersionInfo, guarantee: str) -> _Constraints:
    cons = _Constraints()
    for proc in sorted(h.sessions()):
        stream = _session_reads_and_updates(h, info, proc)
        last_read: dict[str, ReadObs] = {}
        seen_writers: dict[str, set[int]] = {}
        prior_updates: dict[str, list[int]] = {}
        for entry in stream:
            if entry[0] == "read":
                _, obs, key = entry
                if guarantee == "MR":
                    prev = last_read.get(key)
                    if prev is not None:
                        if obs.kind is ItemKind.COUNTER:
                            if not prev.writers <= obs.writers:
                                cons.fail(_breach("MR", (prev.txn, obs.txn), key, proc,
                                                  "a later read observed fewer updates"))
                        elif prev.writers:
                            if not obs.writers:
                                cons.fail(_breach("MR", (prev.txn, obs.txn), key, proc,
                                                  "a later read returned the initial state"))
                            else:
                                cons.require(key, prev.writer, obs.writer)
                    last_read[key] = obs
                elif guarantee == "RMW":
                    for u in prior_updates.get(key, ()):
                        if u == obs.txn:
                            continue
                        if obs.kind is ItemKind.COUNTER:
                            if u not in obs.writers:
                                cons.fail(_breach("RMW", (u, obs.txn), key, proc,
                                                  f"the session's own update (txn {u}) is missing"))
                        elif not obs.writers:
                            cons.fail(_breach("RMW", (u, obs.txn), key, proc,
                                              "the read returned the initial state after an own write"))
                        elif obs.writer != u:
                            cons.require(key, u, obs.writer)
                elif guarantee == "WFR":
                    seen = seen_writers.setdefault(key, set())
                    seen.update(obs.writers)
            else:
                _, txn, key = entry
                if guarantee == "MW":
                    prior = prior_updates.get(key)
                    if prior and prior[-1] != txn:
                        cons.require(key, prior[-1], txn)
                elif guarantee == "WFR":
                    for v in sorted(seen_writers.get(key, ())):
                        cons.require(key, v, txn)
                if not prior_updates.get(key) or prior_updates[key][-1] != txn:
                    prior_updates.setdefault(key, []).append(txn)
    return cons


def _breach(guarantee: str, participants: tuple[int, ...], key: str, proc: str, why: str) -> Anomaly:
    return Anomaly(
        AnomalyKind.SESSION_BREACH,
        participants,
        f"session {proc!r} breaks {guarantee} on {key!r}: {why}",
        keys=(key,),
        guarantee=guarantee,
    )


def _snapshot_constraints(
    h: History,
    info: VersionInfo,
    deps: dict[int, frozenset[int]],
    kind: AnomalyKind,
) -> _Constraints:
    """Reads must not miss updates of transactions in their dependency set."""
    cons = _Constraints()
    for t in h.txns:
        dep_set = deps.get(t.id, frozenset())
        if not dep_set:
            continue
        for obs in sorted(info.reads_of(t.id), key=lambda o: o.op_index):
            for tk in sorted(dep_set):
                if tk == t.id or tk not in info.updates_of(obs.key):
                    continue
                if obs.kind is ItemKind.COUNTER:
                    if tk not in obs.writers:
                        cons.fail(Anomaly(
                            kind, (tk, t.id),
                            f"txn {t.id} depends on txn {tk} yet its read of "
                            f"{obs.key!r} misses txn {tk}'s update",
                            keys=(obs.key,),
                        ))
                elif not obs.writers:
                    cons.fail(Anomaly(
                        kind, (tk, t.id),
                        f"txn {t.id} depends on txn {tk} yet read the initial "
                        f"state of {obs.key!r}",
                        keys=(obs.key,),
                    ))
                elif obs.writer != tk:
                    cons.require(obs.key, tk, obs.writer)
    return cons


def _wr_deps(h: History, info: VersionInfo) -> dict[int, frozenset[int]]:
    closed = transitive_closure(info.reads_from.edges)
    out: dict[int, set[int]] = {t.id: set() for t in h.txns}
    for a, b in closed:
        out[b].add(a)
    return {k: frozenset(v) for k, v in out.items()}


def _causal_deps(h: History, info: VersionInfo) -> dict[int, frozenset[int]]:
    base = set(info.reads_from.edges) | set(derive_session(h).edges)
    closed = transitive_closure(base)
    out: dict[int, set[int]] = {t.id: set() for t in h.txns}
    for a, b in closed:
        out[b].add(a)
    return {k: frozenset(v) for k, v in out.items()}


def write_conflict(h: History) -> Optional[Anomaly]:
    """First real-time-concurrent pair of transactions updating a common key."""
    for a, b in rt_concurrent_pairs(h):
        common = set(h.txn(a).update_keys()) & set(h.txn(b).update_keys())
        if common:
            key = sorted(common)[0]
            return Anomaly(
                AnomalyKind.WRITE_CONFLICT,
                (a, b),
                f"concurrent txns {a} and {b} both update {key!r}",
                keys=tuple(sorted(common)),
            )
    return None


def check_rc(h: History, strict: bool, budget: CheckBudget = DEFAULT_BUDGET) -> Verdict:
    """Read-committed: every read observes committed values only.

    The strict flavour additionally requires the writer's final response to
    precede the read's response in the event sequence.
    """
    model = ModelId.RC_strict if strict else ModelId.RC_loose
    info, dirty = _infer(h, model)
    if dirty is not None:
        return dirty
    if strict:
        for obs in sorted(info.external_reads(), key=lambda o: (o.txn, o.op_index)):
            for w in sorted(obs.writers):
                if h.txn(w).last_res >= obs.res_seq:
                    return rejected(model, Anomaly(
                        AnomalyKind.DIRTY_VALUE,
                        (w, obs.txn),
                        f"txn {obs.txn} read {obs.key!r} from txn {w}, whose final "
                        f"response comes later in the history",
                        keys=(obs.key,),
                    ))
    return accepted(model, ReadsFromCertificate(info.reads_from.edges))


def check_ra(h: History, budget: CheckBudget = DEFAULT_BUDGET) -> Verdict:
    """Read-atomic: observed transactions are seen all-or-nothing."""
    info, dirty = _infer(h, ModelId.RA)
    if dirty is not None:
        return dirty
    cons = _Constraints()
    for t in h.txns:
        reads = sorted(info.reads_of(t.id), key=lambda o: o.op_index)
        seen_writers: set[int] = set()
        for obs in reads:
            seen_writers.update(w for w in obs.writers if w != t.id)
        for w in sorted(seen_writers):
            w_keys = set(h.txn(w).update_keys())
            for obs in reads:
                if obs.key not in w_keys or w in obs.writers:
                    continue
                src_key = next(o.key for o in reads if w in o.writers)
                if obs.kind is ItemKind.COUNTER or not obs.writers:
                    cons.fail(Anomaly(
                        AnomalyKind.FRACTURED_READ,
                        (w, t.id),
                        f"txn {t.id} observes txn {w} via {src_key!r} but its read "
                        f"of {obs.key!r} misses txn {w}'s update",
                        keys=(src_key, obs.key),
                    ))
                else:
                    cons.require(obs.key, w, obs.writer)
    return _solve(h, ModelId.RA, info, cons, AnomalyKind.FRACTURED_READ)


def check_sessions(h: History, budget: CheckBudget = DEFAULT_BUDGET) -> dict[ModelId, Verdict]:
    """The four session guarantees in isolation, plus their conjunction CM."""
    out: dict[ModelId, Verdict] = {}
    models = {"MR": ModelId.MR, "MW": ModelId.MW, "RMW": ModelId.RMW, "WFR": ModelId.WFR}
    try:
        info = infer_versions(h)
    except DanglingRead as exc:
        for g, m in models.items():
            out[m] = _dirty_verdict(m, exc)
        out[ModelId.CM] = _dirty_verdict(ModelId.CM, exc)
        return out
    combined = _Constraints()
    for g, m in models.items():
        cons = _guarantee_constraints(h, info, g)
        out[m] = _solve(h, m, info, cons, AnomalyKind.SESSION_BREACH, cycle_guarantee=g)
        combined.merge(cons)
    out[ModelId.CM] = _solve(
        h, ModelId.CM, info, combined, AnomalyKind.SESSION_BREACH, cycle_guarantee="CM"
    )
    return out


def _session_checker(model: ModelId) -> Callable[[History, CheckBudget], Verdict]:
    def run(h: History, budget: CheckBudget = DEFAULT_BUDGET) -> Verdict:
        return check_sessions(h, budget)[model]

    run.__name__ = f"check_{model.value.lower()}"
    return run


check_mr = _session_checker(ModelId.MR)
check_mw = _session_checker(ModelId.MW)
check_rmw = _session_checker(ModelId.RMW)
check_wfr = _session_checker(ModelId.WFR)
check_cm = _session_checker(ModelId.CM)


def check_cs(h: History, budget: CheckBudget = DEFAULT_BUDGET) -> Verdict:
    """Consistent snapshot: reads never miss effects of wr-dependencies."""
    info, dirty = _infer(h, ModelId.CS)
    if dirty is not None:
        return dirty
    cons = _snapshot_constraints(h, info, _wr_deps(h, info), AnomalyKind.SNAPSHOT_VIOLATION)
    return _solve(h, ModelId.CS, info, cons, AnomalyKind.SNAPSHOT_VIOLATION)


def check_cc(h: History, budget: CheckBudget = DEFAULT_BUDGET) -> Verdict:
    """Causal consistency: one per-key version order satisfies the session
    guarantees and snapshot consistency along the causal (session + reads-from)
    order, and never inverts the real-time order of a key's updates."""
    info, dirty = _infer(h, ModelId.CC)
    if dirty is not None:
        return dirty
    combined = _Constraints()
    for g in GUARANTEES:
        combined.merge(_guarantee_constraints(h, info, g))
    combined.merge(
        _snapshot_constraints(h, info, _causal_deps(h, info), AnomalyKind.CAUSALITY_VIOLATION)
    )
    rt = derive_realtime(h).edges
    for key in sorted(info.versions):
        updates = sorted(info.updates_of(key))
        for i, a in enumerate(updates):
            for b in updates[i + 1 :]:
                if (a, b) in rt:
                    combined.require(key, a, b)
                elif (b, a) in rt:
                    combined.require(key, b, a)
    return _solve(h, ModelId.CC, info, combined, AnomalyKind.CAUSALITY_VIOLATION)


def check_nmsi(h: History, budget: CheckBudget = DEFAULT_BUDGET) -> Verdict:
    """Non-monotonic snapshot isolation: consistent snapshots plus the rule
    that concurrent transactions never update a common item."""
    conflict = write_conflict(h)
    if conflict is not None:
        return rejected(ModelId.NMSI, conflict)
    info, dirty = _infer(h, ModelId.NMSI)
    if dirty is not None:
        return dirty
    cons = _snapshot_constraints(h, info, _wr_deps(h, info), AnomalyKind.SNAPSHOT_VIOLATION)
    return _solve(h, ModelId.NMSI, info, cons, AnomalyKind.SNAPSHOT_VIOLATION)
