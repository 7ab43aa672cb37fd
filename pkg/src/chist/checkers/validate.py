"""Independent re-validation of verdicts.

Accepted certificates are replayed against the history without consulting the
search that produced them; rejected witnesses are checked structurally (the
named transactions must exhibit the anomaly's pattern), falling back to a
deterministic re-run for search-shaped witnesses.
"""

from __future__ import annotations

from typing import Optional

from ..history import History, ItemKind, derive_realtime, derive_session
from ..versions import DanglingRead, InferenceError, infer_versions
from .base import (
    Anomaly,
    AnomalyKind,
    CheckBudget,
    DEFAULT_BUDGET,
    ModelId,
    Outcome,
    QuiescentCertificate,
    ReadsFromCertificate,
    SerialCertificate,
    SnapshotCertificate,
    Verdict,
    VersionOrderCertificate,
    realtime_predecessors,
    session_predecessors,
)
from .dependency import write_conflict
from .replay import ReplayState, apply_txn, replay_serial, txn_reads_ok


class ValidationError(AssertionError):
    pass


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


def flatten_certificate(h: History, cert: SerialCertificate) -> list[tuple[int, int]]:
    """Operation sequence (txn, op index) of a serial certificate; a
    transaction's operations are adjacent by construction."""
    return [(tid, i) for tid in cert.order for i in range(len(h.txn(tid).ops))]


def _validate_serial(h: History, model: ModelId, cert: SerialCertificate) -> None:
    ids = sorted(t.id for t in h.txns)
    _require(sorted(cert.order) == ids, "certificate is not a permutation of the transactions")
    failure = replay_serial(h, cert.order)
    _require(failure is None, f"certificate replay fails at {failure}")
    pos = {tid: i for i, tid in enumerate(cert.order)}
    if model in (ModelId.SSER, ModelId.LIN):
        for a, b in derive_realtime(h).edges:
            _require(pos[a] < pos[b], f"certificate violates real-time edge {(a, b)}")
    if model is ModelId.SC:
        for a, b in derive_session(h).edges:
            _require(pos[a] < pos[b], f"certificate violates session edge {(a, b)}")


def _validate_snapshot(h: History, model: ModelId, cert: SnapshotCertificate) -> None:
    ids = sorted(t.id for t in h.txns)
    _require(sorted(cert.order) == ids, "commit order is not a permutation")
    _require(write_conflict(h) is None, "concurrent transactions update a common key")
    pos = {tid: i for i, tid in enumerate(cert.order)}
    sess = session_predecessors(h)
    rt_preds = realtime_predecessors(h)
    started = {
        t.id: frozenset(o.id for o in h.txns if o.id != t.id and o.last_res < t.first_inv)
        for t in h.txns
    }
    # cumulative states along the commit order
    states = [ReplayState(h)]
    for tid in cert.order:
        nxt = states[-1].copy()
        for txo in h.txn(tid).ops:
            if txo.op.kind.is_update:
                nxt.apply_update(txo.op, tid)
        states.append(nxt)
    for tid in ids:
        _require(tid in cert.cuts, f"txn {tid} has no snapshot point")
        cut = cert.cuts[tid]
        _require(0 <= cut <= pos[tid], f"txn {tid}'s snapshot is not a prefix before its commit")
        prefix = set(cert.order[:cut])
        _require(set(sess[tid]) <= prefix, f"txn {tid}'s snapshot misses session predecessors")
        if model is ModelId.SSI:
            _require(rt_preds[tid] <= prefix, f"txn {tid}'s snapshot misses real-time predecessors")
        if model is ModelId.PSI:
            _require(prefix <= started[tid], f"txn {tid}'s snapshot contains unfinished transactions")
        _require(txn_reads_ok(states[cut], h.txn(tid)), f"txn {tid}'s reads do not match its snapshot")


def _guarantee_holds(
    h: History, info, guarantee: str, orders: dict[str, tuple[int, ...]]
) -> Optional[str]:
    """None if the guarantee holds under the fixed per-key orders."""
    pos = {key: {w: i for i, w in enumerate(order)} for key, order in orders.items()}

    def before(key: str, a: int, b: int) -> bool:
        p = pos.get(key, {})
        return a in p and b in p and p[a] < p[b]

    for proc, txns in sorted(h.sessions().items()):
        last_read: dict[str, object] = {}
        seen_writers: dict[str, set] = {}
        prior_updates: dict[str, list[int]] = {}
        obs_index = {(o.txn, o.op_index): o for o in info.reads}
        for t in txns:
            for idx, txo in enumerate(t.ops):
                key = txo.op.key
                if txo.op.kind.is_read:
                    obs = obs_index.get((t.id, idx))
                    if obs is None or obs.masked:
                        continue
                    if guarantee == "MR":
                        prev = last_read.get(key)
                        if prev is not None:
                            if obs.kind is ItemKind.COUNTER:
                                if not prev.writers <= obs.writers:
                                    return f"MR broken on {key!r} in session {proc!r}"
                            elif prev.writers:
                                if not obs.writers or (
                                    prev.writer != obs.writer
                                    and not before(key, prev.writer, obs.writer)
                                ):
                                    return f"MR broken on {key!r} in session {proc!r}"
                        last_read[key] = obs
                    elif guarantee == "RMW":
                        for u in prior_updates.get(key, ()):
                            if u == t.id:
                                continue
                            if obs.kind is ItemKind.COUNTER:
                                if u not in obs.writers:
                                    return f"RMW broken on {key!r} in session {proc!r}"
                            elif not obs.writers or (
                                obs.writer != u and not before(key, u, obs.writer)
                            ):
                                return f"RMW broken on {key!r} in session {proc!r}"
                    elif guarantee == "WFR":
                        seen_writers.setdefault(key, set()).update(obs.writers)
                else:
                    if guarantee == "MW":
                        prior = prior_updates.get(key)
                        if prior and prior[-1] != t.id and not before(key, prior[-1], t.id):
                            return f"MW broken on {key!r} in session {proc!r}"
                    elif guarantee == "WFR":
                        for v in seen_writers.get(key, ()):
                            if v != t.id and not before(key, v, t.id):
                                return f"WFR broken on {key!r} in session {proc!r}"
                    if txo.op.kind.is_update:
                        if not prior_updates.get(key) or prior_updates[key][-1] != t.id:
                            prior_updates.setdefault(key, []).append(t.id)
    return None


def _deps_hold(
    h: History, info, deps: dict[int, frozenset[int]], orders: dict[str, tuple[int, ...]]
) -> Optional[str]:
    pos = {key: {w: i for i, w in enumerate(order)} for key, order in orders.items()}
    for t in h.txns:
        for obs in info.reads_of(t.id):
            for tk in deps.get(t.id, frozenset()):
                if tk == t.id or tk not in info.updates_of(obs.key):
                    continue
                if obs.kind is ItemKind.COUNTER:
                    if tk not in obs.writers:
                        return f"txn {t.id} misses dependency {tk} on {obs.key!r}"
                elif not obs.writers:
                    return f"txn {t.id} misses dependency {tk} on {obs.key!r}"
                elif obs.writer != tk:
                    p = pos.get(obs.key, {})
                    if not (p.get(tk, 1 << 60) < p.get(obs.writer, -1)):
                        return f"txn {t.id} reads {obs.key!r} older than dependency {tk}"
    return None


def _ra_holds(h: History, info, orders: dict[str, tuple[int, ...]]) -> Optional[str]:
    pos = {key: {w: i for i, w in enumerate(order)} for key, order in orders.items()}
    for t in h.txns:
        reads = list(info.reads_of(t.id))
        seen: set[int] = set()
        for obs in reads:
            seen.update(w for w in obs.writers if w != t.id)
        for w in seen:
            w_keys = set(h.txn(w).update_keys())
            for obs in reads:
                if obs.key not in w_keys or w in obs.writers:
                    continue
                if obs.kind is ItemKind.COUNTER or not obs.writers:
                    return f"txn {t.id} fractures txn {w} on {obs.key!r}"
                p = pos.get(obs.key, {})
                if not (p.get(w, 1 << 60) < p.get(obs.writer, -1)):
                    return f"txn {t.id} fractures txn {w} on {obs.key!r}"
    return None


def _validate_version_orders(h: History, model: ModelId, cert: VersionOrderCertificate) -> None:
    from .dependency import _causal_deps, _wr_deps  # evaluation only, not search

    info = infer_versions(h)
    for key, order in cert.orders.items():
        _require(
            sorted(order) == sorted(info.updates_of(key)),
            f"{key!r}: certificate order is not a permutation of its updates",
        )
    orders = cert.orders
    problem: Optional[str] = None
    if model in (ModelId.MR, ModelId.MW, ModelId.RMW, ModelId.WFR):
        problem = _guarantee_holds(h, info, model.value, orders)
    elif model is ModelId.CM:
        for g in ("MR", "MW", "RMW", "WFR"):
            problem = problem or _guarantee_holds(h, info, g, orders)
    elif model in (ModelId.CS, ModelId.NMSI):
        problem = _deps_hold(h, info, _wr_deps(h, info), orders)
        if model is ModelId.NMSI and problem is None:
            conflict = write_conflict(h)
            problem = str(conflict.narrative) if conflict else None
    elif model is ModelId.CC:
        rt = derive_realtime(h).edges
        pos = {key: {w: i for i, w in enumerate(order)} for key, order in orders.items()}
        for key, order in orders.items():
            for i, a in enumerate(order):
                for b in order[i + 1 :]:
                    if (b, a) in rt:
                        problem = f"{key!r}: order inverts real time between {a} and {b}"
        for g in ("MR", "MW", "RMW", "WFR"):
            problem = problem or _guarantee_holds(h, info, g, orders)
        problem = problem or _deps_hold(h, info, _causal_deps(h, info), orders)
    elif model is ModelId.RA:
        problem = _ra_holds(h, info, orders)
    _require(problem is None, f"version-order certificate fails: {problem}")


def _validate_rc(h: History, model: ModelId, cert: ReadsFromCertificate) -> None:
    info = infer_versions(h)
    _require(cert.edges == info.reads_from.edges, "reads-from certificate mismatch")
    if model is ModelId.RC_strict:
        for obs in info.external_reads():
            for w in obs.writers:
                _require(
                    h.txn(w).last_res < obs.res_seq,
                    f"txn {obs.txn} observed txn {w} before it completed",
                )


def _validate_quiescent(h: History, cert: QuiescentCertificate) -> None:
    last_update_res: dict[str, int] = {}
    for t in h.txns:
        for txo in t.ops:
            if txo.op.kind.is_update:
                last_update_res[txo.op.key] = max(last_update_res.get(txo.op.key, -1), txo.res_seq)
    for t in h.txns:
        for txo in t.ops:
            if txo.op.kind.is_read and txo.inv_seq > last_update_res.get(txo.op.key, -1):
                _require(
                    txo.op.key in cert.finals and cert.finals[txo.op.key] == txo.op.ret,
                    f"post-quiescence read of {txo.op.key!r} disagrees with certificate",
                )


def validate_certificate(h: History, verdict: Verdict) -> None:
    cert = verdict.certificate
    _require(cert is not None, "accepted verdict without certificate")
    if isinstance(cert, SerialCertificate):
        _validate_serial(h, verdict.model, cert)
    elif isinstance(cert, SnapshotCertificate):
        _validate_snapshot(h, verdict.model, cert)
    elif isinstance(cert, VersionOrderCertificate):
        _validate_version_orders(h, verdict.model, cert)
    elif isinstance(cert, ReadsFromCertificate):
        _validate_rc(h, verdict.model, cert)
    elif isinstance(cert, QuiescentCertificate):
        _validate_quiescent(h, cert)
    else:
        raise ValidationError(f"unknown certificate type {type(cert).__name__}")


def _obs_of(info, txn: int, key: str):
    return [o for o in info.reads_of(txn) if o.key == key]


def _witness_structurally_ok(h: History, verdict: Verdict) -> bool:
    a = verdict.anomaly
    ids = {t.id for t in h.txns}
    if not set(a.participants) <= ids:
        return False
    try:
        info = infer_versions(h)
    except DanglingRead:
        return a.kind is AnomalyKind.DIRTY_VALUE
    except InferenceError:
        info = None

    rt = derive_realtime(h).edges
    if a.kind is AnomalyKind.DIVERGENCE:
        if len(a.participants) != 2 or not a.keys:
            return False
        key = a.keys[0]
        vals = []
        last_update = max(
            (txo.res_seq for t in h.txns for txo in t.ops
             if txo.op.kind.is_update and txo.op.key == key),
            default=-1,
        )
        for tid in a.participants:
            for txo in h.txn(tid).ops:
                if txo.op.kind.is_read and txo.op.key == key and txo.inv_seq > last_update:
                    vals.append(txo.op.ret)
        return len(vals) >= 2 and vals[0] != vals[1]
    if a.kind is AnomalyKind.DIRTY_VALUE:
        if info is None:
            return True  # inference failed on this history
        # strict-RC shape: writer completes after the read's response
        if len(a.participants) == 2 and a.keys:
            w, r = a.participants
            for obs in _obs_of(info, r, a.keys[0]):
                if w in obs.writers and h.txn(w).last_res >= obs.res_seq:
                    return True
        return False
    if a.kind is AnomalyKind.WRITE_CONFLICT:
        if len(a.participants) != 2:
            return False
        x, y = a.participants
        common = set(h.txn(x).update_keys()) & set(h.txn(y).update_keys())
        return bool(common) and (x, y) not in rt and (y, x) not in rt
    if a.kind is AnomalyKind.WRITE_SKEW:
        if len(a.participants) != 2:
            return False
        x, y = a.participants
        tx, ty = h.txn(x), h.txn(y)
        wa, wb = set(tx.update_keys()), set(ty.update_keys())
        return (
            (x, y) not in rt and (y, x) not in rt
            and bool(set(tx.read_keys()) & set(ty.read_keys()))
            and bool(wa) and bool(wb) and not (wa & wb)
        )
    if a.kind is AnomalyKind.LOST_UPDATE:
        if info is None or len(a.participants) != 3 or not a.keys:
            return False
        missing, kept, reader = a.participants
        key = a.keys[0]
        if (missing, kept) in rt or (kept, missing) in rt:
            return False
        if (missing, reader) not in rt or (kept, reader) not in rt:
            return False
        return any(
            kept in obs.writers and missing not in obs.writers
            for obs in _obs_of(info, reader, key)
        )
    if a.kind in (
        AnomalyKind.FRACTURED_READ,
        AnomalyKind.SNAPSHOT_VIOLATION,
        AnomalyKind.CAUSALITY_VIOLATION,
        AnomalyKind.STALE_SNAPSHOT,
        AnomalyKind.NON_MONOTONIC_READ,
        AnomalyKind.SESSION_BREACH,
    ):
        if info is None or len(a.participants) < 2:
            return False
        w, t = a.participants[0], a.participants[-1]
        if a.kind is AnomalyKind.NON_MONOTONIC_READ:
            w_t, t_t = h.txn(w), h.txn(t)
            if w_t.proc != t_t.proc:
                return False
            for key in a.keys or h.keys():
                prev = [o for o in _obs_of(info, w, key)]
                cur = [o for o in _obs_of(info, t, key)]
                if prev and cur and prev[-1].writers and not (prev[-1].writers <= cur[0].writers):
                    return True
            return False
        # a read of t misses w's update of the named key
        missed_keys = a.keys[-1:] if a.keys else h.txn(w).update_keys()
        for key in missed_keys:
            if key not in h.txn(w).update_keys():
                continue
            for obs in _obs_of(info, t, key):
                if w not in obs.writers:
                    return True
        # PSI stale shape: t observes w although w had not finished
        if a.kind is AnomalyKind.STALE_SNAPSHOT:
            for obs in info.reads_of(t):
                if w in obs.writers and h.txn(w).last_res >= h.txn(t).first_inv:
                    return True
        # session-breach cycle shape falls back to a re-run
        return False
    return False


def validate_witness(h: History, verdict: Verdict, recheck=None) -> None:
    """Structural check of a rejection witness; `recheck` is an optional
    deterministic re-run used for search-shaped witnesses."""
    _require(verdict.anomaly is not None, "rejected verdict without witness")
    if _witness_structurally_ok(h, verdict):
        return
    if recheck is not None:
        again = recheck(h)
        _require(
            again.outcome is Outcome.REJECTED and again.anomaly.label == verdict.anomaly.label,
            "witness does not re-validate",
        )
        return
    raise ValidationError(
        f"witness {verdict.anomaly.label} txns={verdict.anomaly.participants} "
        f"does not match the history"
    )
