"""Quiescent convergence: the finite-history rendering of eventual consistency."""

from __future__ import annotations

from ..history import History
from .base import (
    Anomaly,
    AnomalyKind,
    CheckBudget,
    DEFAULT_BUDGET,
    ModelId,
    QuiescentCertificate,
    Verdict,
    accepted,
    rejected,
)


def check_ec_quiescent(h: History, budget: CheckBudget = DEFAULT_BUDGET) -> Verdict:
    """Accepted iff, per key, every read invoked after the key's last update
    response returns one common value."""
    last_update_res: dict[str, int] = {}
    for t in h.txns:
        for txo in t.ops:
            if txo.op.kind.is_update:
                prev = last_update_res.get(txo.op.key, -1)
                last_update_res[txo.op.key] = max(prev, txo.res_seq)
    finals: dict[str, object] = {}
    witnesses: dict[str, int] = {}
    for t in sorted(h.txns, key=lambda t: t.id):
        for txo in t.ops:
            op = txo.op
            if not op.kind.is_read:
                continue
            if txo.inv_seq <= last_update_res.get(op.key, -1):
                continue
            if op.key not in finals:
                finals[op.key] = op.ret
                witnesses[op.key] = t.id
            elif finals[op.key] != op.ret:
                return rejected(
                    ModelId.EC_quiescent,
                    Anomaly(
                        AnomalyKind.DIVERGENCE,
                        (witnesses[op.key], t.id),
                        f"post-quiescence reads of {op.key!r} disagree: "
                        f"txn {witnesses[op.key]} saw {finals[op.key]!r}, "
                        f"txn {t.id} saw {op.ret!r}",
                        keys=(op.key,),
                    ),
                )
    return accepted(ModelId.EC_quiescent, QuiescentCertificate(finals))
