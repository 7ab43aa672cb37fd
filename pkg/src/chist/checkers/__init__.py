"""One decision procedure per consistency model, plus verdict validation."""

from __future__ import annotations

from typing import Callable

from ..history import History
from .base import (
    Anomaly,
    AnomalyKind,
    CheckBudget,
    DEFAULT_BUDGET,
    ModelId,
    NotSingleOp,
    Outcome,
    UnknownModel,
    Verdict,
)
from .dependency import (
    check_cc,
    check_cm,
    check_cs,
    check_mr,
    check_mw,
    check_nmsi,
    check_ra,
    check_rc,
    check_rmw,
    check_sessions,
    check_wfr,
)
from .permutation import TooLarge, check_lin, check_sc, check_ser, check_sser, oracle_ser
from .quiescent import check_ec_quiescent
from .snapshot import check_psi, check_si, check_ssi
from .validate import ValidationError, validate_certificate, validate_witness

Checker = Callable[[History, CheckBudget], Verdict]

def _rc_strict(h: History, budget: CheckBudget = DEFAULT_BUDGET) -> Verdict:
    return check_rc(h, True, budget)


def _rc_loose(h: History, budget: CheckBudget = DEFAULT_BUDGET) -> Verdict:
    return check_rc(h, False, budget)


CHECKERS: dict[ModelId, Checker] = {
    ModelId.RC_strict: _rc_strict,
    ModelId.RC_loose: _rc_loose,
    ModelId.RA: check_ra,
    ModelId.MR: check_mr,
    ModelId.MW: check_mw,
    ModelId.RMW: check_rmw,
    ModelId.WFR: check_wfr,
    ModelId.CM: check_cm,
    ModelId.CS: check_cs,
    ModelId.CC: check_cc,
    ModelId.SI: check_si,
    ModelId.SSI: check_ssi,
    ModelId.PSI: check_psi,
    ModelId.NMSI: check_nmsi,
    ModelId.SER: check_ser,
    ModelId.SSER: check_sser,
    ModelId.LIN: check_lin,
    ModelId.SC: check_sc,
    ModelId.EC_quiescent: check_ec_quiescent,
}


def check(h: History, model: ModelId, budget: CheckBudget = DEFAULT_BUDGET) -> Verdict:
    checker = CHECKERS.get(model)
    if checker is None:
        raise UnknownModel(model if isinstance(model, str) else model.value)
    return checker(h, budget)


def validate_verdict(h: History, verdict: Verdict, budget: CheckBudget = DEFAULT_BUDGET) -> None:
    """Certificates replay; witnesses re-validate. Raises ValidationError."""
    if verdict.outcome is Outcome.ACCEPTED:
        validate_certificate(h, verdict)
    elif verdict.outcome is Outcome.REJECTED:
        validate_witness(h, verdict, recheck=lambda hh: check(hh, verdict.model, budget))


def parse_models(spec: str) -> list[ModelId]:
    if spec.strip().lower() == "all":
        return list(ModelId)
    return [ModelId.parse(tok) for tok in spec.split(",") if tok.strip()]


__all__ = [
    "Anomaly",
    "AnomalyKind",
    "CheckBudget",
    "DEFAULT_BUDGET",
    "ModelId",
    "NotSingleOp",
    "Outcome",
    "TooLarge",
    "UnknownModel",
    "ValidationError",
    "Verdict",
    "CHECKERS",
    "check",
    "check_cc",
    "check_cm",
    "check_cs",
    "check_ec_quiescent",
    "check_lin",
    "check_mr",
    "check_mw",
    "check_nmsi",
    "check_psi",
    "check_ra",
    "check_rc",
    "check_rmw",
    "check_sc",
    "check_ser",
    "check_sessions",
    "check_si",
    "check_sser",
    "check_ssi",
    "check_wfr",
    "oracle_ser",
    "parse_models",
    "validate_verdict",
]
