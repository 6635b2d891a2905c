"""NRMSE / R-squared evaluation, model comparison and classification.

Degenerate scopes (zero-mean truth, constant truth, empty selections) yield
None markers instead of raising, so batch reports never abort on one user.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .trace import COMPONENT_ORDER, ComponentType

VERY_GOOD = "very good"
WEAK = "weak"

NRMSE_THRESHOLD = 0.2
R2_THRESHOLD = 0.5


def _paired(truth, pred) -> Tuple[np.ndarray, np.ndarray]:
    t = np.asarray(truth, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape or t.ndim != 1 or t.size < 1:
        raise ValueError("truth and prediction must be equal-length, non-empty")
    if not (np.isfinite(t).all() and np.isfinite(p).all()):
        raise ValueError("non-finite values in evaluation input")
    return t, p


def nrmse(truth: Sequence[float], pred: Sequence[float]) -> Optional[float]:
    """Root-mean-squared error divided by the mean of the true values."""
    t, p = _paired(truth, pred)
    mean = t.mean()
    if mean == 0.0:
        return None
    return float(np.sqrt(np.mean((t - p) ** 2)) / mean)


def r_squared(truth: Sequence[float], pred: Sequence[float]) -> Optional[float]:
    """1 - SSE/SST; None when the truth is constant."""
    t, p = _paired(truth, pred)
    sst = float(((t - t.mean()) ** 2).sum())
    if sst == 0.0:
        return None
    sse = float(((t - p) ** 2).sum())
    return 1.0 - sse / sst


def classify(nrmse_value: Optional[float], r2_value: Optional[float]) -> str:
    """Very good iff NRMSE <= 0.2 or R^2 >= 0.5 (on the defined metrics)."""
    if nrmse_value is not None and nrmse_value <= NRMSE_THRESHOLD:
        return VERY_GOOD
    if r2_value is not None and r2_value >= R2_THRESHOLD:
        return VERY_GOOD
    return WEAK


@dataclass
class EvaluationReport:
    scope: str
    model: str
    n: int
    nrmse: Optional[float]
    r2: Optional[float]
    classification: str


def _report(scope: str, model: str, truth: List[float], pred: List[float]) -> EvaluationReport:
    if not truth:
        return EvaluationReport(scope, model, 0, None, None, WEAK)
    nr = nrmse(truth, pred)
    r2 = r_squared(truth, pred)
    return EvaluationReport(scope, model, len(truth), nr, r2, classify(nr, r2))


def evaluate_scope(predictions: Sequence, scope: str = "global") -> List[EvaluationReport]:
    """Evaluate prediction records with truth, concatenated per scope group.

    scope is one of "global", "user", "component". Component scope needs the
    in-memory per-component truth carried by pipeline predictions.
    """
    if scope not in ("global", "user", "component"):
        raise ValueError(f"unknown scope {scope!r}")
    groups: Dict[Tuple[str, str], Tuple[List[float], List[float]]] = {}

    def add(label: str, model: str, t: float, p: float) -> None:
        truth, pred = groups.setdefault((label, model), ([], []))
        truth.append(t)
        pred.append(p)

    for rec in predictions:
        if scope == "component":
            if rec.truth_components is None:
                continue
            for comp in rec.components_used:
                add(
                    comp.value,
                    rec.model,
                    rec.truth_components[comp],
                    rec.pred[comp],
                )
        else:
            if rec.truth_total is None:
                continue
            label = "global" if scope == "global" else rec.user
            add(label, rec.model, rec.truth_total, rec.pred_total)

    reports = [
        _report(label, model, truth, pred)
        for (label, model), (truth, pred) in sorted(groups.items())
    ]
    if not reports:
        reports = [EvaluationReport("global" if scope == "global" else "", "", 0, None, None, WEAK)]
    return reports


def leave_out_user(predictions: Sequence, user: str) -> List[EvaluationReport]:
    """Global reports over everything except the named user's rows."""
    if not any(rec.user == user for rec in predictions):
        warnings.warn(f"user {user!r} not present in predictions; nothing removed")
        return evaluate_scope(predictions, "global")
    kept = [rec for rec in predictions if rec.user != user]
    reports = evaluate_scope(kept, "global")
    for rep in reports:
        rep.scope = f"global-without-{user}"
    return reports


REPORT_HEADER = ["scope", "model", "n", "nrmse", "r2", "class"]
SCATTER_HEADER = ["user", "model", "nrmse", "r2"]


def _fmt(value: Optional[float]) -> str:
    return "NA" if value is None else repr(value)


def write_report(reports: Iterable[EvaluationReport]) -> str:
    lines = [",".join(REPORT_HEADER)]
    for r in reports:
        lines.append(
            f"{r.scope},{r.model},{r.n},{_fmt(r.nrmse)},{_fmt(r.r2)},{r.classification}"
        )
    return "\n".join(lines) + "\n"


def write_scatter(reports: Iterable[EvaluationReport]) -> str:
    """Per-user NRMSE vs R^2 rows for plotting."""
    lines = [",".join(SCATTER_HEADER)]
    for r in reports:
        lines.append(f"{r.scope},{r.model},{_fmt(r.nrmse)},{_fmt(r.r2)}")
    return "\n".join(lines) + "\n"
