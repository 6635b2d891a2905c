"""Natural power-noise quantification.

Two views: per (node, component) coefficient of variation of power at fixed
load, averaged over load levels, and per (user, component) normalized entropy
of attributed job power levels (25 bins of 20 W over [0, 500] W).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .trace import COMPONENT_ORDER, ComponentType, PowerSample
from .attribution import JobPowerRecord

ENTROPY_BIN_WATTS = 20.0
ENTROPY_RANGE_WATTS = 500.0
ENTROPY_BINS = int(ENTROPY_RANGE_WATTS / ENTROPY_BIN_WATTS)  # 25


def cv_fixed_load(
    samples: Sequence[PowerSample], component: ComponentType
) -> Optional[float]:
    """Average coefficient of variation over integer load levels.

    Per level with >= 2 samples: population std / mean; levels are weighted
    equally. MIC samples without a load figure count as load 0; samples of
    other components without load are skipped. None if no level qualifies.
    """
    levels: Dict[int, List[float]] = {}
    for s in samples:
        load = s.load_units
        if load is None:
            if component is not ComponentType.MIC:
                continue
            load = 0
        levels.setdefault(load, []).append(s.power_watts)
    cvs = []
    for load in sorted(levels):
        vals = np.asarray(levels[load], dtype=np.float64)
        if vals.size < 2:
            continue
        mean = vals.mean()
        if mean == 0.0:
            continue
        cvs.append(float(vals.std() / mean))
    if not cvs:
        return None
    return sum(cvs) / len(cvs)


def power_entropy(values: Sequence[float]) -> float:
    """Shannon entropy of the 20 W-binned power histogram, scaled to [0, 1].

    Values at or beyond 500 W clamp into the last bin.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.size < 1:
        raise ValueError("entropy needs at least one value")
    bins = np.clip((vals // ENTROPY_BIN_WATTS).astype(int), 0, ENTROPY_BINS - 1)
    counts = np.bincount(bins, minlength=ENTROPY_BINS)
    p = counts / counts.sum()
    nz = p[p > 0]
    h = float(-(nz * np.log(nz)).sum())
    return h / math.log(ENTROPY_BINS)


@dataclass
class CvRow:
    node_id: str
    component: ComponentType
    avg_cv: Optional[float]
    n_levels: int


@dataclass
class EntropyRow:
    user: str
    component: ComponentType
    entropy: float
    n_points: int
    n_clamped: int  # values outside [0, 500) folded into the edge bin


@dataclass
class VariabilityReport:
    cv_rows: List[CvRow]
    entropy_rows: List[EntropyRow]


def build_cv_report(power_samples: Sequence[PowerSample]) -> List[CvRow]:
    groups: Dict[Tuple[str, ComponentType], List[PowerSample]] = {}
    for s in power_samples:
        groups.setdefault((s.node_id, s.component), []).append(s)
    rows = []
    for (node_id, comp), samples in sorted(
        groups.items(), key=lambda kv: (kv[0][0], kv[0][1].value)
    ):
        levels: Dict[int, int] = {}
        for s in samples:
            load = s.load_units
            if load is None:
                if comp is not ComponentType.MIC:
                    continue
                load = 0
            levels[load] = levels.get(load, 0) + 1
        n_levels = sum(1 for c in levels.values() if c >= 2)
        rows.append(CvRow(node_id, comp, cv_fixed_load(samples, comp), n_levels))
    return rows


def build_entropy_report(records: Sequence[JobPowerRecord]) -> List[EntropyRow]:
    groups: Dict[Tuple[str, ComponentType], List[float]] = {}
    for r in records:
        for comp in COMPONENT_ORDER:
            if r.own_units[comp] >= 1:
                groups.setdefault((r.user, comp), []).append(r.power[comp])
    rows = []
    for (user, comp), vals in sorted(
        groups.items(), key=lambda kv: (kv[0][0], kv[0][1].value)
    ):
        n_clamped = sum(1 for v in vals if v >= ENTROPY_RANGE_WATTS)
        rows.append(EntropyRow(user, comp, power_entropy(vals), len(vals), n_clamped))
    return rows


def analyze(
    power_samples: Sequence[PowerSample], records: Sequence[JobPowerRecord]
) -> VariabilityReport:
    return VariabilityReport(
        cv_rows=build_cv_report(power_samples),
        entropy_rows=build_entropy_report(records),
    )


def write_cv_report(rows: Iterable[CvRow]) -> str:
    lines = ["node,component,avg_cv,n_levels"]
    for r in rows:
        cv = "NA" if r.avg_cv is None else repr(r.avg_cv)
        lines.append(f"{r.node_id},{r.component.value},{cv},{r.n_levels}")
    return "\n".join(lines) + "\n"


def write_entropy_report(rows: Iterable[EntropyRow]) -> str:
    lines = ["user,component,entropy,n_points,n_clamped"]
    for r in rows:
        lines.append(
            f"{r.user},{r.component.value},{r.entropy!r},{r.n_points},{r.n_clamped}"
        )
    return "\n".join(lines) + "\n"
