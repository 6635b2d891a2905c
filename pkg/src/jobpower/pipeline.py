"""Monthly rolling protocol: eligibility, EAM baseline, SVR training, apply.

Models are trained strictly on records before the cut date and applied to the
records at or after it. For each eligible user: per-component grid search on
an 80/20 chronological job split, a final SVR retrained on all pre-cut rows,
and an EAM baseline trained on the same history.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .trace import COMPONENT_ORDER, ComponentType
from .attribution import JobPowerRecord
from .features import Dataset, NgramVocabulary, build_datasets, extract_features, read_vocabulary
from . import regress
from .regress import RegressionError, SvrModel, SvrParams

MIN_TOTAL_POINTS = 1000
MIN_COMPONENT_JOBS = 10
MIN_COMPONENT_POINTS = 100
MIN_APPLY_POINTS = 10

MODEL_DIR_FORMAT = "model-dir/1"
EAM_FORMAT = "eam/1"


class PipelineError(ValueError):
    pass


@dataclass
class EamModel:
    """Per-user historical mean watts per component unit."""

    user: str
    unit_power: Dict[ComponentType, float]


def train_eam(records: Sequence[JobPowerRecord]) -> EamModel:
    """Mean over the user's rows using each component of watts-per-unit."""
    if not records:
        raise PipelineError("EAM training needs at least one record")
    user = records[0].user
    unit_power: Dict[ComponentType, float] = {}
    for comp in COMPONENT_ORDER:
        ratios = [
            r.power[comp] / r.own_units[comp]
            for r in records
            if r.own_units[comp] >= 1
        ]
        if ratios:
            unit_power[comp] = sum(ratios) / len(ratios)
    return EamModel(user=user, unit_power=unit_power)


def predict_eam(
    model: EamModel, usage: Mapping[ComponentType, int]
) -> Tuple[Dict[ComponentType, float], List[ComponentType]]:
    """units x mean unit power per component; unknown components give 0, flagged."""
    preds: Dict[ComponentType, float] = {c: 0.0 for c in COMPONENT_ORDER}
    missing: List[ComponentType] = []
    for comp, units in usage.items():
        if units < 1:
            continue
        mean = model.unit_power.get(comp)
        if mean is None:
            missing.append(comp)
            continue
        preds[comp] = units * mean
    return preds, missing


@dataclass
class EligibilityReport:
    user: str
    component_eligible: Dict[ComponentType, bool]
    component_jobs: Dict[ComponentType, int]
    component_points: Dict[ComponentType, int]
    total_points: int
    apply_points: int
    eligible: bool

    def reason(self) -> str:
        if self.eligible:
            return "eligible"
        parts = []
        if self.total_points < MIN_TOTAL_POINTS:
            parts.append(f"total_points={self.total_points}<{MIN_TOTAL_POINTS}")
        for comp, ok in self.component_eligible.items():
            if not ok:
                parts.append(
                    f"{comp.value}:jobs={self.component_jobs[comp]},"
                    f"points={self.component_points[comp]}"
                )
        if self.apply_points < MIN_APPLY_POINTS:
            parts.append(f"apply_points={self.apply_points}<{MIN_APPLY_POINTS}")
        return ";".join(parts) or "no history"


def check_eligibility(
    datasets: Mapping[Tuple[str, ComponentType], Dataset],
    apply_rows: Mapping[str, int],
) -> Dict[str, EligibilityReport]:
    """Apply the minimum-history thresholds, conjunctively."""
    users = sorted({u for (u, _) in datasets} | set(apply_rows))
    reports: Dict[str, EligibilityReport] = {}
    for user in users:
        comps = sorted(
            (c for (u, c) in datasets if u == user), key=lambda c: c.value
        )
        comp_ok: Dict[ComponentType, bool] = {}
        comp_jobs: Dict[ComponentType, int] = {}
        comp_points: Dict[ComponentType, int] = {}
        points = set()
        for comp in comps:
            ds = datasets[(user, comp)]
            comp_jobs[comp] = len(ds.jobs())
            comp_points[comp] = len(ds)
            comp_ok[comp] = (
                comp_jobs[comp] >= MIN_COMPONENT_JOBS
                and comp_points[comp] >= MIN_COMPONENT_POINTS
            )
            points.update((r.job_id, r.grid_time) for r in ds.rows)
        total = len(points)
        eligible = (
            bool(comps)
            and total >= MIN_TOTAL_POINTS
            and all(comp_ok.values())
            and apply_rows.get(user, 0) >= MIN_APPLY_POINTS
        )
        reports[user] = EligibilityReport(
            user, comp_ok, comp_jobs, comp_points, total, apply_rows.get(user, 0), eligible
        )
    return reports


@dataclass
class UserModels:
    user: str
    vocab: NgramVocabulary
    eam: EamModel
    svr: Dict[ComponentType, SvrModel]
    params: Dict[ComponentType, SvrParams]
    fallbacks: List[ComponentType]  # components whose SVR training failed


@dataclass
class PredictionRecord:
    grid_time: int
    job_id: str
    user: str
    model: str  # "SVR" | "EAM"
    pred: Dict[ComponentType, float]
    pred_total: float
    truth_total: Optional[float] = None
    truth_components: Optional[Dict[ComponentType, float]] = None
    components_used: Tuple[ComponentType, ...] = ()
    flags: Tuple[str, ...] = ()


@dataclass
class MonthRun:
    cut: int
    trained: Dict[str, UserModels]
    eligibility: Dict[str, EligibilityReport]
    skips: List[Tuple[str, str]]  # (user, reason)


def _train_user(
    user: str,
    user_datasets: Dict[ComponentType, Dataset],
    user_records: List[JobPowerRecord],
    grid: Sequence[SvrParams],
    tol: float,
    max_passes: int,
) -> UserModels:
    vocab = next(iter(user_datasets.values())).vocab
    eam = train_eam(user_records)
    svr: Dict[ComponentType, SvrModel] = {}
    params: Dict[ComponentType, SvrParams] = {}
    fallbacks: List[ComponentType] = []
    for comp in sorted(user_datasets, key=lambda c: c.value):
        ds = user_datasets[comp]
        try:
            best = regress.grid_search(ds, grid, tol=tol, max_passes=max_passes)
            model = regress.train(
                ds.matrix(),
                ds.targets(),
                best,
                tol=tol,
                max_passes=max_passes,
                user=user,
                component=comp.value,
                vocab_checksum=vocab.checksum(),
            )
        except RegressionError:
            fallbacks.append(comp)
            continue
        svr[comp] = model
        params[comp] = best
    return UserModels(user, vocab, eam, svr, params, fallbacks)


def train_models(
    records: Sequence[JobPowerRecord],
    cut: int,
    *,
    grid: Optional[Sequence[SvrParams]] = None,
    jobs: int = 1,
    apply_end: Optional[int] = None,
    tol: float = regress.DEFAULT_TOL,
    max_passes: int = regress.DEFAULT_MAX_PASSES,
) -> MonthRun:
    """Train EAM + SVR models for every eligible user on pre-cut history."""
    grid = tuple(grid) if grid is not None else regress.DEFAULT_GRID
    pre = [r for r in records if r.grid_time < cut]
    post = [
        r for r in records
        if r.grid_time >= cut and (apply_end is None or r.grid_time < apply_end)
    ]
    if not pre:
        raise PipelineError("no records before the cut date")
    datasets = build_datasets(pre)
    apply_counts: Dict[str, int] = {}
    for r in post:
        apply_counts[r.user] = apply_counts.get(r.user, 0) + 1
    eligibility = check_eligibility(datasets, apply_counts)
    eligible_users = sorted(u for u, rep in eligibility.items() if rep.eligible)
    skips = [
        (u, rep.reason())
        for u, rep in sorted(eligibility.items())
        if not rep.eligible
    ]

    records_by_user: Dict[str, List[JobPowerRecord]] = {}
    for r in pre:
        records_by_user.setdefault(r.user, []).append(r)
    tasks = [
        (
            user,
            {c: datasets[(user, c)] for (u, c) in datasets if u == user},
            records_by_user[user],
            grid,
            tol,
            max_passes,
        )
        for user in eligible_users
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_user_star, tasks))
    else:
        results = [_train_user(*t) for t in tasks]
    trained = {um.user: um for um in results}
    return MonthRun(cut=cut, trained=trained, eligibility=eligibility, skips=skips)


def _train_user_star(args):
    return _train_user(*args)


def apply_models(
    trained: Mapping[str, UserModels], records: Sequence[JobPowerRecord]
) -> List[PredictionRecord]:
    """Predict SVR and EAM power for every record of a modeled user."""
    predictions: List[PredictionRecord] = []
    for r in sorted(records, key=lambda r: (r.grid_time, r.job_id)):
        um = trained.get(r.user)
        if um is None:
            continue
        used = tuple(c for c in COMPONENT_ORDER if r.own_units[c] >= 1)
        row = extract_features(r, um.vocab).as_array()

        eam_pred, eam_missing = predict_eam(um.eam, r.own_units)
        predictions_svr: Dict[ComponentType, float] = {c: 0.0 for c in COMPONENT_ORDER}
        flags: List[str] = []
        for comp in used:
            model = um.svr.get(comp)
            if model is not None:
                predictions_svr[comp] = regress.predict(model, row)
            elif comp in um.fallbacks:
                predictions_svr[comp] = eam_pred[comp]
                flags.append(f"eam-fallback:{comp.value}")
            else:
                flags.append(f"no-model:{comp.value}")
        common = dict(
            grid_time=r.grid_time,
            job_id=r.job_id,
            user=r.user,
            truth_total=r.total_watts,
            truth_components=dict(r.power),
            components_used=used,
        )
        predictions.append(
            PredictionRecord(
                model="SVR",
                pred=predictions_svr,
                pred_total=sum(predictions_svr.values()),
                flags=tuple(flags),
                **common,
            )
        )
        predictions.append(
            PredictionRecord(
                model="EAM",
                pred=eam_pred,
                pred_total=sum(eam_pred.values()),
                flags=tuple(f"eam-no-history:{c.value}" for c in eam_missing),
                **common,
            )
        )
    return predictions


def run_month(
    records: Sequence[JobPowerRecord],
    cut: int,
    model_dir: Optional[Union[str, Path]] = None,
    *,
    grid: Optional[Sequence[SvrParams]] = None,
    jobs: int = 1,
    apply_end: Optional[int] = None,
    tol: float = regress.DEFAULT_TOL,
    max_passes: int = regress.DEFAULT_MAX_PASSES,
) -> Tuple[List[PredictionRecord], MonthRun]:
    """Full monthly roll: train on pre-cut data, predict the current month."""
    month = train_models(
        records, cut, grid=grid, jobs=jobs, apply_end=apply_end,
        tol=tol, max_passes=max_passes,
    )
    if model_dir is not None:
        save_month(month, model_dir)
    post = [
        r for r in records
        if r.grid_time >= cut and (apply_end is None or r.grid_time < apply_end)
    ]
    return apply_models(month.trained, post), month


def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))


def save_month(month: MonthRun, model_dir: Union[str, Path]) -> None:
    root = Path(model_dir)
    root.mkdir(parents=True, exist_ok=True)
    for user in sorted(month.trained):
        um = month.trained[user]
        udir = root / user
        udir.mkdir(exist_ok=True)
        (udir / "vocab.txt").write_text(um.vocab.serialize())
        _dump_json(
            udir / "eam.json",
            {
                "format": EAM_FORMAT,
                "user": user,
                "unit_power": {c.value: w for c, w in um.eam.unit_power.items()},
            },
        )
        for comp, model in um.svr.items():
            regress.save_model(model, udir / f"svr_{comp.value}.json")
        _dump_json(
            udir / "meta.json",
            {
                "components": sorted(c.value for c in um.svr),
                "fallbacks": sorted(c.value for c in um.fallbacks),
                "params": {
                    c.value: {"C": p.C, "epsilon": p.epsilon, "gamma": p.gamma}
                    for c, p in um.params.items()
                },
            },
        )
    _dump_json(
        root / "index.json",
        {
            "format": MODEL_DIR_FORMAT,
            "cut": month.cut,
            "users": sorted(month.trained),
        },
    )
    lines = ["user,reason"] + [f"{u},{reason}" for u, reason in month.skips]
    (root / "skips.csv").write_text("\n".join(lines) + "\n")


def load_month(model_dir: Union[str, Path]) -> MonthRun:
    root = Path(model_dir)
    try:
        index = json.loads((root / "index.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise PipelineError(f"cannot read model index in {root}: {exc}")
    if index.get("format") != MODEL_DIR_FORMAT:
        raise PipelineError(f"unsupported model directory format {index.get('format')!r}")
    trained: Dict[str, UserModels] = {}
    for user in index["users"]:
        udir = root / user
        vocab = read_vocabulary((udir / "vocab.txt").read_text(), user=user)
        eam_doc = json.loads((udir / "eam.json").read_text())
        if eam_doc.get("format") != EAM_FORMAT:
            raise PipelineError(f"unsupported EAM format for user {user!r}")
        eam = EamModel(
            user=user,
            unit_power={
                ComponentType(c): float(w) for c, w in eam_doc["unit_power"].items()
            },
        )
        meta = json.loads((udir / "meta.json").read_text())
        svr = {
            ComponentType(c): regress.load_model(udir / f"svr_{c}.json")
            for c in meta["components"]
        }
        params = {
            ComponentType(c): SvrParams(**p) for c, p in meta["params"].items()
        }
        fallbacks = [ComponentType(c) for c in meta["fallbacks"]]
        trained[user] = UserModels(user, vocab, eam, svr, params, fallbacks)
    return MonthRun(cut=int(index["cut"]), trained=trained, eligibility={}, skips=[])


PREDICTION_HEADER = [
    "grid_time", "job_id", "user", "model",
    "pred_S", "pred_M", "pred_F", "pred_GPU", "pred_MIC",
    "pred_total", "truth_total",
]


def write_predictions(predictions: Iterable[PredictionRecord]) -> str:
    lines = [",".join(PREDICTION_HEADER)]
    for p in predictions:
        comps = ",".join(repr(p.pred[c]) for c in COMPONENT_ORDER)
        truth = "" if p.truth_total is None else repr(p.truth_total)
        lines.append(
            f"{p.grid_time},{p.job_id},{p.user},{p.model},{comps},"
            f"{p.pred_total!r},{truth}"
        )
    return "\n".join(lines) + "\n"


def read_predictions(stream) -> List[PredictionRecord]:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [f.strip() for f in header] != PREDICTION_HEADER:
        raise PipelineError("bad prediction file header")
    out = []
    for row in reader:
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(PREDICTION_HEADER):
            raise PipelineError(f"bad prediction row: {row!r}")
        pred = {c: float(row[4 + i]) for i, c in enumerate(COMPONENT_ORDER)}
        out.append(
            PredictionRecord(
                grid_time=int(row[0]),
                job_id=row[1],
                user=row[2],
                model=row[3],
                pred=pred,
                pred_total=float(row[9]),
                truth_total=None if row[10] == "" else float(row[10]),
            )
        )
    return out
