"""Numeric feature extraction and per-user per-component training datasets.

Features per (job, slot): unit counts for the five component types, runtime,
node count, the three same-node interference totals, and counts of 2- and
3-character n-grams of the normalized job name.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from .trace import COMPONENT_ORDER, ComponentType
from .attribution import JobPowerRecord

_NAME_RE = re.compile(r"[^a-z0-9_]")

BASE_FEATURE_NAMES = (
    "u_S", "u_M", "u_F", "u_GPU", "u_MIC",
    "runtime_s", "node_count", "o_cores", "o_gpus", "o_mics",
)


def normalize_name(name: str) -> str:
    """Lowercase and strip everything outside [a-z0-9_]."""
    return _NAME_RE.sub("", name.lower())


def _grams(text: str) -> Iterable[str]:
    for n in (2, 3):
        for i in range(len(text) - n + 1):
            yield text[i : i + n]


@dataclass(frozen=True)
class NgramVocabulary:
    user: str
    index: Mapping[str, int]

    def __len__(self) -> int:
        return len(self.index)

    def serialize(self) -> str:
        lines = [f"{g},{i}" for g, i in sorted(self.index.items(), key=lambda kv: kv[1])]
        return "\n".join(lines) + ("\n" if lines else "")

    def checksum(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()


def build_vocabulary(job_names: Iterable[str], user: str = "") -> NgramVocabulary:
    """All distinct 2- and 3-grams of the normalized names, in lexicographic order."""
    grams = sorted({g for name in job_names for g in _grams(normalize_name(name))})
    return NgramVocabulary(user=user, index={g: i for i, g in enumerate(grams)})


def read_vocabulary(text: str, user: str = "") -> NgramVocabulary:
    index: Dict[str, int] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        gram, _, idx = line.rpartition(",")
        index[gram] = int(idx)
    return NgramVocabulary(user=user, index=index)


def vectorize_name(name: str, vocab: NgramVocabulary) -> np.ndarray:
    """Occurrence counts of each vocabulary gram; unseen grams are ignored."""
    counts = np.zeros(len(vocab), dtype=np.int64)
    for gram in _grams(normalize_name(name)):
        idx = vocab.index.get(gram)
        if idx is not None:
            counts[idx] += 1
    return counts


@dataclass
class FeatureVector:
    u_s: int
    u_m: int
    u_f: int
    u_gpu: int
    u_mic: int
    runtime_s: int
    node_count: int
    o_cores: int
    o_gpus: int
    o_mics: int
    ngram_counts: np.ndarray

    def as_array(self) -> np.ndarray:
        base = np.array(
            [
                self.u_s, self.u_m, self.u_f, self.u_gpu, self.u_mic,
                self.runtime_s, self.node_count,
                self.o_cores, self.o_gpus, self.o_mics,
            ],
            dtype=np.float64,
        )
        return np.concatenate([base, self.ngram_counts.astype(np.float64)])


def extract_features(record: JobPowerRecord, vocab: NgramVocabulary) -> FeatureVector:
    u = record.own_units
    return FeatureVector(
        u_s=u[ComponentType.S],
        u_m=u[ComponentType.M],
        u_f=u[ComponentType.F],
        u_gpu=u[ComponentType.GPU],
        u_mic=u[ComponentType.MIC],
        runtime_s=record.runtime_s,
        node_count=record.node_count,
        o_cores=record.other_cores,
        o_gpus=record.other_gpus,
        o_mics=record.other_mics,
        ngram_counts=vectorize_name(record.job_name, vocab),
    )


@dataclass
class DatasetRow:
    features: FeatureVector
    target: float
    job_id: str
    grid_time: int


@dataclass
class Dataset:
    """Regression rows for one (user, component), sorted by job order in time."""

    user: str
    component: ComponentType
    vocab: NgramVocabulary
    rows: List[DatasetRow]

    def __len__(self) -> int:
        return len(self.rows)

    def matrix(self) -> np.ndarray:
        return np.array([r.features.as_array() for r in self.rows], dtype=np.float64)

    def targets(self) -> np.ndarray:
        return np.array([r.target for r in self.rows], dtype=np.float64)

    def jobs(self) -> List[str]:
        seen = []
        known = set()
        for r in self.rows:
            if r.job_id not in known:
                known.add(r.job_id)
                seen.append(r.job_id)
        return seen


def build_datasets(
    records: Sequence[JobPowerRecord],
) -> Dict[Tuple[str, ComponentType], Dataset]:
    """Partition attributed records into per-(user, component) datasets.

    A record contributes a row to (user, c) iff the job uses at least one
    unit of c in that slot; components a user never touches get no dataset.
    """
    by_user: Dict[str, List[JobPowerRecord]] = {}
    for r in records:
        by_user.setdefault(r.user, []).append(r)

    datasets: Dict[Tuple[str, ComponentType], Dataset] = {}
    for user in sorted(by_user):
        recs = by_user[user]
        vocab = build_vocabulary((r.job_name for r in recs), user=user)
        first_seen: Dict[str, int] = {}
        for r in recs:
            if r.job_id not in first_seen or r.grid_time < first_seen[r.job_id]:
                first_seen[r.job_id] = r.grid_time
        feats = [extract_features(r, vocab) for r in recs]
        for comp in COMPONENT_ORDER:
            rows = [
                DatasetRow(f, r.power[comp], r.job_id, r.grid_time)
                for f, r in zip(feats, recs)
                if r.own_units[comp] >= 1
            ]
            if not rows:
                continue
            rows.sort(key=lambda row: (first_seen[row.job_id], row.job_id, row.grid_time))
            datasets[(user, comp)] = Dataset(user, comp, vocab, rows)
    return datasets
