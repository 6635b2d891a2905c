"""Split node-level component power among co-located jobs.

A job's share of a component reading on one node is proportional to the units
it occupies, after subtracting the estimated idle draw of the free units.
Per-node shares are summed over all of the job's nodes, and the five
component totals are summed into the job's total power.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .trace import (
    ACCEL_CAPACITY,
    COMPONENT_ORDER,
    CORE_CAPACITY,
    AlignedObservation,
    ComponentType,
    NodeConfig,
)


class AttributionError(ValueError):
    pass


class EstimationError(AttributionError):
    """No fully idle reading exists for a component."""


class MissingPowerError(AttributionError):
    """A node used by the job lacks the power reading for a used component."""

    def __init__(self, job_id: str, grid_time: int, component: ComponentType, node_id: str):
        super().__init__(
            f"no {component.value} power reading on {node_id} at {grid_time} "
            f"for job {job_id}"
        )
        self.job_id = job_id
        self.grid_time = grid_time
        self.component = component
        self.node_id = node_id


IdleUnitPower = Dict[ComponentType, float]


@dataclass(frozen=True)
class NodeOccupancy:
    """Unit occupancy of one component type on one node during one slot."""

    n_job: int
    n_other: int
    n_idle: int
    capacity: int

    def __post_init__(self):
        if min(self.n_job, self.n_other, self.n_idle) < 0:
            raise AttributionError(f"negative occupancy: {self}")
        if self.n_job + self.n_other + self.n_idle != self.capacity:
            raise AttributionError(f"occupancy does not sum to capacity: {self}")


@dataclass
class JobPowerRecord:
    grid_time: int
    job_id: str
    user: str
    job_name: str
    runtime_s: int
    power: Dict[ComponentType, float]
    total_watts: float
    node_count: int
    own_units: Dict[ComponentType, int]
    other_cores: int
    other_gpus: int
    other_mics: int
    clamped: bool


@dataclass
class DataQuality:
    """Slots dropped for missing power readings, plus clamp counts."""

    dropped: List[Tuple[str, int]] = field(default_factory=list)
    n_clamped: int = 0
    n_records: int = 0


def _component_usage(obs: AlignedObservation, component: ComponentType) -> int:
    if component.is_cpu:
        return sum(u[0] for u in obs.jobs.values())
    if component is ComponentType.GPU:
        return sum(u[1] for u in obs.jobs.values())
    return sum(u[2] for u in obs.jobs.values())


def used_components(
    observations: Sequence[AlignedObservation], nodes: Mapping[str, NodeConfig]
) -> List[ComponentType]:
    """Component types actually exercised by jobs, resolved per node class."""
    used = set()
    for obs in observations:
        cfg = nodes.get(obs.node_id)
        if cfg is None:
            raise AttributionError(f"unknown node {obs.node_id!r}")
        if any(u[0] for u in obs.jobs.values()):
            used.add(cfg.cpu_class)
        if any(u[1] for u in obs.jobs.values()):
            used.add(ComponentType.GPU)
        if any(u[2] for u in obs.jobs.values()):
            used.add(ComponentType.MIC)
    return sorted(used, key=lambda c: c.value)


def estimate_idle_unit_power(
    observations: Sequence[AlignedObservation], component: ComponentType
) -> float:
    """Average watts per unit over all (node, slot) readings with zero usage.

    Readings are node level, so the per-unit figure divides by the node's
    full capacity (16 cores or 2 accelerator cards).
    """
    readings = [
        obs.power[component]
        for obs in observations
        if component in obs.power and _component_usage(obs, component) == 0
    ]
    if not readings:
        raise EstimationError(
            f"no fully idle reading for component {component.value}"
        )
    return (sum(readings) / len(readings)) / component.capacity


def estimate_idle_power(
    observations: Sequence[AlignedObservation],
    components: Optional[Iterable[ComponentType]] = None,
) -> IdleUnitPower:
    """Idle unit power for every component with at least one reading."""
    if components is None:
        components = [
            c for c in COMPONENT_ORDER
            if any(c in obs.power for obs in observations)
        ]
    return {c: estimate_idle_unit_power(observations, c) for c in components}


def attribute_component(
    occupancy: NodeOccupancy, measured_watts: float, idle_unit_watts: float
) -> Tuple[float, bool]:
    """One job's share of one component reading on one node.

    Returns (watts, clamped); negative raw shares are clamped to 0 W.
    """
    if occupancy.n_job < 1:
        raise AttributionError("cannot attribute power to a job using zero units")
    raw = (
        occupancy.n_job
        * (measured_watts - idle_unit_watts * occupancy.n_idle)
        / (occupancy.n_job + occupancy.n_other)
    )
    if raw < 0:
        return 0.0, True
    return raw, False


def _node_component_pairs(
    cfg: NodeConfig, usage: Tuple[int, int, int], others: List[Tuple[int, int, int]]
) -> List[Tuple[ComponentType, int, int]]:
    cores, gpus, mics = usage
    o_cores = sum(u[0] for u in others)
    pairs = [(cfg.cpu_class, cores, o_cores)]
    if cfg.accelerator is ComponentType.GPU:
        pairs.append((ComponentType.GPU, gpus, sum(u[1] for u in others)))
    else:
        pairs.append((ComponentType.MIC, mics, sum(u[2] for u in others)))
    return pairs


def job_component_power(
    job_id: str,
    component: ComponentType,
    observations: Sequence[AlignedObservation],
    idle: IdleUnitPower,
    nodes: Mapping[str, NodeConfig],
) -> Tuple[float, bool]:
    """Sum the job's share of one component over all its nodes in one slot.

    Nodes not hosting the component contribute 0. Raises MissingPowerError if
    a contributing node lacks the reading.
    """
    total = 0.0
    clamped = False
    for obs in observations:
        if job_id not in obs.jobs:
            continue
        cfg = nodes[obs.node_id]
        others = [u for j, u in obs.jobs.items() if j != job_id]
        for comp, n_job, n_other in _node_component_pairs(cfg, obs.jobs[job_id], others):
            if comp is not component or n_job == 0:
                continue
            if comp not in obs.power:
                raise MissingPowerError(job_id, obs.grid_time, comp, obs.node_id)
            occ = NodeOccupancy(
                n_job, n_other, comp.capacity - n_job - n_other, comp.capacity
            )
            watts, cl = attribute_component(occ, obs.power[comp], idle[comp])
            total += watts
            clamped = clamped or cl
    return total, clamped


def _build_record(
    job_id: str,
    grid_time: int,
    slot_obs: Sequence[AlignedObservation],
    idle: IdleUnitPower,
    nodes: Mapping[str, NodeConfig],
) -> JobPowerRecord:
    power = {c: 0.0 for c in COMPONENT_ORDER}
    own = {c: 0 for c in COMPONENT_ORDER}
    other = [0, 0, 0]
    clamped = False
    node_count = 0
    meta = None
    for obs in slot_obs:
        if job_id not in obs.jobs:
            continue
        node_count += 1
        if meta is None:
            meta = obs.job_meta[job_id]
        cfg = nodes.get(obs.node_id)
        if cfg is None:
            raise AttributionError(f"unknown node {obs.node_id!r}")
        others = [u for j, u in obs.jobs.items() if j != job_id]
        other[0] += sum(u[0] for u in others)
        other[1] += sum(u[1] for u in others)
        other[2] += sum(u[2] for u in others)
        for comp, n_job, n_other in _node_component_pairs(cfg, obs.jobs[job_id], others):
            if n_job == 0:
                continue
            own[comp] += n_job
            if comp not in obs.power:
                raise MissingPowerError(job_id, grid_time, comp, obs.node_id)
            if comp not in idle:
                raise EstimationError(
                    f"idle unit power missing for component {comp.value}"
                )
            occ = NodeOccupancy(
                n_job, n_other, comp.capacity - n_job - n_other, comp.capacity
            )
            watts, cl = attribute_component(occ, obs.power[comp], idle[comp])
            power[comp] += watts
            clamped = clamped or cl
    assert meta is not None, "job absent from every observation in its slot"
    return JobPowerRecord(
        grid_time=grid_time,
        job_id=job_id,
        user=meta.user,
        job_name=meta.job_name,
        runtime_s=grid_time - meta.start_time,
        power=power,
        total_watts=sum(power.values()),
        node_count=node_count,
        own_units=own,
        other_cores=other[0],
        other_gpus=other[1],
        other_mics=other[2],
        clamped=clamped,
    )


def build_job_power_records(
    observations: Sequence[AlignedObservation],
    idle: IdleUnitPower,
    nodes: Mapping[str, NodeConfig],
) -> Tuple[List[JobPowerRecord], DataQuality]:
    """One record per (job, slot); slots with missing readings are dropped."""
    by_slot: Dict[int, List[AlignedObservation]] = {}
    for obs in observations:
        by_slot.setdefault(obs.grid_time, []).append(obs)
    records: List[JobPowerRecord] = []
    quality = DataQuality()
    for slot in sorted(by_slot):
        slot_obs = sorted(by_slot[slot], key=lambda o: o.node_id)
        for job_id in sorted({j for o in slot_obs for j in o.jobs}):
            try:
                rec = _build_record(job_id, slot, slot_obs, idle, nodes)
            except MissingPowerError:
                quality.dropped.append((job_id, slot))
                continue
            records.append(rec)
            if rec.clamped:
                quality.n_clamped += 1
    quality.n_records = len(records)
    return records, quality


JOB_RECORD_HEADER = [
    "grid_time", "job_id", "user", "job_name", "runtime_s",
    "p_S", "p_M", "p_F", "p_GPU", "p_MIC", "p_total", "node_count",
    "u_S", "u_M", "u_F", "u_GPU", "u_MIC",
    "o_cores", "o_gpus", "o_mics", "clamped",
]


def write_job_records(records: Iterable[JobPowerRecord]) -> str:
    lines = [",".join(JOB_RECORD_HEADER)]
    for r in records:
        p = [repr(r.power[c]) for c in COMPONENT_ORDER]
        u = [str(r.own_units[c]) for c in COMPONENT_ORDER]
        lines.append(
            f"{r.grid_time},{r.job_id},{r.user},{r.job_name},{r.runtime_s},"
            + ",".join(p)
            + f",{r.total_watts!r},{r.node_count},"
            + ",".join(u)
            + f",{r.other_cores},{r.other_gpus},{r.other_mics},{int(r.clamped)}"
        )
    return "\n".join(lines) + "\n"


def read_job_records(stream) -> List[JobPowerRecord]:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [f.strip() for f in header] != JOB_RECORD_HEADER:
        raise AttributionError("bad job power record header")
    records = []
    for row in reader:
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(JOB_RECORD_HEADER):
            raise AttributionError(f"bad job power record row: {row!r}")
        power = {c: float(row[5 + i]) for i, c in enumerate(COMPONENT_ORDER)}
        own = {c: int(row[12 + i]) for i, c in enumerate(COMPONENT_ORDER)}
        records.append(
            JobPowerRecord(
                grid_time=int(row[0]),
                job_id=row[1],
                user=row[2],
                job_name=row[3],
                runtime_s=int(row[4]),
                power=power,
                total_watts=float(row[10]),
                node_count=int(row[11]),
                own_units=own,
                other_cores=int(row[17]),
                other_gpus=int(row[18]),
                other_mics=int(row[19]),
                clamped=bool(int(row[20])),
            )
        )
    return records
