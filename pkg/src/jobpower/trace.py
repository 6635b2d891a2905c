"""Workload, power and node-inventory log parsing with 5-minute alignment.

All logs are comma-separated UTF-8 with a header row and integer epoch-second
timestamps (UTC). Raw readings are aligned onto a 300 s grid by flooring the
timestamp; multiple power readings landing in the same slot are averaged.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

GRID_STEP = 300
CORE_CAPACITY = 16
ACCEL_CAPACITY = 2


class TraceError(ValueError):
    """Malformed or inconsistent log input."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class ParseError(TraceError):
    pass


class SchemaError(TraceError):
    pass


class CapacityError(TraceError):
    pass


class RangeError(TraceError):
    pass


class ComponentType(Enum):
    S = "S"
    M = "M"
    F = "F"
    GPU = "GPU"
    MIC = "MIC"

    @property
    def is_cpu(self) -> bool:
        return self in (ComponentType.S, ComponentType.M, ComponentType.F)

    @property
    def capacity(self) -> int:
        """Per-node unit capacity: 16 cores for a CPU class, 2 accelerator cards."""
        return CORE_CAPACITY if self.is_cpu else ACCEL_CAPACITY


CPU_CLASSES = (ComponentType.S, ComponentType.M, ComponentType.F)
ACCELERATORS = (ComponentType.GPU, ComponentType.MIC)
COMPONENT_ORDER = (
    ComponentType.S,
    ComponentType.M,
    ComponentType.F,
    ComponentType.GPU,
    ComponentType.MIC,
)


@dataclass(frozen=True)
class NodeConfig:
    node_id: str
    cpu_class: ComponentType
    accelerator: ComponentType
    core_capacity: int = CORE_CAPACITY
    accel_capacity: int = ACCEL_CAPACITY


@dataclass(frozen=True)
class WorkloadSample:
    timestamp: int
    job_id: str
    user: str
    job_name: str
    node_id: str
    cores_used: int
    gpus_used: int
    mics_used: int


@dataclass(frozen=True)
class PowerSample:
    timestamp: int
    node_id: str
    component: ComponentType
    power_watts: float
    load_units: Optional[int] = None


@dataclass(frozen=True)
class JobMeta:
    user: str
    job_name: str
    start_time: int


@dataclass
class AlignedObservation:
    """Everything known about one node during one 300 s grid slot."""

    grid_time: int
    node_id: str
    power: Dict[ComponentType, float]
    jobs: Dict[str, Tuple[int, int, int]]  # job_id -> (cores, gpus, mics)
    job_meta: Dict[str, JobMeta]


NODE_HEADER = ["node_id", "cpu_class", "accelerator"]
WORKLOAD_HEADER = [
    "timestamp", "job_id", "user", "job_name", "node_id", "cores", "gpus", "mics",
]
POWER_HEADER = ["timestamp", "node_id", "component", "power_watts", "load_units"]

Stream = Union[str, Iterable[str]]


def _rows(stream: Stream, header: Sequence[str]):
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    try:
        first = next(reader)
    except StopIteration:
        raise ParseError("empty input, expected header " + ",".join(header))
    if [f.strip() for f in first] != list(header):
        raise ParseError(f"bad header {first!r}, expected {','.join(header)}", 1)
    for line_no, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        yield line_no, [f.strip() for f in row]


def _component(tag: str, line_no: int) -> ComponentType:
    try:
        return ComponentType(tag)
    except ValueError:
        raise SchemaError(f"unknown component tag {tag!r}", line_no)


def _int(value: str, name: str, line_no: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"bad integer for {name}: {value!r}", line_no)


def _float(value: str, name: str, line_no: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise ParseError(f"bad number for {name}: {value!r}", line_no)


def node_map(nodes: Iterable[NodeConfig]) -> Dict[str, NodeConfig]:
    return {n.node_id: n for n in nodes}


def parse_node_config(stream: Stream) -> List[NodeConfig]:
    """Parse the node inventory table; node ids must be unique."""
    nodes: List[NodeConfig] = []
    seen = set()
    for line_no, row in _rows(stream, NODE_HEADER):
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", line_no)
        node_id, cpu_tag, acc_tag = row
        if not node_id:
            raise ParseError("empty node_id", line_no)
        if node_id in seen:
            raise SchemaError(f"duplicate node_id {node_id!r}", line_no)
        cpu = _component(cpu_tag, line_no)
        acc = _component(acc_tag, line_no)
        if not cpu.is_cpu:
            raise SchemaError(f"{cpu_tag!r} is not a CPU class", line_no)
        if acc.is_cpu:
            raise SchemaError(f"{acc_tag!r} is not an accelerator", line_no)
        seen.add(node_id)
        nodes.append(NodeConfig(node_id=node_id, cpu_class=cpu, accelerator=acc))
    return nodes


def parse_workload(
    stream: Stream, nodes: Optional[Mapping[str, NodeConfig]] = None
) -> List[WorkloadSample]:
    """Parse per-(job, node) resource usage records.

    When a node table is supplied, records are additionally validated against
    each node's hardware (no GPUs requested on a MIC node and vice versa).
    """
    samples: List[WorkloadSample] = []
    for line_no, row in _rows(stream, WORKLOAD_HEADER):
        if len(row) != 8:
            raise ParseError(f"expected 8 fields, got {len(row)}", line_no)
        ts = _int(row[0], "timestamp", line_no)
        job_id, user, job_name, node_id = row[1:5]
        if not job_id or not user or not node_id:
            raise ParseError("job_id, user and node_id must be non-empty", line_no)
        cores = _int(row[5], "cores", line_no)
        gpus = _int(row[6], "gpus", line_no)
        mics = _int(row[7], "mics", line_no)
        if not 0 <= cores <= CORE_CAPACITY:
            raise CapacityError(f"cores {cores} outside [0, {CORE_CAPACITY}]", line_no)
        if not 0 <= gpus <= ACCEL_CAPACITY:
            raise CapacityError(f"gpus {gpus} outside [0, {ACCEL_CAPACITY}]", line_no)
        if not 0 <= mics <= ACCEL_CAPACITY:
            raise CapacityError(f"mics {mics} outside [0, {ACCEL_CAPACITY}]", line_no)
        if cores + gpus + mics == 0:
            raise SchemaError("record uses no resources at all", line_no)
        if nodes is not None:
            cfg = nodes.get(node_id)
            if cfg is None:
                raise SchemaError(f"unknown node {node_id!r}", line_no)
            if gpus > 0 and cfg.accelerator is not ComponentType.GPU:
                raise SchemaError(f"node {node_id!r} has no GPUs", line_no)
            if mics > 0 and cfg.accelerator is not ComponentType.MIC:
                raise SchemaError(f"node {node_id!r} has no MICs", line_no)
        samples.append(
            WorkloadSample(ts, job_id, user, job_name, node_id, cores, gpus, mics)
        )
    return samples


def parse_power(
    stream: Stream, nodes: Optional[Mapping[str, NodeConfig]] = None
) -> List[PowerSample]:
    """Parse per-(node, component) power readings; load_units may be empty."""
    samples: List[PowerSample] = []
    for line_no, row in _rows(stream, POWER_HEADER):
        if len(row) != 5:
            raise ParseError(f"expected 5 fields, got {len(row)}", line_no)
        ts = _int(row[0], "timestamp", line_no)
        node_id = row[1]
        comp = _component(row[2], line_no)
        watts = _float(row[3], "power_watts", line_no)
        if watts < 0:
            raise RangeError(f"negative power {watts}", line_no)
        load: Optional[int] = None
        if row[4] != "":
            load = _int(row[4], "load_units", line_no)
            if not 0 <= load <= comp.capacity:
                raise RangeError(
                    f"load_units {load} outside [0, {comp.capacity}]", line_no
                )
        if nodes is not None:
            cfg = nodes.get(node_id)
            if cfg is None:
                raise SchemaError(f"unknown node {node_id!r}", line_no)
            hosted = cfg.cpu_class if comp.is_cpu else cfg.accelerator
            if comp is not hosted:
                raise SchemaError(
                    f"component {comp.value} not present on node {node_id!r}", line_no
                )
        samples.append(PowerSample(ts, node_id, comp, watts, load))
    return samples


def floor_to_grid(timestamp: int) -> int:
    return (timestamp // GRID_STEP) * GRID_STEP


def align(
    workload: Sequence[WorkloadSample],
    power: Sequence[PowerSample],
    nodes: Optional[Sequence[NodeConfig]] = None,
) -> List[AlignedObservation]:
    """Merge workload and power records onto the 300 s grid.

    Output is sorted by (grid_time, node_id) and is invariant under
    permutations of the input records. Per-slot duplicate power readings are
    averaged; duplicate usage records take the elementwise maximum. A job's
    start time is the earliest grid slot where its id appears anywhere.
    """
    power_acc: Dict[Tuple[int, str, ComponentType], List[float]] = {}
    for p in power:
        key = (floor_to_grid(p.timestamp), p.node_id, p.component)
        acc = power_acc.setdefault(key, [0.0, 0])
        acc[0] += p.power_watts
        acc[1] += 1

    usage: Dict[Tuple[int, str], Dict[str, List[int]]] = {}
    first_seen: Dict[str, int] = {}
    meta: Dict[str, Tuple[str, str]] = {}
    for w in sorted(workload, key=lambda w: (w.timestamp, w.node_id, w.job_id)):
        slot = floor_to_grid(w.timestamp)
        jobs = usage.setdefault((slot, w.node_id), {})
        cur = jobs.get(w.job_id)
        if cur is None:
            jobs[w.job_id] = [w.cores_used, w.gpus_used, w.mics_used]
        else:
            cur[0] = max(cur[0], w.cores_used)
            cur[1] = max(cur[1], w.gpus_used)
            cur[2] = max(cur[2], w.mics_used)
        if w.job_id not in first_seen or slot < first_seen[w.job_id]:
            first_seen[w.job_id] = slot
        meta.setdefault(w.job_id, (w.user, w.job_name))

    keys = sorted({(s, n) for (s, n, _) in power_acc} | set(usage))
    observations: List[AlignedObservation] = []
    for slot, node_id in keys:
        comp_power = {
            c: power_acc[(slot, node_id, c)][0] / power_acc[(slot, node_id, c)][1]
            for c in COMPONENT_ORDER
            if (slot, node_id, c) in power_acc
        }
        jobs = {j: tuple(u) for j, u in sorted(usage.get((slot, node_id), {}).items())}
        if sum(u[0] for u in jobs.values()) > CORE_CAPACITY:
            raise CapacityError(
                f"core occupancy exceeds {CORE_CAPACITY} on {node_id} at {slot}"
            )
        if sum(u[1] for u in jobs.values()) > ACCEL_CAPACITY:
            raise CapacityError(
                f"GPU occupancy exceeds {ACCEL_CAPACITY} on {node_id} at {slot}"
            )
        if sum(u[2] for u in jobs.values()) > ACCEL_CAPACITY:
            raise CapacityError(
                f"MIC occupancy exceeds {ACCEL_CAPACITY} on {node_id} at {slot}"
            )
        job_meta = {
            j: JobMeta(meta[j][0], meta[j][1], first_seen[j]) for j in jobs
        }
        observations.append(
            AlignedObservation(slot, node_id, comp_power, jobs, job_meta)
        )
    return observations


def write_node_table(nodes: Iterable[NodeConfig]) -> str:
    lines = [",".join(NODE_HEADER)]
    for n in nodes:
        lines.append(f"{n.node_id},{n.cpu_class.value},{n.accelerator.value}")
    return "\n".join(lines) + "\n"


def write_workload(samples: Iterable[WorkloadSample]) -> str:
    lines = [",".join(WORKLOAD_HEADER)]
    for s in samples:
        lines.append(
            f"{s.timestamp},{s.job_id},{s.user},{s.job_name},{s.node_id},"
            f"{s.cores_used},{s.gpus_used},{s.mics_used}"
        )
    return "\n".join(lines) + "\n"


def write_power(samples: Iterable[PowerSample]) -> str:
    lines = [",".join(POWER_HEADER)]
    for s in samples:
        load = "" if s.load_units is None else str(s.load_units)
        lines.append(
            f"{s.timestamp},{s.node_id},{s.component.value},{s.power_watts!r},{load}"
        )
    return "\n".join(lines) + "\n"
