"""Seeded synthetic trace generator with known per-job ground-truth power.

Each user archetype draws jobs whose true per-component power is
units * base_watts * (1 + amplitude * sin(2*pi*runtime/period))
           * (1 - interference * other_units/capacity),
summed over the job's nodes. Node-level emitted power is the idle baseline
plus the co-located job truths plus optional Gaussian noise, clamped at 0 W.
"""

from __future__ import annotations

import math

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .trace import (
    ACCEL_CAPACITY,
    CORE_CAPACITY,
    GRID_STEP,
    ComponentType,
    NodeConfig,
    PowerSample,
    WorkloadSample,
    write_node_table,
    write_power,
    write_workload,
)


class GenerationError(ValueError):
    pass


@dataclass
class NodeGroup:
    count: int
    cpu_class: ComponentType
    accelerator: ComponentType


@dataclass
class UserArchetype:
    user: str
    cpu_class: ComponentType
    cores_per_node: int
    node_count: Tuple[int, int]  # inclusive range
    base_power: Dict[ComponentType, float]  # watts per unit at baseline
    names: Tuple[str, ...]
    arrival_prob: float  # new-job probability per 5-minute slot
    mean_len_slots: float
    accel: Optional[ComponentType] = None
    accel_units: int = 0
    amplitude: float = 0.0
    period_s: float = 3600.0
    interference: float = 0.0
    name_factors: Dict[str, float] = field(default_factory=dict)  # per-name multiplier


@dataclass
class SynthConfig:
    nodes: List[NodeGroup]
    users: List[UserArchetype]
    months: int
    seed: int
    noise_std: float = 0.0
    idle_unit_power: Dict[ComponentType, float] = field(default_factory=dict)
    allow_sharing: bool = True
    mic_load_absent: bool = True
    month_slots: int = 8640  # 30 days of 5-minute slots
    start_time: int = 0

    def validate(self) -> None:
        if self.months < 2:
            raise GenerationError("need at least 2 months (one to train, one to apply)")
        if self.noise_std < 0:
            raise GenerationError("noise_std must be nonnegative")
        if any(w < 0 for w in self.idle_unit_power.values()):
            raise GenerationError("idle unit powers must be nonnegative")
        for arch in self.users:
            if not 0 < arch.arrival_prob <= 1:
                raise GenerationError(f"{arch.user}: arrival_prob outside (0, 1]")
            if arch.mean_len_slots < 1:
                raise GenerationError(f"{arch.user}: mean_len_slots < 1")
            if not 1 <= arch.cores_per_node <= CORE_CAPACITY:
                raise GenerationError(f"{arch.user}: bad cores_per_node")
            if arch.accel is not None and not 1 <= arch.accel_units <= ACCEL_CAPACITY:
                raise GenerationError(f"{arch.user}: bad accel_units")
            if not 0 <= arch.amplitude < 1:
                raise GenerationError(f"{arch.user}: amplitude outside [0, 1)")
            if not 0 <= arch.interference <= 1:
                raise GenerationError(f"{arch.user}: interference outside [0, 1]")
            if any(w < 0 for w in arch.base_power.values()):
                raise GenerationError(f"{arch.user}: negative base power")
            used = [arch.cpu_class] + ([arch.accel] if arch.accel else [])
            for comp in used:
                if comp not in arch.base_power:
                    raise GenerationError(
                        f"{arch.user}: base_power missing for {comp.value}"
                    )
            if not arch.names:
                raise GenerationError(f"{arch.user}: empty name pool")
            if any(f < 0 for f in arch.name_factors.values()):
                raise GenerationError(f"{arch.user}: negative name factor")
        self._check_packing()

    def _check_packing(self) -> None:
        # Expected concurrent node demand per pool must not exceed the pool.
        demand: Dict[Tuple[ComponentType, Optional[ComponentType]], float] = {}
        for arch in self.users:
            key = (arch.cpu_class, arch.accel)
            mean_nodes = (arch.node_count[0] + arch.node_count[1]) / 2
            demand[key] = demand.get(key, 0.0) + (
                arch.arrival_prob * arch.mean_len_slots * mean_nodes
            )
        for (cpu, accel), need in demand.items():
            pool = sum(
                g.count
                for g in self.nodes
                if g.cpu_class is cpu and (accel is None or g.accelerator is accel)
            )
            if need > pool:
                raise GenerationError(
                    f"arrival rate exceeds capacity: pool ({cpu.value},"
                    f"{accel.value if accel else '*'}) has {pool} nodes, "
                    f"expected concurrent demand {need:.2f}"
                )


def _component(tag: str) -> ComponentType:
    try:
        return ComponentType(tag)
    except ValueError:
        raise GenerationError(f"unknown component tag {tag!r}")


def config_from_dict(doc: dict) -> SynthConfig:
    try:
        nodes = [
            NodeGroup(int(g["count"]), _component(g["cpu_class"]), _component(g["accelerator"]))
            for g in doc["nodes"]
        ]
        users = []
        for u in doc["users"]:
            users.append(
                UserArchetype(
                    user=u["user"],
                    cpu_class=_component(u["cpu_class"]),
                    cores_per_node=int(u["cores_per_node"]),
                    node_count=(int(u["node_count"][0]), int(u["node_count"][1])),
                    base_power={_component(c): float(w) for c, w in u["base_power"].items()},
                    names=tuple(u["names"]),
                    arrival_prob=float(u["arrival_prob"]),
                    mean_len_slots=float(u["mean_len_slots"]),
                    accel=_component(u["accel"]) if u.get("accel") else None,
                    accel_units=int(u.get("accel_units", 0)),
                    amplitude=float(u.get("amplitude", 0.0)),
                    period_s=float(u.get("period_s", 3600.0)),
                    interference=float(u.get("interference", 0.0)),
                    name_factors={
                        str(k): float(v) for k, v in u.get("name_factors", {}).items()
                    },
                )
            )
        config = SynthConfig(
            nodes=nodes,
            users=users,
            months=int(doc["months"]),
            seed=int(doc["seed"]),
            noise_std=float(doc.get("noise_std", 0.0)),
            idle_unit_power={
                _component(c): float(w)
                for c, w in doc.get("idle_unit_power", {}).items()
            },
            allow_sharing=bool(doc.get("allow_sharing", True)),
            mic_load_absent=bool(doc.get("mic_load_absent", True)),
            month_slots=int(doc.get("month_slots", 8640)),
            start_time=int(doc.get("start_time", 0)),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise GenerationError(f"bad generator config: {exc}")
    config.validate()
    return config


def config_from_toml(path: Union[str, Path]) -> SynthConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise GenerationError(f"cannot read config {path}: {exc}")
    return config_from_dict(doc)


@dataclass
class TruthRow:
    grid_time: int
    job_id: str
    component: ComponentType
    true_watts: float


@dataclass
class SynthTrace:
    nodes: List[NodeConfig]
    workload: List[WorkloadSample]
    power: List[PowerSample]
    truth: List[TruthRow]
    skipped_jobs: int  # arrivals dropped for lack of free nodes

    def write(self, out_dir: Union[str, Path]) -> Dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "nodes": out / "nodes.csv",
            "workload": out / "workload.csv",
            "power": out / "power.csv",
            "truth": out / "truth.csv",
        }
        paths["nodes"].write_text(write_node_table(self.nodes))
        paths["workload"].write_text(write_workload(self.workload))
        paths["power"].write_text(write_power(self.power))
        lines = ["grid_time,job_id,component,true_watts"]
        for t in self.truth:
            lines.append(f"{t.grid_time},{t.job_id},{t.component.value},{t.true_watts!r}")
        paths["truth"].write_text("\n".join(lines) + "\n")
        return paths


@dataclass
class _Job:
    job_id: str
    arch: UserArchetype
    name: str
    start_slot: int
    end_slot: int  # exclusive
    placement: Dict[str, Tuple[int, int]]  # node_id -> (cores, accel units)


def generate(config: SynthConfig) -> SynthTrace:
    """Deterministic trace generation; identical seeds give identical logs."""
    config.validate()
    rng = np.random.default_rng(config.seed)

    nodes: List[NodeConfig] = []
    for group in config.nodes:
        for _ in range(group.count):
            nodes.append(
                NodeConfig(f"n{len(nodes):03d}", group.cpu_class, group.accelerator)
            )
    pools: Dict[str, List[str]] = {}
    for arch in config.users:
        pools[arch.user] = [
            n.node_id
            for n in nodes
            if n.cpu_class is arch.cpu_class
            and (arch.accel is None or n.accelerator is arch.accel)
        ]
        if not pools[arch.user]:
            raise GenerationError(f"no nodes match archetype of {arch.user}")
    node_by_id = {n.node_id: n for n in nodes}

    occupancy: Dict[str, List[int]] = {n.node_id: [0, 0] for n in nodes}
    active: List[_Job] = []
    workload: List[WorkloadSample] = []
    power: List[PowerSample] = []
    truth: List[TruthRow] = []
    job_counter = 0
    skipped = 0
    idle = config.idle_unit_power

    total_slots = config.months * config.month_slots
    for slot in range(total_slots):
        t = config.start_time + slot * GRID_STEP

        for job in [j for j in active if j.end_slot <= slot]:
            for node_id, (cores, accel) in job.placement.items():
                occupancy[node_id][0] -= cores
                occupancy[node_id][1] -= accel
            active.remove(job)

        for arch in config.users:
            if rng.random() >= arch.arrival_prob:
                continue
            length = int(rng.geometric(1.0 / arch.mean_len_slots))
            lo, hi = arch.node_count
            n_nodes = int(rng.integers(lo, hi + 1))
            name = arch.names[int(rng.integers(len(arch.names)))]
            accel_units = arch.accel_units if arch.accel is not None else 0
            chosen = []
            for node_id in pools[arch.user]:
                cores_used, accel_used = occupancy[node_id]
                if not config.allow_sharing and (cores_used or accel_used):
                    continue
                if cores_used + arch.cores_per_node > CORE_CAPACITY:
                    continue
                if accel_used + accel_units > ACCEL_CAPACITY:
                    continue
                chosen.append(node_id)
                if len(chosen) == n_nodes:
                    break
            if len(chosen) < n_nodes:
                skipped += 1
                continue
            job = _Job(
                job_id=f"j{job_counter:05d}",
                arch=arch,
                name=name,
                start_slot=slot,
                end_slot=slot + length,
                placement={
                    node_id: (arch.cores_per_node, accel_units) for node_id in chosen
                },
            )
            job_counter += 1
            for node_id in chosen:
                occupancy[node_id][0] += arch.cores_per_node
                occupancy[node_id][1] += accel_units
            active.append(job)

        # per-node usage for this slot
        node_jobs: Dict[str, List[_Job]] = {}
        for job in active:
            for node_id in job.placement:
                node_jobs.setdefault(node_id, []).append(job)

        job_truth: Dict[Tuple[str, ComponentType], float] = {}
        for node in nodes:
            jobs_here = node_jobs.get(node.node_id, [])
            for comp in (node.cpu_class, node.accelerator):
                cap = comp.capacity
                units = {}
                for job in jobs_here:
                    cores, accel = job.placement[node.node_id]
                    if comp.is_cpu:
                        u = cores
                    elif comp is job.arch.accel:
                        u = accel
                    else:
                        u = 0
                    if u:
                        units[job.job_id] = (job, u)
                total_units = sum(u for _, u in units.values())
                watts = idle.get(comp, 0.0) * (cap - total_units)
                for job, u in units.values():
                    runtime = (slot - job.start_slot) * GRID_STEP
                    factor = 1.0 + job.arch.amplitude * math.sin(
                        2.0 * math.pi * runtime / job.arch.period_s
                    )
                    factor *= job.arch.name_factors.get(job.name, 1.0)
                    other = total_units - u
                    contrib = (
                        u
                        * job.arch.base_power[comp]
                        * factor
                        * (1.0 - job.arch.interference * other / cap)
                    )
                    watts += contrib
                    key = (job.job_id, comp)
                    job_truth[key] = job_truth.get(key, 0.0) + contrib
                if config.noise_std > 0:
                    watts += float(rng.normal(0.0, config.noise_std))
                watts = max(watts, 0.0)
                load: Optional[int] = total_units
                if comp is ComponentType.MIC and config.mic_load_absent:
                    load = None
                power.append(PowerSample(t, node.node_id, comp, watts, load))

        for job in sorted(active, key=lambda j: j.job_id):
            for node_id in sorted(job.placement):
                cores, accel = job.placement[node_id]
                gpus = accel if job.arch.accel is ComponentType.GPU else 0
                mics = accel if job.arch.accel is ComponentType.MIC else 0
                workload.append(
                    WorkloadSample(
                        t, job.job_id, job.arch.user, job.name, node_id,
                        cores, gpus, mics,
                    )
                )
        for (job_id, comp), watts in sorted(
            job_truth.items(), key=lambda kv: (kv[0][0], kv[0][1].value)
        ):
            truth.append(TruthRow(t, job_id, comp, watts))

    return SynthTrace(nodes, workload, power, truth, skipped)
