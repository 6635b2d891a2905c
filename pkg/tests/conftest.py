"""Shared synthetic-trace builders and acceptance-summary reporting."""

from __future__ import annotations

from typing import List

import pytest

# one "[PASS]/[FAIL] <criterion>" line per acceptance criterion, printed in the
# terminal summary so they survive pytest's output capture
ACCEPTANCE_RESULTS: List[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)

from jobpower import attribution, synthgen, trace
from jobpower.trace import ComponentType as CT


def attribute_trace(tr: synthgen.SynthTrace):
    """Parse-free path from a generated trace to job power records."""
    nmap = trace.node_map(tr.nodes)
    observations = trace.align(tr.workload, tr.power, tr.nodes)
    idle = attribution.estimate_idle_power(observations)
    records, quality = attribution.build_job_power_records(observations, idle, nmap)
    return records, quality, idle


def nonlinear_config(seed: int = 20140701) -> synthgen.SynthConfig:
    """8 heterogeneous users with runtime, interference and job-name effects."""

    def arch(i, cpu, accel=None, au=0, base=None, nf=1.4, **kw):
        d = dict(amplitude=0.35, period_s=7200.0, interference=0.25)
        d.update(kw)
        names = (f"app{i}a", f"app{i}b")
        return synthgen.UserArchetype(
            user=f"u{i:02d}",
            cpu_class=cpu,
            cores_per_node=8 if cpu is CT.F else 16,
            node_count=(1, 2) if cpu is CT.F else (1, 1),
            base_power=base,
            names=names,
            arrival_prob=0.11,
            mean_len_slots=6.0,
            accel=accel,
            accel_units=au,
            name_factors={names[0]: 1.0, names[1]: nf},
            **d,
        )

    users = [
        arch(0, CT.F, base={CT.F: 12.0}),
        arch(1, CT.F, CT.GPU, 1, {CT.F: 9.0, CT.GPU: 35.0}, amplitude=0.3),
        arch(2, CT.S, base={CT.S: 7.0}, amplitude=0.45, period_s=5400.0),
        arch(3, CT.S, CT.MIC, 1, {CT.S: 6.0, CT.MIC: 28.0}, amplitude=0.25),
        arch(4, CT.F, base={CT.F: 15.0}, period_s=3600.0, interference=0.35),
        arch(5, CT.M, base={CT.M: 8.0}, amplitude=0.4),
        arch(6, CT.M, base={CT.M: 11.0}, amplitude=0.2, period_s=9000.0, nf=1.6),
        arch(7, CT.F, CT.GPU, 2, {CT.F: 10.0, CT.GPU: 45.0}, amplitude=0.3),
    ]
    return synthgen.SynthConfig(
        nodes=[
            synthgen.NodeGroup(8, CT.F, CT.GPU),
            synthgen.NodeGroup(5, CT.S, CT.MIC),
            synthgen.NodeGroup(4, CT.M, CT.GPU),
        ],
        users=users,
        months=2,
        seed=seed,
        noise_std=1.5,
        idle_unit_power={CT.S: 1.5, CT.M: 1.8, CT.F: 2.0, CT.GPU: 8.0, CT.MIC: 6.0},
        month_slots=2000,
    )


def linear_config(seed: int = 11) -> synthgen.SynthConfig:
    """Noiseless, exclusive-node, purely linear archetypes (EAM-exact world)."""
    users = [
        synthgen.UserArchetype(
            "lin0", CT.F, 8, (1, 2), {CT.F: 10.0}, ("fsim",), 0.3, 4.0
        ),
        synthgen.UserArchetype(
            "lin1", CT.F, 16, (1, 1), {CT.F: 14.0, CT.GPU: 40.0},
            ("gjob",), 0.25, 5.0, accel=CT.GPU, accel_units=2,
        ),
        synthgen.UserArchetype(
            "lin2", CT.S, 16, (1, 1), {CT.S: 6.0}, ("ssim",), 0.3, 4.0
        ),
    ]
    return synthgen.SynthConfig(
        nodes=[synthgen.NodeGroup(8, CT.F, CT.GPU), synthgen.NodeGroup(4, CT.S, CT.MIC)],
        users=users,
        months=2,
        seed=seed,
        noise_std=0.0,
        idle_unit_power={CT.S: 1.5, CT.F: 2.0, CT.GPU: 8.0, CT.MIC: 6.0},
        allow_sharing=False,
        month_slots=400,
    )


def small_pipeline_config(seed: int = 7) -> synthgen.SynthConfig:
    """Two eligible users (one hybrid F+GPU) at a scale fast enough for tests."""
    users = [
        synthgen.UserArchetype(
            "pa", CT.F, 8, (1, 2), {CT.F: 10.0, CT.GPU: 30.0}, ("hyb", "hy2"),
            0.3, 5.0, accel=CT.GPU, accel_units=1,
            amplitude=0.3, period_s=6000.0, interference=0.2,
            name_factors={"hyb": 1.0, "hy2": 1.3},
        ),
        synthgen.UserArchetype(
            "pb", CT.S, 16, (1, 1), {CT.S: 7.0}, ("ssim",),
            0.3, 5.0, amplitude=0.4, period_s=5400.0,
        ),
    ]
    return synthgen.SynthConfig(
        nodes=[synthgen.NodeGroup(6, CT.F, CT.GPU), synthgen.NodeGroup(4, CT.S, CT.MIC)],
        users=users,
        months=2,
        seed=seed,
        noise_std=1.0,
        idle_unit_power={CT.S: 1.5, CT.F: 2.0, CT.GPU: 8.0, CT.MIC: 6.0},
        month_slots=900,
    )


@pytest.fixture(scope="session")
def small_trace():
    return synthgen.generate(small_pipeline_config())


@pytest.fixture(scope="session")
def small_records(small_trace):
    records, quality, idle = attribute_trace(small_trace)
    return records
