"""Command-line entry point: synth | attribute | train | predict | evaluate | variability.

Exit codes: 0 success, 1 data error, 2 usage error. Every subcommand writes a
manifest.json next to its outputs with input digests and resolved arguments,
so identical manifests imply identical outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__, attribution, evaluate, pipeline, synthgen, trace, variability
from .regress import RegressionError, SvrParams


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, subcommand: str, inputs: Dict[str, Path], args: Dict) -> None:
    doc = {
        "subcommand": subcommand,
        "tool_version": __version__,
        "inputs": {
            name: {"path": str(p), "sha256": _sha256(p)} for name, p in inputs.items()
        },
        "args": args,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(
        json.dumps(doc, sort_keys=True, separators=(",", ":"))
    )


def _parse_grid(text: Optional[str]) -> Optional[List[SvrParams]]:
    if text is None:
        return None
    try:
        points = json.loads(text)
        grid = [SvrParams(C=float(c), gamma=float(g), epsilon=float(e)) for c, g, e in points]
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise RegressionError(f"bad --grid value (expected [[C,gamma,epsilon],...]): {exc}")
    if not grid:
        raise RegressionError("--grid must contain at least one point")
    return grid


def _load_inputs(args):
    nodes = trace.parse_node_config(Path(args.nodes).read_text())
    nmap = trace.node_map(nodes)
    workload = trace.parse_workload(Path(args.workload).read_text(), nmap)
    power = trace.parse_power(Path(args.power).read_text(), nmap)
    return nodes, nmap, workload, power


def cmd_synth(args) -> int:
    config = synthgen.config_from_toml(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    out = Path(args.out)
    generated = synthgen.generate(config)
    generated.write(out)
    _write_manifest(
        out, "synth", {"config": Path(args.config)},
        {"seed": config.seed, "out": str(out)},
    )
    if generated.skipped_jobs:
        print(f"warning: {generated.skipped_jobs} arrivals skipped (no free nodes)",
              file=sys.stderr)
    return 0


def cmd_attribute(args) -> int:
    nodes, nmap, workload, power = _load_inputs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not workload:
        print("warning: empty workload, no job power records", file=sys.stderr)
        (out / "jobs.csv").write_text(",".join(attribution.JOB_RECORD_HEADER) + "\n")
        (out / "quality.json").write_text(
            json.dumps({"n_records": 0, "n_dropped": 0, "n_clamped": 0})
        )
    else:
        observations = trace.align(workload, power, nodes)
        used = attribution.used_components(observations, nmap)
        idle = attribution.estimate_idle_power(observations, used)
        records, quality = attribution.build_job_power_records(observations, idle, nmap)
        (out / "jobs.csv").write_text(attribution.write_job_records(records))
        (out / "quality.json").write_text(
            json.dumps(
                {
                    "n_records": quality.n_records,
                    "n_dropped": len(quality.dropped),
                    "n_clamped": quality.n_clamped,
                    "idle_unit_power": {c.value: w for c, w in sorted(
                        idle.items(), key=lambda kv: kv[0].value)},
                },
                sort_keys=True,
            )
        )
    _write_manifest(
        out, "attribute",
        {"workload": Path(args.workload), "power": Path(args.power), "nodes": Path(args.nodes)},
        {"out": str(out)},
    )
    return 0


def cmd_train(args) -> int:
    records = attribution.read_job_records(Path(args.records).read_text())
    grid = _parse_grid(args.grid)
    month = pipeline.train_models(
        records, args.cut, grid=grid, jobs=args.jobs
    )
    model_dir = Path(args.model_dir)
    pipeline.save_month(month, model_dir)
    _write_manifest(
        model_dir, "train", {"records": Path(args.records)},
        {"cut": args.cut, "jobs": args.jobs, "grid": args.grid,
         "model_dir": str(model_dir)},
    )
    print(f"trained {len(month.trained)} users, skipped {len(month.skips)}")
    return 0


def cmd_predict(args) -> int:
    records = attribution.read_job_records(Path(args.records).read_text())
    month = pipeline.load_month(args.model_dir)
    cut = args.cut if args.cut is not None else month.cut
    window = [
        r for r in records
        if r.grid_time >= cut and (args.end is None or r.grid_time < args.end)
    ]
    predictions = pipeline.apply_models(month.trained, window)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "predictions.csv").write_text(pipeline.write_predictions(predictions))
    skipped_users = sorted({r.user for r in window} - set(month.trained))
    (out / "skips.csv").write_text(
        "user,reason\n" + "".join(f"{u},no-model\n" for u in skipped_users)
    )
    _write_manifest(
        out, "predict", {"records": Path(args.records)},
        {"cut": cut, "end": args.end, "model_dir": str(args.model_dir), "out": str(out)},
    )
    if not window:
        print("warning: no records in the prediction window", file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    predictions = pipeline.read_predictions(Path(args.predictions).read_text())
    if not predictions or any(p.truth_total is None for p in predictions):
        raise pipeline.PipelineError("predictions lack truth values, cannot evaluate")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = evaluate.evaluate_scope(predictions, "global")
    per_user = evaluate.evaluate_scope(predictions, "user")
    (out / "report.csv").write_text(evaluate.write_report(reports + per_user))
    (out / "scatter.csv").write_text(evaluate.write_scatter(per_user))
    if args.leave_out_user:
        left = evaluate.leave_out_user(predictions, args.leave_out_user)
        (out / "leaveout.csv").write_text(evaluate.write_report(left))
    _write_manifest(
        out, "evaluate", {"predictions": Path(args.predictions)},
        {"leave_out_user": args.leave_out_user, "out": str(out)},
    )
    return 0


def cmd_variability(args) -> int:
    nodes, nmap, workload, power = _load_inputs(args)
    observations = trace.align(workload, power, nodes)
    used = attribution.used_components(observations, nmap)
    idle = attribution.estimate_idle_power(observations, used)
    records, _ = attribution.build_job_power_records(observations, idle, nmap)
    report = variability.analyze(power, records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "cv.csv").write_text(variability.write_cv_report(report.cv_rows))
    (out / "entropy.csv").write_text(variability.write_entropy_report(report.entropy_rows))
    skipped = [r for r in report.cv_rows if r.avg_cv is None]
    for r in skipped:
        print(
            f"warning: no load-resolved CV for {r.node_id}/{r.component.value}",
            file=sys.stderr,
        )
    _write_manifest(
        out, "variability",
        {"workload": Path(args.workload), "power": Path(args.power), "nodes": Path(args.nodes)},
        {"out": str(out)},
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jobpower",
        description="Attribute node power to HPC jobs and predict future job power.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate a synthetic trace set")
    p.add_argument("--config", required=True, help="TOML generator config")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("attribute", help="compute per-job power records")
    p.add_argument("--workload", required=True)
    p.add_argument("--power", required=True)
    p.add_argument("--nodes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("train", help="train monthly models on pre-cut history")
    p.add_argument("--records", required=True, help="job power record file")
    p.add_argument("--cut", type=int, required=True, help="cut date, epoch seconds")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--grid", default=None, help="JSON [[C,gamma,epsilon],...] override")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="apply trained models to a month of records")
    p.add_argument("--records", required=True)
    p.add_argument("--cut", type=int, default=None, help="month start (default: model cut)")
    p.add_argument("--end", type=int, default=None, help="month end, exclusive")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="NRMSE / R^2 reports from predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--leave-out-user", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("variability", help="CV-at-fixed-load and entropy reports")
    p.add_argument("--workload", required=True)
    p.add_argument("--power", required=True)
    p.add_argument("--nodes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_variability)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        trace.TraceError,
        attribution.AttributionError,
        RegressionError,
        pipeline.PipelineError,
        synthgen.GenerationError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
