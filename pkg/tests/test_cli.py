"""End-to-end CLI flows, exit codes and manifests."""

import json

import pytest

from jobpower.cli import main

CONFIG_TOML = """
months = 2
seed = 99
noise_std = 0.8
month_slots = 600

[[nodes]]
count = 4
cpu_class = "F"
accelerator = "GPU"

[idle_unit_power]
F = 2.0
GPU = 8.0

[[users]]
user = "cu"
cpu_class = "F"
cores_per_node = 8
node_count = [1, 1]
names = ["sima", "simb"]
arrival_prob = 0.5
mean_len_slots = 4.0
amplitude = 0.2
period_s = 6000.0
[users.base_power]
F = 12.0
[users.name_factors]
sima = 1.0
simb = 1.3
"""

CUT = 600 * 300
GRID = '[[10.0,0.1,0.1]]'


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """One full synth -> attribute -> train -> predict -> evaluate run."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.toml"
    config.write_text(CONFIG_TOML)
    trace_dir = root / "trace"
    jobs_dir = root / "jobs"
    model_dir = root / "models"
    pred_dir = root / "pred"
    eval_dir = root / "eval"
    var_dir = root / "var"

    assert main(["synth", "--config", str(config), "--out", str(trace_dir)]) == 0
    assert main([
        "attribute",
        "--workload", str(trace_dir / "workload.csv"),
        "--power", str(trace_dir / "power.csv"),
        "--nodes", str(trace_dir / "nodes.csv"),
        "--out", str(jobs_dir),
    ]) == 0
    assert main([
        "train",
        "--records", str(jobs_dir / "jobs.csv"),
        "--cut", str(CUT),
        "--model-dir", str(model_dir),
        "--grid", GRID,
    ]) == 0
    assert main([
        "predict",
        "--records", str(jobs_dir / "jobs.csv"),
        "--model-dir", str(model_dir),
        "--out", str(pred_dir),
    ]) == 0
    assert main([
        "evaluate",
        "--predictions", str(pred_dir / "predictions.csv"),
        "--leave-out-user", "cu",
        "--out", str(eval_dir),
    ]) == 0
    assert main([
        "variability",
        "--workload", str(trace_dir / "workload.csv"),
        "--power", str(trace_dir / "power.csv"),
        "--nodes", str(trace_dir / "nodes.csv"),
        "--out", str(var_dir),
    ]) == 0
    return {
        "root": root, "config": config, "trace": trace_dir, "jobs": jobs_dir,
        "models": model_dir, "pred": pred_dir, "eval": eval_dir, "var": var_dir,
    }


class TestSynth:
    def test_outputs_and_manifest(self, cli_run):
        for name in ("nodes.csv", "workload.csv", "power.csv", "truth.csv", "manifest.json"):
            assert (cli_run["trace"] / name).is_file()
        manifest = json.loads((cli_run["trace"] / "manifest.json").read_text())
        assert manifest["subcommand"] == "synth"
        assert "sha256" in manifest["inputs"]["config"]

    def test_missing_config_flag_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--out", "/tmp/x"])
        assert exc.value.code == 2

    def test_rerun_identical_bytes(self, cli_run, tmp_path):
        again = tmp_path / "again"
        assert main(["synth", "--config", str(cli_run["config"]), "--out", str(again)]) == 0
        for name in ("nodes.csv", "workload.csv", "power.csv", "truth.csv"):
            assert (again / name).read_bytes() == (cli_run["trace"] / name).read_bytes()

    def test_bad_config_exit_1(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("months = 1")
        assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1


class TestAttribute:
    def test_outputs(self, cli_run):
        quality = json.loads((cli_run["jobs"] / "quality.json").read_text())
        assert quality["n_records"] > 0
        assert quality["n_dropped"] == 0
        header = (cli_run["jobs"] / "jobs.csv").read_text().splitlines()[0]
        assert header.startswith("grid_time,job_id,user")

    def test_power_gap_reported(self, cli_run, tmp_path):
        power = (cli_run["trace"] / "power.csv").read_text().splitlines()
        busy = next(
            i for i, line in enumerate(power[1:], 1)
            if line.split(",")[2] == "F" and line.split(",")[4] not in ("", "0")
        )
        gap = tmp_path / "gap.csv"
        gap.write_text("\n".join(power[:busy] + power[busy + 1:]) + "\n")
        out = tmp_path / "out"
        assert main([
            "attribute",
            "--workload", str(cli_run["trace"] / "workload.csv"),
            "--power", str(gap),
            "--nodes", str(cli_run["trace"] / "nodes.csv"),
            "--out", str(out),
        ]) == 0
        quality = json.loads((out / "quality.json").read_text())
        assert quality["n_dropped"] > 0

    def test_empty_workload_warning(self, cli_run, tmp_path, capsys):
        empty = tmp_path / "empty.csv"
        empty.write_text("timestamp,job_id,user,job_name,node_id,cores,gpus,mics\n")
        out = tmp_path / "out"
        assert main([
            "attribute",
            "--workload", str(empty),
            "--power", str(cli_run["trace"] / "power.csv"),
            "--nodes", str(cli_run["trace"] / "nodes.csv"),
            "--out", str(out),
        ]) == 0
        assert "empty workload" in capsys.readouterr().err
        assert len((out / "jobs.csv").read_text().splitlines()) == 1

    def test_parse_error_exit_1(self, cli_run, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("timestamp,node_id,component,power_watts,load_units\n0,n000,F,-5,\n")
        assert main([
            "attribute",
            "--workload", str(cli_run["trace"] / "workload.csv"),
            "--power", str(bad),
            "--nodes", str(cli_run["trace"] / "nodes.csv"),
            "--out", str(tmp_path / "out"),
        ]) == 1
        assert "line 2" in capsys.readouterr().err


class TestTrain:
    def test_model_dir_contents(self, cli_run):
        index = json.loads((cli_run["models"] / "index.json").read_text())
        assert index["users"] == ["cu"]
        assert index["cut"] == CUT
        udir = cli_run["models"] / "cu"
        assert (udir / "svr_F.json").is_file()
        assert (udir / "eam.json").is_file()
        assert (udir / "vocab.txt").is_file()

    def test_rerun_byte_identical_models(self, cli_run, tmp_path):
        other = tmp_path / "models2"
        assert main([
            "train",
            "--records", str(cli_run["jobs"] / "jobs.csv"),
            "--cut", str(CUT),
            "--model-dir", str(other),
            "--grid", GRID,
        ]) == 0
        for rel in ("index.json", "cu/svr_F.json", "cu/eam.json", "cu/vocab.txt", "cu/meta.json"):
            assert (other / rel).read_bytes() == (cli_run["models"] / rel).read_bytes()

    def test_cut_before_all_data_exit_1(self, cli_run, tmp_path, capsys):
        assert main([
            "train",
            "--records", str(cli_run["jobs"] / "jobs.csv"),
            "--cut", "0",
            "--model-dir", str(tmp_path / "m"),
            "--grid", GRID,
        ]) == 1
        assert "before the cut" in capsys.readouterr().err

    def test_bad_grid_exit_1(self, cli_run, tmp_path, capsys):
        assert main([
            "train",
            "--records", str(cli_run["jobs"] / "jobs.csv"),
            "--cut", str(CUT),
            "--model-dir", str(tmp_path / "m"),
            "--grid", "not json",
        ]) == 1
        assert "--grid" in capsys.readouterr().err


class TestPredict:
    def test_predictions_for_modeled_user(self, cli_run):
        lines = (cli_run["pred"] / "predictions.csv").read_text().splitlines()
        assert lines[0].startswith("grid_time,job_id,user,model")
        assert len(lines) > 1
        models = {line.split(",")[3] for line in lines[1:]}
        assert models == {"SVR", "EAM"}

    def test_skip_report_empty_for_modeled_only_trace(self, cli_run):
        assert (cli_run["pred"] / "skips.csv").read_text() == "user,reason\n"

    def test_empty_window_warns(self, cli_run, tmp_path, capsys):
        out = tmp_path / "p"
        assert main([
            "predict",
            "--records", str(cli_run["jobs"] / "jobs.csv"),
            "--cut", str(10 * CUT),
            "--model-dir", str(cli_run["models"]),
            "--out", str(out),
        ]) == 0
        assert "no records" in capsys.readouterr().err
        assert len((out / "predictions.csv").read_text().splitlines()) == 1


class TestEvaluate:
    def test_reports_written(self, cli_run):
        report = (cli_run["eval"] / "report.csv").read_text().splitlines()
        assert report[0] == "scope,model,n,nrmse,r2,class"
        assert any(line.startswith("global,SVR,") for line in report)
        assert (cli_run["eval"] / "scatter.csv").is_file()
        leaveout = (cli_run["eval"] / "leaveout.csv").read_text()
        assert "global-without-cu" in leaveout

    def test_perfect_predictions(self, tmp_path):
        text = (
            "grid_time,job_id,user,model,pred_S,pred_M,pred_F,pred_GPU,pred_MIC,"
            "pred_total,truth_total\n"
            "0,j1,u1,SVR,0.0,0.0,100.0,0.0,0.0,100.0,100.0\n"
            "300,j1,u1,SVR,0.0,0.0,150.0,0.0,0.0,150.0,150.0\n"
        )
        pred_file = tmp_path / "p.csv"
        pred_file.write_text(text)
        out = tmp_path / "eval"
        assert main(["evaluate", "--predictions", str(pred_file), "--out", str(out)]) == 0
        report = (out / "report.csv").read_text().splitlines()
        global_row = next(l for l in report if l.startswith("global,"))
        assert global_row == "global,SVR,2,0.0,1.0,very good"

    def test_missing_truth_exit_1(self, tmp_path, capsys):
        text = (
            "grid_time,job_id,user,model,pred_S,pred_M,pred_F,pred_GPU,pred_MIC,"
            "pred_total,truth_total\n"
            "0,j1,u1,SVR,0.0,0.0,100.0,0.0,0.0,100.0,\n"
        )
        pred_file = tmp_path / "p.csv"
        pred_file.write_text(text)
        assert main([
            "evaluate", "--predictions", str(pred_file), "--out", str(tmp_path / "e")
        ]) == 1
        assert "truth" in capsys.readouterr().err


class TestVariability:
    def test_reports(self, cli_run):
        cv = (cli_run["var"] / "cv.csv").read_text().splitlines()
        assert cv[0] == "node,component,avg_cv,n_levels"
        assert len(cv) > 1
        entropy = (cli_run["var"] / "entropy.csv").read_text().splitlines()
        assert entropy[0] == "user,component,entropy,n_points,n_clamped"
        assert any(line.startswith("cu,F,") for line in entropy)


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_unknown_subcommand_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
