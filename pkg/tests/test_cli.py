"""End-to-end command paths: files written, exit codes, reproducibility."""

import json

import numpy as np
import pytest

from flockgrf import (
    GroupSpec,
    ParamBundle,
    ReferenceTrajectory,
    RobotState,
    Scenario,
    cli,
    scenario_to_dict,
    vec3,
)

pytestmark = pytest.mark.usefixtures("clean_env")


@pytest.fixture
def clean_env(monkeypatch):
    monkeypatch.delenv("FLOCKGRF_OUT_DIR", raising=False)


def run_args(out, *extra):
    return ["run", "--scenario", "doorway-n2", "--duration", "1.0",
            "--out", str(out), *extra]


# ---------- the run command ----------


def test_run_writes_outputs(tmp_path):
    out = tmp_path / "r"
    assert cli.main(run_args(out)) == 0
    assert (out / "trajectory.csv").exists()
    assert (out / "metrics.txt").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["format"] == "run-manifest-v1"
    assert man["method"] == "heuristic"
    assert man["seed"] == 0
    assert man["scenario"]["format"] == "scenario-v1"


def test_run_prints_summary(tmp_path, capsys):
    cli.main(run_args(tmp_path / "r"))
    outtxt = capsys.readouterr().out
    assert "wrote" in outtxt
    assert "violations=0" in outtxt
    assert "r_dev_avg=" in outtxt


def test_run_reproducible_across_threads(tmp_path):
    for name, extra in (("a", ()), ("b", ()), ("c", ("--threads", "2"))):
        assert cli.main(run_args(tmp_path / name, "--strip-timing", *extra)) == 0
    a = (tmp_path / "a" / "trajectory.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert a == (tmp_path / "c" / "trajectory.csv").read_bytes()


def test_run_honors_env_outdir(tmp_path, monkeypatch):
    monkeypatch.setenv("FLOCKGRF_OUT_DIR", str(tmp_path / "fromenv"))
    assert cli.main(["run", "--scenario", "doorway-n2", "--duration", "0.2"]) == 0
    assert (tmp_path / "fromenv" / "trajectory.csv").exists()


def test_run_belief_trace(tmp_path):
    out = tmp_path / "r"
    assert cli.main(run_args(out, "--belief-trace")) == 0
    trace = (out / "belief_trace.txt").read_text().splitlines()
    assert trace and trace[0].startswith("tick=0 robot=0 ")
    assert all("chosen=" in ln for ln in trace[:5])


# ---------- failure exit codes ----------


def test_bad_scenario_exits_2(tmp_path):
    assert cli.main(["run", "--scenario", "missing.json", "--out", str(tmp_path)]) == 2
    assert cli.main(["run", "--scenario", "hallway", "--out", str(tmp_path)]) == 2
    garbage = tmp_path / "garbage.json"
    garbage.write_text("{not json")
    assert cli.main(["run", "--scenario", str(garbage), "--out", str(tmp_path)]) == 2


def test_missing_csv_exits_2(tmp_path):
    assert cli.main(["metrics", str(tmp_path / "missing.csv")]) == 2


def test_unwritable_outdir_exits_3(tmp_path):
    blocker = tmp_path / "plainfile"
    blocker.write_text("hi")
    assert cli.main(run_args(blocker)) == 3


def head_on_scenario_file(tmp_path):
    """Two opposed robots too fast to brake: guaranteed intrusion by tick 1."""
    mk = lambda p, v: (RobotState(vec3(*p), vec3(*v)),)
    ref = lambda p: ReferenceTrajectory(np.array([p], dtype=float), np.array([0.0]))
    sc = Scenario("head-on", (
        GroupSpec(mk((0.0, 0.0, 1.0), (0.3, 0, 0)), ref((0.0, 0.0, 1.0)), ParamBundle()),
        GroupSpec(mk((0.246, 0.0, 1.0), (-0.3, 0, 0)), ref((0.246, 0.0, 1.0)), ParamBundle()),
    ), (), 0.15)
    path = tmp_path / "headon.json"
    path.write_text(json.dumps(scenario_to_dict(sc)))
    return path


def test_check_flag_gates_exit_code(tmp_path, capsys):
    path = head_on_scenario_file(tmp_path)
    rc = cli.main(["run", "--scenario", str(path), "--out", str(tmp_path / "chk"),
                   "--check"])
    assert rc == 4
    assert "violations=" in capsys.readouterr().out
    rc = cli.main(["run", "--scenario", str(path), "--out", str(tmp_path / "nochk")])
    assert rc == 0  # still reported, just not fatal


# ---------- offline metrics ----------


def test_metrics_offline_matches_run(tmp_path, capsys):
    out = tmp_path / "r"
    assert cli.main(run_args(out)) == 0
    capsys.readouterr()
    rc = cli.main(["metrics", str(out / "trajectory.csv"),
                   "--manifest", str(out / "manifest.json")])
    assert rc == 0
    printed = capsys.readouterr().out.strip()
    assert printed == (out / "metrics.txt").read_text().strip()


# ---------- scenario emit ----------


def test_emitted_scenario_runs(tmp_path):
    emitted = tmp_path / "doorway.json"
    assert cli.main(["scenario", "emit", "doorway-n2", "--out", str(emitted)]) == 0
    doc = json.loads(emitted.read_text())
    assert doc["format"] == "scenario-v1"
    assert cli.main(["run", "--scenario", str(emitted), "--duration", "0.3",
                     "--out", str(tmp_path / "r")]) == 0


def test_manifest_reproduces_run(tmp_path):
    first = tmp_path / "first"
    assert cli.main(run_args(first, "--strip-timing")) == 0
    second = tmp_path / "second"
    assert cli.main(["run", "--scenario", str(first / "manifest.json"),
                     "--out", str(second)]) == 0
    assert (first / "trajectory.csv").read_bytes() == \
        (second / "trajectory.csv").read_bytes()


# ---------- sweeps ----------


def test_sweep_writes_table(tmp_path):
    out = tmp_path / "sw"
    rc = cli.main(["sweep", "--scenario", "doorway-n2", "--values", "0.2,1.0",
                   "--duration", "1.0", "--out", str(out)])
    assert rc == 0
    text = (out / "sweep.txt").read_text()
    lines = text.strip().splitlines()
    assert "k_u" in lines[0] and "mean_candidates" in lines[0]
    cands = [float(ln.split()[1]) for ln in lines[1:]]
    assert cands == sorted(cands)
    assert cands[-1] == pytest.approx(125.0)


def test_sweep_rejects_out_of_range_values(tmp_path):
    rc = cli.main(["sweep", "--scenario", "doorway-n2", "--values", "0.2,1.5",
                   "--out", str(tmp_path)])
    assert rc == 2
