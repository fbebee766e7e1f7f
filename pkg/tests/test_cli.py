import json
import os
import subprocess
import sys

import pytest

from caml import cli, comms, info, io

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SMOKE = os.path.join(ROOT, "configs", "smoke.json")


def run(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    p = lambda name: str(d / name)
    codes = [
        run("gen-data", "--config", SMOKE, "--seed", "3", "--out", p("data")),
        run("train-teacher", "--config", SMOKE, "--data", p("data"), "--out", p("teacher.ckpt")),
        run("train-student", "--config", SMOKE, "--data", p("data"), "--teacher", p("teacher.ckpt"), "--out", p("student.ckpt")),
        run("train-baseline", "--config", SMOKE, "--data", p("data"), "--role", "no_kd", "--out", p("nokd.ckpt")),
        run("train-baseline", "--config", SMOKE, "--data", p("data"), "--role", "aml_teacher", "--out", p("amlt.ckpt")),
        run("train-student", "--config", SMOKE, "--data", p("data"), "--teacher", p("amlt.ckpt"), "--role", "aml_student",
            "--out", p("amls.ckpt")),
    ]
    return d, codes


def test_training_pipeline(pipeline, capsys):
    d, codes = pipeline
    assert codes == [0] * 6
    assert json.loads((d / "data" / "manifest.json").read_text())["seed"] == 3
    assert run("eval", "--checkpoint", str(d / "student.ckpt"), "--data", str(d / "data")) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert set(metrics) == {"adr", "eir", "false_alarm"}


def test_student_against_wrong_teacher_is_a_stage_failure(pipeline):
    d, _ = pipeline
    code = run("train-student", "--config", SMOKE, "--data", str(d / "data"), "--teacher", str(d / "amlt.ckpt"),
               "--out", str(d / "bad.ckpt"))
    assert code == cli.EXIT_STAGE


def test_missing_or_truncated_checkpoint(pipeline, tmp_path):
    d, _ = pipeline
    assert run("eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(d / "data")) == cli.EXIT_STAGE
    raw = (d / "teacher.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(raw[: len(raw) // 2])
    assert run("eval", "--checkpoint", str(tmp_path / "cut.ckpt"), "--data", str(d / "data")) == cli.EXIT_STAGE


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"wrld": {}}))
    assert run("gen-data", "--config", str(bad), "--out", str(tmp_path / "x")) == cli.EXIT_CONFIG
    assert run("gen-data", "--config", SMOKE, "--set", "world.n_agents=12", "--out", str(tmp_path / "x")) == cli.EXIT_CONFIG
    assert run("gen-data", "--config", SMOKE, "--set", "train.distill.beta=1", "--out", str(tmp_path / "x")) == cli.EXIT_CONFIG
    assert run("gen-data", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")) == cli.EXIT_CONFIG


def test_seed_fallback_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "41")
    assert run("gen-data", "--config", SMOKE, "--episodes", "4", "--out", str(tmp_path / "a")) == 0
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["seed"] == 41
    assert run("gen-data", "--config", SMOKE, "--episodes", "4", "--seed", "5", "--out", str(tmp_path / "b")) == 0
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 5
    monkeypatch.setenv(cli.SEED_ENV, "forty")
    assert run("gen-data", "--config", SMOKE, "--out", str(tmp_path / "c")) == cli.EXIT_CONFIG


def test_verify_mi(tmp_path, monkeypatch, capsys):
    table = tmp_path / "xor.json"
    info.save_table(info.xor_table(), table)
    assert run("verify-mi", "--table", str(table)) == 0
    assert "I(y;X)=1.000000000000 bits" in capsys.readouterr().out
    world = tmp_path / "world.json"
    world.write_text(json.dumps({"world": {"grid_size": 8, "n_agents": 2}}))
    assert run("verify-mi", "--from-world", str(world), "--seeds", "50") == 0
    table.write_text(json.dumps({"cards": [2], "probs": [0.3, 0.3]}))
    assert run("verify-mi", "--table", str(table)) == cli.EXIT_CONFIG
    assert run("verify-mi") == cli.EXIT_CONFIG

    def broken(t, order=None):
        return info.ChainRuleReport(1.0, [0.5], [1.0], (1,), ["chain rule off"])

    monkeypatch.setattr(info, "chain_rule_check", broken)
    info.save_table(info.copy_table(), table)
    assert run("verify-mi", "--table", str(table)) == cli.EXIT_CHECK


def test_verify_comms(monkeypatch):
    assert run("verify-comms", "--max-agents", "16") == 0
    monkeypatch.setattr(comms, "check_counts", lambda n: ["CENTRALIZED N=2 k=1: 0 != 1"])
    assert run("verify-comms") == cli.EXIT_CHECK


def test_report_writes_outputs(tmp_path):
    out = tmp_path / "r"
    assert run("report", "--config", SMOKE, "--set", "train.repeats=1", "--out", str(out)) == 0
    report = io.load_report(out / "report.json")
    assert "wall_seconds" in report
    assert (out / "metrics.csv").read_text().startswith("seed,role,")
    assert (out / "training_log.csv").read_text().startswith("seed,role,epoch,lr,task_loss,kd_loss,total_loss")


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "caml", "verify-comms", "--max-agents", "4"],
                          capture_output=True, text=True, cwd=ROOT)
    assert proc.returncode == 0 and "PASS" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "caml", "report", "--config", "/nonexistent.json"],
                          capture_output=True, text=True, cwd=ROOT)
    assert proc.returncode == cli.EXIT_CONFIG
