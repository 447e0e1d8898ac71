import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from avsafety.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, EXIT_RUNTIME, main
from avsafety.config import ConfigError, RunConfig, config_from_dict, load_config
from avsafety.runner import TRACE_DIR

ECHO = Path(__file__).resolve().parents[1] / "demos" / "echo_policy.py"


def write_config(path: Path, **kw) -> Path:
    path.write_text(yaml.safe_dump(kw))
    return path


# ---------------------------------------------------------------- config


def test_config_rejects_unknown_keys_and_bad_values(tmp_path):
    with pytest.raises(ConfigError, match="unknown config keys: colour"):
        config_from_dict({"colour": "red"})
    for bad in ({"mode": "dit"}, {"budget": 0}, {"parallelism": 1.5}, {"seed": -1}, {"threshold": 0},
                {"policy": "reckless"}, {"nade": 3}, {"suite": "missing.yaml"}, {"network": "nowhere.yaml"}):
        with pytest.raises(ConfigError):
            config_from_dict(bad, tmp_path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
    (tmp_path / "broken.yaml").write_text("mode: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "broken.yaml")


def test_config_paths_resolve_against_the_config_file(tmp_path):
    sub = tmp_path / "cfg"
    sub.mkdir()
    (sub / "beh.yaml").write_text("errors: {lead_vehicle: 0.001}\n")
    cfg = load_config(write_config(sub / "run.yaml", mode="dit-nde", behavior="beh.yaml", policy="cmd:./x"))
    assert Path(cfg.behavior) == sub / "beh.yaml"
    assert cfg.policy == "cmd:./x"  # command lines are left alone
    assert cfg.behavior_dict()["errors"]["lead_vehicle"] == 0.001
    assert cfg.sim_mode == "nde"
    assert config_from_dict(cfg.to_dict()) == cfg


def test_overrides_are_validated():
    cfg = RunConfig().validate()
    assert cfg.with_overrides(seed=None, budget=7).budget == 7
    with pytest.raises(ConfigError):
        cfg.with_overrides(parallelism=0)


# ---------------------------------------------------------------- exit codes


def test_dlt_exit_codes(tmp_path, capsys):
    code = main(["dlt", "--scenario", "cut_in", "--policy", "flawed", "--out", str(tmp_path / "bad")])
    out = capsys.readouterr().out
    assert code == EXIT_FAIL and "DLT verdict: FAIL" in out
    assert out.splitlines()[0].split()[0] == "scenario"
    code = main(["dlt", "--scenario", "cut_in", "--policy", "surrogate-idm", "--out", str(tmp_path / "good")])
    assert code == EXIT_OK
    summary = json.loads((tmp_path / "good" / "dlt_summary.json").read_text())
    assert summary["verdict"] == "P"
    assert main(["report", str(tmp_path / "good")]) == EXIT_OK
    assert "DLT verdict: P" in capsys.readouterr().out


def test_config_errors_exit_2(tmp_path):
    assert main(["dlt", "--config", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG
    assert main(["dlt", "--scenario", "no_such_scenario", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["dit", "--budget", "0", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["dit", "--policy", "reckless"]) == EXIT_CONFIG
    assert main(["fly"]) == EXIT_CONFIG
    cfg = write_config(tmp_path / "dit.yaml", mode="dit-nde")
    assert main(["dlt", "--config", str(cfg)]) == EXIT_CONFIG


@pytest.fixture(scope="module")
def dit_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("dit")
    cfg = write_config(base / "run.yaml", mode="dit-nade", horizon=6.0, checkpoint_every=1,
                       stop_on_convergence=False, seed=3)
    out = base / "out"
    assert main(["dit", "--config", str(cfg), "--budget", "2", "--out", str(out)]) == EXIT_OK
    return out


def test_dit_writes_report_and_traces(dit_dir):
    rep = json.loads((dit_dir / "report.json").read_text())
    assert rep["mode"] == "nade" and rep["n"] == 2
    traces = sorted((dit_dir / TRACE_DIR).glob("*.jsonl"))
    assert len(traces) == 2
    assert (dit_dir / "episodes.csv").is_file() and (dit_dir / "convergence.csv").is_file()


def test_report_regeneration_is_byte_identical(dit_dir, tmp_path, capsys):
    assert main(["report", str(dit_dir), "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "report.json").read_bytes() == (dit_dir / "report.json").read_bytes()


def test_replay_exit_codes(dit_dir, tmp_path, capsys):
    trace = sorted((dit_dir / TRACE_DIR).glob("*.jsonl"))[0]
    assert main(["replay", str(trace)]) == EXIT_OK
    assert main(["replay", str(trace), "--open-loop", "--out", str(tmp_path / "r.jsonl")]) == EXIT_OK
    assert (tmp_path / "r.jsonl").read_bytes() == trace.read_bytes()
    lines = trace.read_text().splitlines()
    step = json.loads(lines[2])
    step["digest"] = "0" * len(step["digest"])
    lines[2] = json.dumps(step, sort_keys=True, separators=(",", ":"))
    tampered = tmp_path / "tampered.jsonl"
    tampered.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["replay", str(tampered)]) == EXIT_FAIL
    assert "line 2" in capsys.readouterr().out
    garbage = tmp_path / "garbage.jsonl"
    garbage.write_text("this is not a trace\n")
    assert main(["replay", str(garbage)]) == EXIT_CONFIG
    assert main(["replay", str(tmp_path / "absent.jsonl")]) == EXIT_CONFIG


def test_dying_external_policy_exits_3(tmp_path):
    policy = f"cmd:{sys.executable} {ECHO} --misbehave die"
    code = main(["dit", "--mode", "nde", "--budget", "1", "--policy", policy, "--out", str(tmp_path)])
    assert code == EXIT_RUNTIME


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "avsafety.cli", "dlt", "--config", str(tmp_path / "x.yaml")],
                         capture_output=True, text=True)
    assert res.returncode == EXIT_CONFIG
    assert "configuration error" in res.stderr
