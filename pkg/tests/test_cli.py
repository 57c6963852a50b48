import json
import subprocess
import sys

import pytest
import yaml

from jumpsde import _io, cli

ANCHOR_SIM = cli.ANCHORS["simulate"]


def run_cli(tmp_path, cfg, *flags, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return cli.main(["--config", str(path), *flags])


def load(path):
    return json.loads(path.read_text())


def test_simulate_writes_files_and_resolved_config(tmp_path):
    out = tmp_path / "sim"
    status = run_cli(tmp_path, {"command": "simulate", "reps": 2, "seed": 7}, "--out", str(out))
    assert status == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["config.json", "path_0.csv", "path_1.csv", "stream_0.csv", "stream_1.csv", "summary.json"]
    cfg = load(out / "config.json")
    assert cfg["k"] == 1 and cfg["T"] == 1.0 and cfg["grid_points"] == 0 and cfg["seed"] == 7
    assert cfg["model"]["law"]["family"] == "atom"
    meta, header, rows = _io.read_csv(out / "path_0.csv")
    assert header == ["t", "x_minus", "x", "kind"]
    assert meta["anchor"] == ANCHOR_SIM
    assert rows[0][3] == "start"
    summary = load(out / "summary.json")
    assert summary["anchor"] == ANCHOR_SIM and len(summary["data"]) == 2


def test_flags_override_config(tmp_path):
    out = tmp_path / "o"
    cfg = {"command": "simulate", "seed": 1, "T": 2.0, "k": 3, "x0": 0.5, "output": str(tmp_path / "ignored")}
    status = run_cli(tmp_path, cfg, "--seed", "9", "-T", "0.5", "--k", "2", "--x0", "0.25", "--out", str(out), "--format", "json")
    assert status == 0
    resolved = load(out / "config.json")
    assert (resolved["seed"], resolved["T"], resolved["k"], resolved["x0"], resolved["format"]) == (9, 0.5, 2, 0.25, "json")
    assert (out / "path_0.json").exists()
    assert not (tmp_path / "ignored").exists()


def test_check_integrability_power(tmp_path):
    out = tmp_path / "ci"
    cfg = {"command": "check-integrability", "model": {"family": "lfv", "law": {"family": "power", "alpha": 1.5}}}
    assert run_cli(tmp_path, cfg, "--out", str(out)) == 0
    data = load(out / "integrability_report.json")["data"]
    assert (data["c31"], data["c32"], data["c33"]) == (True, True, False)
    assert abs(data["values"]["c32"] - 2.0) <= 1e-6
    assert data["values"]["c33"] == "inf"


def test_tanaka_scripted(tmp_path):
    out = tmp_path / "tk"
    events = [[0.1, 1.0], [0.3, -0.5], [0.5, 2.0], [0.7, -1.5], [0.9, 0.25]]
    cfg = {"command": "tanaka", "model": {"family": "scripted", "events": events}, "levels": 100, "format": "json"}
    assert run_cli(tmp_path, cfg, "--out", str(out)) == 0
    entries = load(out / "tanaka.json")["data"]
    assert len(entries) == 100
    assert max(abs(e["residual"]) for e in entries) <= 1e-12
    assert load(out / "summary.json")["data"]["max_abs_residual"] <= 1e-12


def test_couple_summary(tmp_path):
    out = tmp_path / "cp"
    cfg = {"command": "couple", "model": {"family": "lfv", "law": {"family": "power", "zeta": 0.5}}, "k": 3, "reps": 10}
    assert run_cli(tmp_path, cfg, "--out", str(out)) == 0
    s = load(out / "summary.json")["data"]
    assert s["corrections_all_zero"] and s["max_solution_all_ok"] and s["order_violations"] == 0
    assert s["max_identity_residual"] <= 1e-12


def test_check_monotone_reflection(tmp_path):
    out = tmp_path / "mono"
    cfg = {"command": "check-monotone", "model": {"family": "reflection"}, "marks": 10, "grid": 50}
    assert run_cli(tmp_path, cfg, "--out", str(out)) == 0
    assert load(out / "monotone_report.json")["data"]["status"] == "falsified"
    cfg = {"command": "check-monotone", "k": 2, "marks": 100, "grid": 100}
    assert run_cli(tmp_path, cfg, "--out", str(tmp_path / "mono2")) == 0
    assert load(tmp_path / "mono2" / "monotone_report.json")["data"]["status"] == "verified"


def test_every_output_names_an_anchor(tmp_path):
    for command in cli.COMMANDS:
        out = tmp_path / command
        cfg = {"command": command, "reps": 100 if command == "ks" else 2, "T": 0.25}
        if command == "tanaka":
            cfg["model"] = {"family": "additive", "rate": 5.0}
        if command == "check-monotone":
            cfg.update(marks=20, grid=20)
        if command == "ladder":
            cfg.update(model={"family": "lfv", "law": {"family": "power"}}, kmin=2, kmax=3)
        assert run_cli(tmp_path, cfg, "--out", str(out), name=f"{command}.yaml") == 0, command
        for f in out.iterdir():
            if f.name == "config.json":
                continue
            if f.suffix == ".json":
                assert load(f)["anchor"] == cli.ANCHORS[command], f
            else:
                meta, _, _ = _io.read_csv(f)
                assert meta["anchor"] == cli.ANCHORS[command], f


@pytest.mark.parametrize(
    "cfg",
    [
        {"T": -1.0},
        {"T": "soon"},
        {"k": 0},
        {"reps": 0},
        {"seed": -5},
        {"format": "xml"},
        {"command": "dance"},
        {"model": {"family": "nope"}},
        {"model": {"family": "lfv", "law": {"family": "nope"}}},
        {"command": "ks", "reps": 50},
        {"command": "ladder", "kmin": 3, "kmax": 2},
        {"command": "tanaka", "model": {"family": "scripted", "events": []}},
    ],
)
def test_invalid_config_exit_2(tmp_path, capsys, cfg):
    status = run_cli(tmp_path, cfg, "--out", str(tmp_path / "x"))
    assert status == 2
    err = json.loads(capsys.readouterr().err)
    assert err["status"] == 2 and err["kind"] == "invalid-config" and err["error"]


def test_unparseable_config_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("command: [unclosed\n")
    assert cli.main(["--config", str(bad)]) == 2
    assert json.loads(capsys.readouterr().err)["status"] == 2
    assert cli.main(["--config", str(tmp_path / "missing.yaml")]) == 2


def test_bad_flag_exit_2(capsys):
    assert cli.main(["--seed", "abc"]) == 2


def test_engine_abort_exit_3(tmp_path, capsys):
    cfg = {
        "command": "simulate",
        # b(x) = x^2 from x0 = 1 explodes at t = 1, before the only jump
        "model": {"family": "scripted", "events": [[1.9, 0.5]], "drift": {"coeffs": [0, 0, 1]}},
        "x0": 1.0,
        "T": 2.0,
    }
    assert run_cli(tmp_path, cfg, "--out", str(tmp_path / "boom")) == 3
    err = json.loads(capsys.readouterr().err)
    assert err["status"] == 3 and err["kind"] == "engine-abort"
    assert "time" in err["diagnostic"] and "state" in err["diagnostic"]


def test_console_entry_point(tmp_path):
    out = tmp_path / "ep"
    proc = subprocess.run(
        [sys.executable, "-m", "jumpsde.cli", "--command", "check-integrability", "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (out / "integrability_report.json").exists()


def test_csv_line_endings(tmp_path):
    out = tmp_path / "le"
    assert run_cli(tmp_path, {"command": "probe", "reps": 3}, "--out", str(out)) == 0
    raw = (out / "probe.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
