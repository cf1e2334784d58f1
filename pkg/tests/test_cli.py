import math
from pathlib import Path

import pytest
import yaml

from beamguide.cli import main
from beamguide.demo import write_demo_files
from beamguide.twin import serve_emulator
from beamguide.arm import default_model


@pytest.fixture(scope="module")
def demo_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("demo")
    write_demo_files(d)
    return d


def args_for(demo_dir, *extra):
    return [
        "--cell", str(demo_dir / "workcell.yaml"),
        "--arm", str(demo_dir / "arm.yaml"),
        "--rig", str(demo_dir / "rig.yaml"),
        *extra,
    ]


def test_help_exits_zero(capsys):
    for argv in (["--help"], ["plan", "--help"], ["run", "--help"], ["validate", "--help"]):
        with pytest.raises(SystemExit) as e:
            main(argv)
        assert e.value.code == 0
    out = capsys.readouterr().out
    assert "--cell" in out


def test_validate_demo(demo_dir, capsys):
    assert main(["validate", *args_for(demo_dir)]) == 0
    out = capsys.readouterr().out
    assert "53 targets" in out


def test_validate_bad_file_exits_one(tmp_path, capsys):
    bad = tmp_path / "cell.yaml"
    bad.write_text("version: 1\nmesh: missing.tri\n")
    assert main(["validate", "--cell", str(bad)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: validation:")


def test_calibrate_roundtrip(demo_dir, tmp_path, capsys):
    out = tmp_path / "rig.yaml"
    code = main([
        "calibrate",
        "--cell", str(demo_dir / "workcell.yaml"),
        "--rig", str(demo_dir / "rig.yaml"),
        "--device", "0",
        "--observations", str(demo_dir / "observations.yaml"),
        "--out", str(out),
    ])
    assert code == 0
    doc = yaml.safe_load(out.read_text())
    fitted = doc["devices"][0]["offset_deg"]
    assert abs(fitted["pitch"] - 0.4) < 0.01
    assert abs(fitted["yaw"] + 0.25) < 0.01


def test_localize_command(demo_dir, tmp_path, capsys):
    out = tmp_path / "loc.yaml"
    code = main([
        "localize",
        "--cell", str(demo_dir / "workcell.yaml"),
        "--measured", str(demo_dir / "measured-inner.yaml"),
        "--out", str(out),
    ])
    assert code == 0
    doc = yaml.safe_load(out.read_text())
    assert doc["rms_m"] < 1e-9
    assert doc["cell_fingerprint"]


@pytest.fixture(scope="module")
def planned(demo_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("plan") / "plan.yaml"
    code = main(["plan", *args_for(demo_dir), "--out", str(out), "--seed", "1"])
    assert code == 0
    return out


def test_plan_counts(demo_dir, planned):
    doc = yaml.safe_load(planned.read_text())
    assert len(doc["stations"]) <= 5
    assert len(doc["solutions"]) == 53
    assert doc["uncovered"] == []


def test_plan_deterministic_bytes(demo_dir, planned, tmp_path):
    again = tmp_path / "plan2.yaml"
    assert main(["plan", *args_for(demo_dir), "--out", str(again), "--seed", "1"]) == 0
    assert again.read_bytes() == planned.read_bytes()


def test_export_program(demo_dir, planned, tmp_path):
    out = tmp_path / "program.twin"
    assert main(["export-program", "--plan", str(planned), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 1 + 3 * 53


def test_run_sim_and_report(demo_dir, planned, tmp_path, capsys):
    report_path = tmp_path / "report.yaml"
    code = main([
        "run", *args_for(demo_dir),
        "--plan", str(planned),
        "--endpoint", "sim:",
        "--script", "next-on-arrival",
        "--out", str(report_path),
    ])
    assert code == 0
    doc = yaml.safe_load(report_path.read_text())
    assert len(doc["rows"]) == 53
    assert doc["summary"]["pass_count"] == 53
    assert doc["summary"]["max_pos_err_m"] <= 0.005
    capsys.readouterr()
    assert main(["report", "--report", str(report_path)]) == 0
    out = capsys.readouterr().out
    assert "rows 53" in out and "pass 53" in out

    # byte-identical rerun with the same seed
    report2 = tmp_path / "report2.yaml"
    assert main([
        "run", *args_for(demo_dir),
        "--plan", str(planned),
        "--endpoint", "sim:",
        "--script", "next-on-arrival",
        "--out", str(report2),
    ]) == 0
    assert report2.read_bytes() == report_path.read_bytes()


def test_run_against_tcp_emulator(demo_dir, planned, tmp_path):
    server = serve_emulator(default_model(), time_scale=2000.0)
    try:
        report_path = tmp_path / "report.yaml"
        code = main([
            "run", *args_for(demo_dir),
            "--plan", str(planned),
            "--endpoint", f"127.0.0.1:{server.port}",
            "--script", "next-on-arrival",
            "--poll-s", "0.005",
            "--out", str(report_path),
        ])
        assert code == 0
        doc = yaml.safe_load(report_path.read_text())
        assert doc["summary"]["pass_count"] == 53
    finally:
        server.close()


def test_report_missing_file_exits_one(capsys):
    assert main(["report", "--report", "/nonexistent/report.yaml"]) == 1


def test_out_dir_env_var(demo_dir, planned, tmp_path, monkeypatch):
    monkeypatch.setenv("BEAMGUIDE_OUT", str(tmp_path))
    assert main(["export-program", "--plan", str(planned)]) == 0
    assert (tmp_path / "program.twin").exists()
