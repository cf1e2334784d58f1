"""Command-line entry point.

Workflow order mirrors the development flow the package models:
validate inputs, calibrate the beams, localize the base, plan stations
and aims, export or execute the program, and render the accuracy report.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import yaml

from . import arm as arm_mod
from . import locate as locate_mod
from . import optics as optics_mod
from . import planner as planner_mod
from . import reporting as reporting_mod
from . import sequencer as sequencer_mod
from . import twin as twin_mod
from . import workcell as workcell_mod
from .geom import RigidTransform, rotation_to_rpy, rpy_to_rotation

DEFAULT_SEED = 1
OUT_DIR_ENV = "BEAMGUIDE_OUT"

VALIDATION_ERRORS = (
    workcell_mod.ParseError,
    workcell_mod.ValidationError,
    optics_mod.ImplausibleOffsetError,
    locate_mod.TooFewPointsError,
    locate_mod.UnknownFixtureError,
    FileNotFoundError,
    ValueError,
    KeyError,
)


def fail(code: str, message: str, exit_code: int) -> int:
    print(f"error: {code}: {message}", file=sys.stderr)
    return exit_code


def note(message: str) -> None:
    print(message)


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.chmod(tmp, 0o644)  # mkstemp defaults to owner-only
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def out_path(arg: str | None, default_name: str) -> Path:
    if arg:
        return Path(arg)
    base = Path(os.environ.get(OUT_DIR_ENV, "."))
    return base / default_name


def load_cell(path: str) -> workcell_mod.Workcell:
    p = Path(path)
    return workcell_mod.load_workcell(p.read_text(), base_dir=p.parent)


def load_arm_file(path: str | None) -> arm_mod.ArmModel:
    if path is None:
        return arm_mod.default_model()
    return arm_mod.load_arm(Path(path).read_text())


def load_rig_file(path: str) -> optics_mod.LaserRig:
    return optics_mod.load_rig(Path(path).read_text())


# ---------------------------------------------------------------------------
# Subcommands

def cmd_validate(args) -> int:
    cell = load_cell(args.cell)
    note(
        f"workcell ok: {len(cell.mesh)} triangles, {len(cell.targets)} targets, "
        f"{len(cell.fixtures)} fixtures, {len(cell.stations)} candidate stations"
    )
    if args.arm:
        model = load_arm_file(args.arm)
        note(f"arm ok: {model.name}, reach {model.max_reach:.3f} m")
    if args.rig:
        rig = load_rig_file(args.rig)
        note(f"rig ok: {len(rig.devices)} device(s)")
    return 0


def cmd_calibrate(args) -> int:
    cell = load_cell(args.cell)
    rig = load_rig_file(args.rig)
    if not 0 <= args.device < len(rig.devices):
        return fail("validation", f"rig has no device {args.device}", 1)
    doc = yaml.safe_load(Path(args.observations).read_text())
    if not isinstance(doc, dict) or doc.get("version") != 1:
        return fail("parse-error", "observations file must declare 'version: 1'", 1)
    observations = []
    for entry in doc.get("observations", []):
        tool_doc = entry["tool"]
        rpy = [math.radians(a) for a in tool_doc.get("rpy_deg", [0, 0, 0])]
        tool = RigidTransform(rpy_to_rotation(*rpy), tool_doc.get("origin_m", [0, 0, 0]))
        observations.append(
            (tool, np.asarray(entry["nominal_m"], float), np.asarray(entry["observed_m"], float))
        )
    device = rig.devices[args.device]
    fit = optics_mod.calibrate_offset(observations, cell.mesh, device.with_offset(optics_mod.BeamOffset()))
    note(
        f"fitted offset: pitch {math.degrees(fit.offset.pitch):+.4f} deg, "
        f"yaw {math.degrees(fit.offset.yaw):+.4f} deg, rms {fit.rms * 1000:.3f} mm"
    )
    devices = list(rig.devices)
    devices[args.device] = device.with_offset(fit.offset)
    target = Path(args.out) if args.out else Path(args.rig)
    atomic_write(target, optics_mod.save_rig(optics_mod.LaserRig(tuple(devices))))
    note(f"wrote {target}")
    return 0


def cmd_localize(args) -> int:
    cell = load_cell(args.cell)
    measured = locate_mod.load_measurements(Path(args.measured).read_text())
    result = locate_mod.localize(cell, measured, threshold=args.threshold_mm / 1000.0)
    roll, pitch, yaw = rotation_to_rpy(result.pose.rotation)
    t = result.pose.translation
    note(
        f"workcell in base frame: xyz ({t[0]:+.4f}, {t[1]:+.4f}, {t[2]:+.4f}) m, "
        f"rpy ({math.degrees(roll):+.2f}, {math.degrees(pitch):+.2f}, {math.degrees(yaw):+.2f}) deg"
    )
    note(f"rms {result.rms * 1000:.3f} mm over {len(result.per_point_residuals)} fixtures")
    if args.out:
        doc = {
            "version": 1,
            "pose": {
                "origin_m": [float(x) for x in t],
                "rpy_deg": [math.degrees(roll), math.degrees(pitch), math.degrees(yaw)],
            },
            "rms_m": float(result.rms),
            "residuals_m": [float(x) for x in result.per_point_residuals],
            "cell_fingerprint": result.cell_fingerprint,
        }
        atomic_write(Path(args.out), yaml.safe_dump(doc, sort_keys=False))
        note(f"wrote {args.out}")
    return 0


def cmd_plan(args) -> int:
    cell = load_cell(args.cell)
    model = load_arm_file(args.arm)
    rig = load_rig_file(args.rig)
    plan = planner_mod.make_plan(
        cell, model, rig, seed=args.seed,
        device_index=args.device, dwell_s=args.dwell_s, base_move_s=args.base_move_s,
    )
    target = out_path(args.out, "plan.yaml")
    atomic_write(target, planner_mod.save_plan(plan))
    note(
        f"plan: {len(plan.stations)} stations, {len(plan.solutions)} aims, "
        f"{len(plan.uncovered)} uncovered, cycle {plan.estimated_cycle_s:.0f} s"
    )
    note(f"wrote {target}")
    if plan.uncovered:
        print(f"warning: uncovered: {', '.join(plan.uncovered)}", file=sys.stderr)
        return 2
    return 0


def cmd_export_program(args) -> int:
    plan = planner_mod.load_plan(Path(args.plan).read_text())
    target = out_path(args.out, "program.twin")
    atomic_write(target, twin_mod.export_program(plan, speed=args.speed))
    note(f"wrote {target} ({3 * len(plan.solutions) + 1} messages)")
    return 0


def cmd_serve_emulator(args) -> int:
    model = load_arm_file(args.arm)
    server = twin_mod.serve_emulator(model, host=args.host, port=args.port, time_scale=args.time_scale)
    note(f"emulator listening on {server.host}:{server.port} (time scale {args.time_scale}x)")
    try:
        import time as _time

        while True:
            _time.sleep(0.5)
    except KeyboardInterrupt:
        note("shutting down")
    finally:
        server.close()
    return 0


def cmd_run(args) -> int:
    cell = load_cell(args.cell)
    model = load_arm_file(args.arm)
    rig = load_rig_file(args.rig)
    plan = planner_mod.load_plan(Path(args.plan).read_text())
    client = twin_mod.connect(args.endpoint, arm=model, sim_dt=args.sim_dt)

    rng = np.random.default_rng(args.seed)
    localizations = sequencer_mod.simulate_localizations(
        cell, plan, noise_std=args.loc_noise_mm / 1000.0, rng=rng
    )

    console = None
    hub = None
    if args.console:
        commands: sequencer_mod.QueueCommands | object
        commands = sequencer_mod.QueueCommands()
        from .console_server import ConsoleHub, ConsoleServer

        static_dir = Path(args.console_dir) if args.console_dir else _default_console_dir()
        hub = ConsoleHub(cell, plan, commands)
        console = ConsoleServer(hub, host=args.console_host, port=args.console_port,
                                static_dir=static_dir)
        note(f"console on http://{console.host}:{console.port}/")
    elif args.script == "next-on-arrival":
        commands = sequencer_mod.NextOnArrival()
    else:
        return fail("validation", "choose --script next-on-arrival or --console", 1)

    log: list[str] = []
    try:
        report = sequencer_mod.run(
            cell, model, rig, plan, client, localizations, commands,
            poll_s=args.poll_s, event_log=log,
            on_state=(hub.update if hub is not None else None),
        )
    finally:
        client.close()
        if console is not None:
            console.close()

    target = out_path(args.out, "report.yaml")
    atomic_write(target, reporting_mod.write_report(report, "structured"))
    note(reporting_mod.write_report(report, "table"))
    note(f"wrote {target}")
    if args.log:
        atomic_write(Path(args.log), "\n".join(log) + "\n")
        note(f"wrote {args.log}")
    if not report.complete:
        return fail("runtime", "run ended before the plan completed (partial report)", 2)
    if report.pass_count != len(report.rows):
        return fail("runtime", "some targets failed verification", 2)
    return 0


def cmd_report(args) -> int:
    report = reporting_mod.parse_report(Path(args.report).read_text())
    if args.format == "structured":
        print(reporting_mod.write_report(report, "structured"), end="")
    else:
        print(reporting_mod.write_report(report, "table"), end="")
    return 0


def _default_console_dir() -> Path | None:
    here = Path(__file__).resolve()
    for root in (here.parents[2], here.parents[1]):
        candidate = root / "console" / "dist"
        if candidate.is_dir():
            return candidate
    return None


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="beamguide",
        description="Laser-projection assembly guidance: plan, emulate, run, report.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="load and validate workcell/arm/rig files")
    v.add_argument("--cell", required=True, help="workcell YAML file")
    v.add_argument("--arm", help="arm parameter YAML file")
    v.add_argument("--rig", help="laser rig YAML file")
    v.set_defaults(fn=cmd_validate)

    c = sub.add_parser("calibrate", help="fit a device boresight offset from observations")
    c.add_argument("--cell", required=True, help="workcell YAML (for the mesh)")
    c.add_argument("--rig", required=True, help="laser rig YAML file")
    c.add_argument("--device", type=int, default=0, help="device index in the rig")
    c.add_argument("--observations", required=True, help="observations YAML file")
    c.add_argument("--out", help="output rig file (default: overwrite --rig)")
    c.set_defaults(fn=cmd_calibrate)

    l = sub.add_parser("localize", help="fit the base pose from measured fixture points")
    l.add_argument("--cell", required=True)
    l.add_argument("--measured", required=True, help="measured-points YAML file")
    l.add_argument("--threshold-mm", type=float, default=2.0, help="acceptance rms")
    l.add_argument("--out", help="write the localization result YAML here")
    l.set_defaults(fn=cmd_localize)

    pl = sub.add_parser("plan", help="choose stations and solve every aim")
    pl.add_argument("--cell", required=True)
    pl.add_argument("--arm", help="arm file (default: built-in 0.9 m model)")
    pl.add_argument("--rig", required=True)
    pl.add_argument("--seed", type=int, default=DEFAULT_SEED)
    pl.add_argument("--device", type=int, default=0, help="rig device used for marking")
    pl.add_argument("--dwell-s", type=float, default=planner_mod.DEFAULT_DWELL_S,
                    help="seconds per mark while the operator works (invented default)")
    pl.add_argument("--base-move-s", type=float, default=planner_mod.DEFAULT_BASE_MOVE_S,
                    help="seconds per station relocation (invented default)")
    pl.add_argument("--out", help="plan file (default: $BEAMGUIDE_OUT/plan.yaml)")
    pl.set_defaults(fn=cmd_plan)

    e = sub.add_parser("export-program", help="serialize a plan into wire messages")
    e.add_argument("--plan", required=True)
    e.add_argument("--speed", type=float, default=1.0)
    e.add_argument("--out", help="program file (default: $BEAMGUIDE_OUT/program.twin)")
    e.set_defaults(fn=cmd_export_program)

    s = sub.add_parser("serve-emulator", help="serve the controller emulator over TCP")
    s.add_argument("--arm", help="arm file (default: built-in model)")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=4850)
    s.add_argument("--time-scale", type=float, default=1.0, help="motion speed-up factor")
    s.set_defaults(fn=cmd_serve_emulator)

    r = sub.add_parser("run", help="execute a plan against a twin endpoint")
    r.add_argument("--cell", required=True)
    r.add_argument("--arm", help="arm file (default: built-in model)")
    r.add_argument("--rig", required=True)
    r.add_argument("--plan", required=True)
    r.add_argument("--endpoint", default="sim:", help="'sim:' or host:port")
    r.add_argument("--script", choices=["next-on-arrival"], help="scripted operator")
    r.add_argument("--console", action="store_true", help="serve the operator console")
    r.add_argument("--console-host", default="127.0.0.1")
    r.add_argument("--console-port", type=int, default=4860)
    r.add_argument("--console-dir", help="console static assets directory")
    r.add_argument("--loc-noise-mm", type=float, default=0.0, help="synthetic fixture noise")
    r.add_argument("--seed", type=int, default=DEFAULT_SEED)
    r.add_argument("--poll-s", type=float, default=0.1)
    r.add_argument("--sim-dt", type=float, default=0.05)
    r.add_argument("--out", help="report file (default: $BEAMGUIDE_OUT/report.yaml)")
    r.add_argument("--log", help="write the event log here")
    r.set_defaults(fn=cmd_run)

    rp = sub.add_parser("report", help="render a structured report")
    rp.add_argument("--report", required=True)
    rp.add_argument("--format", choices=["table", "structured"], default="table")
    rp.set_defaults(fn=cmd_report)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (
        # operational failures first: some (wire rejections, degenerate
        # geometry) derive from ValueError and must not read as bad input
        arm_mod.NoConvergenceError,
        planner_mod.NoSolutionError,
        locate_mod.ResidualTooHighError,
        locate_mod.RankDeficientError,
        optics_mod.NoHitError,
        optics_mod.OutOfRangeError,
        sequencer_mod.TwinDisconnectedError,
        sequencer_mod.LocalizationStaleError,
        twin_mod.TwinClientError,
        twin_mod.ProtocolError,
        ConnectionError,
    ) as exc:
        return fail("runtime", str(exc), 2)
    except VALIDATION_ERRORS as exc:
        return fail("validation", str(exc), 1)
    except RuntimeError as exc:
        return fail("runtime", str(exc), 2)


if __name__ == "__main__":
    sys.exit(main())
