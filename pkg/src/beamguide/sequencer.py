"""Operator-driven task sequencer.

A small state machine walks a plan task by task over the twin link. The
operator steers with four commands (NEXT, PREV, RESTART, STOP); every
command is legal in every phase, either transitioning or recording an
explicit no-op. The laser may only be lit while projecting a mark.

STOP is a software halt: lasers off, no further commands, the arm holds
position (an in-flight move completes, since the wire protocol has no
abort). It is NOT a safety-rated stop.
"""

from __future__ import annotations

import math
import queue
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .arm import ArmModel, fk
from .locate import (
    ACCEPT_RMS,
    LocalizationResult,
    cell_fingerprint,
    localize,
    synthetic_measurements,
)
from .optics import LaserRig, NoHitError, OutOfRangeError, project_mark, verify_mark
from .planner import Plan
from .reporting import ReportRow, RunReport
from .twin import TwinClient, TwinClientError, TwinMessage, encode


class Phase(str, Enum):
    IDLE = "IDLE"
    LOCALIZING = "LOCALIZING"
    AT_STATION = "AT_STATION"
    MOVING = "MOVING"
    PROJECTING = "PROJECTING"
    STOPPED = "STOPPED"
    DONE = "DONE"


class OperatorCommand(str, Enum):
    NEXT = "NEXT"
    PREV = "PREV"
    RESTART = "RESTART"
    STOP = "STOP"


@dataclass(frozen=True)
class SequencerState:
    phase: Phase = Phase.IDLE
    task_index: int = 0  # in [0, task count]; == count only when DONE
    station_id: int = -1
    laser_on: bool = False
    last_event: str = "start"


class TwinDisconnectedError(RuntimeError):
    """Controller link dropped; the run aborts with a partial report."""


class LocalizationStaleError(RuntimeError):
    """Workcell content changed after localization or planning."""


def _station_of(plan: Plan, task_index: int) -> int:
    return plan.solutions[task_index].station_id


def _station_first_task(plan: Plan, station_id: int) -> int:
    for i, sol in enumerate(plan.solutions):
        if sol.station_id == station_id:
            return i
    raise KeyError(station_id)


def _laser_off_messages(plan: Plan, base_id: int = 0) -> list[TwinMessage]:
    devices = sorted({s.device_index for s in plan.solutions}) or [0]
    return [
        TwinMessage(type="LASER", id=base_id + i, device=d, on=False)
        for i, d in enumerate(devices)
    ]


def _state_message(state: SequencerState) -> TwinMessage:
    return TwinMessage(
        type="STATE", id=0, phase=state.phase.value, task=state.task_index
    )


def _move_to(plan: Plan, state: SequencerState, task: int, event: str) -> tuple[SequencerState, list[TwinMessage]]:
    sol = plan.solutions[task]
    new = replace(
        state,
        phase=Phase.MOVING,
        task_index=task,
        station_id=sol.station_id,
        laser_on=False,
        last_event=event,
    )
    msgs = _laser_off_messages(plan)
    msgs.append(
        TwinMessage(type="MOVEJ", id=0, q=tuple(float(x) for x in sol.q), speed=1.0)
    )
    msgs.append(_state_message(new))
    return new, msgs


def _noop(state: SequencerState, event: str) -> tuple[SequencerState, list[TwinMessage]]:
    return replace(state, last_event=event), []


def apply_command(
    state: SequencerState, cmd: OperatorCommand, plan: Plan
) -> tuple[SequencerState, list[TwinMessage]]:
    """Total transition function: every (phase, command) pair is defined.

    Emitted messages are for the caller to route: MOVEJ/LASER go to the
    controller, STATE goes to observers and the event log.
    """
    n = len(plan.solutions)

    if cmd is OperatorCommand.STOP:
        new = replace(state, phase=Phase.STOPPED, laser_on=False, last_event="stop")
        msgs = _laser_off_messages(plan)
        msgs.append(_state_message(new))
        return new, msgs

    phase = state.phase
    i = state.task_index

    if phase in (Phase.IDLE, Phase.LOCALIZING, Phase.MOVING):
        return _noop(state, f"noop-{cmd.value.lower()}-in-{phase.value.lower()}")

    if cmd is OperatorCommand.NEXT:
        if phase is Phase.PROJECTING:
            if i + 1 >= n:
                new = replace(
                    state, phase=Phase.DONE, task_index=n, laser_on=False, last_event="done"
                )
                msgs = _laser_off_messages(plan)
                msgs.append(_state_message(new))
                return new, msgs
            return _move_to(plan, state, i + 1, "next")
        if phase is Phase.AT_STATION:
            return _move_to(plan, state, i, "begin-station")
        if phase is Phase.STOPPED:
            if i >= n:
                new = replace(state, phase=Phase.DONE, task_index=n, last_event="resume-done")
                return new, [_state_message(new)]
            return _move_to(plan, state, i, "resume")
        return _noop(state, "noop-next-when-done")

    if cmd is OperatorCommand.PREV:
        if phase is Phase.PROJECTING:
            if i == 0:
                return _noop(state, "noop-prev-at-first")
            if _station_of(plan, i - 1) != state.station_id:
                return _noop(state, "noop-prev-at-station-start")
            return _move_to(plan, state, i - 1, "prev")
        return _noop(state, f"noop-prev-in-{phase.value.lower()}")

    # RESTART: back to the first task of the current station
    if phase in (Phase.PROJECTING, Phase.AT_STATION, Phase.STOPPED, Phase.DONE):
        sid = state.station_id
        if sid < 0:
            return _noop(state, "noop-restart-before-start")
        first = _station_first_task(plan, sid)
        return _move_to(plan, state, first, "restart-station")
    return _noop(state, f"noop-restart-in-{phase.value.lower()}")


def advance_arrival(
    state: SequencerState, plan: Plan
) -> tuple[SequencerState, list[TwinMessage]]:
    """Internal event: the commanded move finished; light up and project."""
    if state.phase is not Phase.MOVING:
        return _noop(state, "noop-arrival-outside-moving")
    sol = plan.solutions[state.task_index]
    new = replace(state, phase=Phase.PROJECTING, laser_on=True, last_event="arrived")
    msgs = [
        TwinMessage(type="LASER", id=0, device=sol.device_index, on=True),
        _state_message(new),
    ]
    return new, msgs


# ---------------------------------------------------------------------------
# Command sources

class ScriptedCommands:
    """Fixed command list; exhausted when empty."""

    def __init__(self, commands):
        self._commands = [OperatorCommand(c) for c in commands]

    def poll(self) -> OperatorCommand | None:
        if self._commands:
            return self._commands.pop(0)
        return None

    def exhausted(self) -> bool:
        return not self._commands


class NextOnArrival:
    """Endless NEXT: walks the whole plan without an operator."""

    def poll(self) -> OperatorCommand:
        return OperatorCommand.NEXT

    def exhausted(self) -> bool:
        return False


class QueueCommands:
    """Thread-safe source fed by another producer (console, CLI keys)."""

    def __init__(self):
        self._queue: queue.Queue = queue.Queue()
        self._closed = False

    def push(self, cmd: OperatorCommand | str) -> None:
        self._queue.put(OperatorCommand(cmd))

    def close(self) -> None:
        self._closed = True

    def poll(self) -> OperatorCommand | None:
        try:
            return self._queue.get_nowait()
        except queue.Empty:
            return None

    def exhausted(self) -> bool:
        return self._closed and self._queue.empty()


def simulate_localizations(
    cell, plan: Plan, *, noise_std: float = 0.0, rng: np.random.Generator | None = None
) -> dict[int, LocalizationResult]:
    """Localize every plan station from synthetic fixture measurements.

    Stands in for the manual fixture-probing step when running against
    the emulator; noise_std adds realistic measurement error.
    """
    out = {}
    for st in plan.stations:
        measured = synthetic_measurements(
            cell, st.base_pose, st.localization_set, noise_std=noise_std, rng=rng
        )
        out[st.id] = localize(cell, measured)
    return out


# ---------------------------------------------------------------------------
# The run loop

def run(
    cell,
    arm: ArmModel,
    rig: LaserRig,
    plan: Plan,
    client: TwinClient,
    localization: LocalizationResult | dict[int, LocalizationResult],
    commands,
    *,
    poll_s: float = 0.1,
    event_log: list[str] | None = None,
    on_state=None,
) -> RunReport:
    """Drive the plan over the twin link and report achieved accuracy.

    Achieved marks are re-projected from the controller's reported joints
    through each station's localized frame, the same computation a real
    deployment would use.
    """
    if not plan.solutions:
        raise ValueError("plan has no solutions to run")
    fp = cell_fingerprint(cell)
    if plan.cell_fingerprint and plan.cell_fingerprint != fp:
        raise LocalizationStaleError("workcell changed since the plan was made")

    def loc_for(station_id: int) -> LocalizationResult:
        loc = localization[station_id] if isinstance(localization, dict) else localization
        if loc.cell_fingerprint and loc.cell_fingerprint != fp:
            raise LocalizationStaleError(
                f"workcell changed since station {station_id} was localized"
            )
        if loc.rms > ACCEPT_RMS:
            raise ValueError(
                f"localization for station {station_id} was not accepted "
                f"(rms {loc.rms * 1000:.2f} mm)"
            )
        return loc

    for sid in {s.station_id for s in plan.solutions}:
        loc_for(sid)

    log = event_log if event_log is not None else []

    def publish(state: SequencerState):
        log.append(f"{client.transport.now():.3f} {state.phase.value} task={state.task_index} {state.last_event}")
        if on_state is not None:
            on_state(state)

    def send(messages: list[TwinMessage]):
        for m in messages:
            if m.type == "STATE":
                log.append(f"{client.transport.now():.3f} emit {m.phase} task={m.task}")
                continue
            log.append(f"{client.transport.now():.3f} send {encode(m)}")
            try:
                if m.type == "MOVEJ":
                    reply = client.movej(m.q, m.speed)
                    while reply.type == "ERR" and reply.code == "busy":
                        client.transport.idle(poll_s)
                        reply = client.movej(m.q, m.speed)
                    if reply.type == "ERR":
                        raise TwinClientError(f"MOVEJ rejected: {reply.code} {reply.text}")
                elif m.type == "LASER":
                    client.laser(m.device, m.on)
            except (ConnectionError, OSError) as exc:
                raise TwinDisconnectedError(str(exc)) from exc

    try:
        version = client.hello()
    except (ConnectionError, OSError, TwinClientError) as exc:
        raise TwinDisconnectedError(f"handshake failed: {exc}") from exc
    log.append(f"{client.transport.now():.3f} hello version={version}")

    t0 = client.transport.now()
    state = SequencerState()
    publish(state)

    arrivals: dict[str, tuple[int, tuple[float, ...]]] = {}  # target -> (station, q)
    current_station = -1
    pending_cmd: OperatorCommand | None = None

    def enter_station(sid: int):
        nonlocal current_station, state
        state = replace(state, phase=Phase.LOCALIZING, station_id=sid, last_event="localizing")
        publish(state)
        loc_for(sid)
        state = replace(state, phase=Phase.AT_STATION, last_event="localized")
        publish(state)
        current_station = sid

    # bootstrap: first station, first task
    enter_station(_station_of(plan, 0))
    state, msgs = _move_to(plan, state, 0, "begin")
    try:
        send(msgs)
    except TwinDisconnectedError:
        return _build_report(cell, arm, rig, plan, localization, arrivals, client, t0,
                             complete=False)
    publish(state)

    while state.phase is not Phase.DONE:
        if state.phase is Phase.MOVING:
            sol = plan.solutions[state.task_index]
            if sol.station_id != current_station:
                enter_station(sol.station_id)
                state = replace(state, phase=Phase.MOVING, last_event="moving")
            goal = tuple(float(x) for x in sol.q)
            stopped = False
            wait_start = client.transport.now()
            while True:
                try:
                    reported = client.getpos()
                except (ConnectionError, OSError, TwinClientError) as exc:
                    raise TwinDisconnectedError(str(exc)) from exc
                if reported == goal:
                    break
                if client.transport.now() - wait_start > 600.0:
                    raise TwinDisconnectedError(
                        f"move toward task {state.task_index} never arrived"
                    )
                # STOP must not wait for the move; other commands hold
                # until the arm arrives (they no-op while moving anyway)
                if pending_cmd is None:
                    pending_cmd = commands.poll()
                if pending_cmd is OperatorCommand.STOP:
                    state, msgs = apply_command(state, pending_cmd, plan)
                    pending_cmd = None
                    send(msgs)
                    publish(state)
                    stopped = True
                    break
                client.transport.idle(poll_s)
            if stopped:
                continue
            arrivals[sol.target_id] = (sol.station_id, reported)
            state, msgs = advance_arrival(state, plan)
            send(msgs)
            publish(state)
            continue

        cmd = pending_cmd if pending_cmd is not None else commands.poll()
        pending_cmd = None
        if cmd is None:
            if commands.exhausted():
                break  # operator gone; abort with a partial report
            client.transport.idle(poll_s)
            continue
        state, msgs = apply_command(state, cmd, plan)
        send(msgs)
        publish(state)

    return _build_report(
        cell, arm, rig, plan, localization, arrivals, client, t0,
        complete=state.phase is Phase.DONE,
    )


def _build_report(
    cell, arm, rig, plan, localization, arrivals, client, t0, *, complete
) -> RunReport:
    rows = []
    for sol in plan.solutions:
        if sol.target_id not in arrivals:
            continue
        station_id, q_reported = arrivals[sol.target_id]
        loc = localization[station_id] if isinstance(localization, dict) else localization
        target = cell.target_by_id(sol.target_id)
        tool_base = fk(arm, np.array(q_reported))
        tool_wc = loc.pose.invert().compose(tool_base)
        device = rig.devices[sol.device_index]
        try:
            mark = project_mark(tool_wc, device, cell.mesh)
        except (NoHitError, OutOfRangeError):
            rows.append(
                ReportRow(
                    target_id=sol.target_id,
                    nominal_point=target.point,
                    nominal_direction=target.direction,
                    achieved_point=None,
                    achieved_direction=None,
                    pos_err=math.inf,
                    ang_err=math.inf,
                    passed=False,
                )
            )
            continue
        pos_err, ang_err, ok = verify_mark(mark, target)
        rows.append(
            ReportRow(
                target_id=sol.target_id,
                nominal_point=target.point,
                nominal_direction=target.direction,
                achieved_point=mark.point,
                achieved_direction=mark.direction,
                pos_err=pos_err,
                ang_err=ang_err,
                passed=ok,
            )
        )
    return RunReport(
        rows=rows,
        total_time_s=float(client.transport.now() - t0),
        complete=complete,
    )
