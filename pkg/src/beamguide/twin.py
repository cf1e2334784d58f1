"""Controller link: line protocol, motion emulator, server and client.

One JSON object per line over a stream socket (schema in docs/protocol.md).
The emulator executes constant-velocity joint moves against either the
wall clock or a stepped simulation clock, so everything above it can be
tested without hardware and without real-time waits.
"""

from __future__ import annotations

import json
import math
import socket
import threading
import time
from dataclasses import dataclass, replace

import numpy as np

from .arm import ArmModel, JointLimitError, check_limits, joint_move_duration

PROTOCOL_VERSION = "1"
MESSAGE_TYPES = ("HELLO", "MOVEJ", "GETPOS", "POS", "ACK", "ERR", "LASER", "STATE")
REQUEST_TYPES = ("HELLO", "MOVEJ", "GETPOS", "LASER")
MAX_DEVICES = 4


class ProtocolError(ValueError):
    """Base for wire-format rejections."""

    code = "protocol"


class MalformedMessageError(ProtocolError):
    code = "malformed"


class UnknownTypeError(ProtocolError):
    code = "unknown-type"


class BadArityError(ProtocolError):
    code = "bad-arity"


@dataclass(frozen=True)
class TwinMessage:
    type: str
    id: int
    q: tuple[float, ...] | None = None
    speed: float | None = None
    device: int | None = None
    on: bool | None = None
    code: str | None = None
    text: str | None = None
    version: str | None = None
    phase: str | None = None
    task: int | None = None

    def __post_init__(self):
        if self.q is not None:
            try:
                object.__setattr__(self, "q", tuple(float(x) for x in self.q))
            except (TypeError, ValueError) as exc:
                raise MalformedMessageError("joint values must be numbers") from exc
        if self.speed is not None and isinstance(self.speed, (int, float)) and not isinstance(self.speed, bool):
            object.__setattr__(self, "speed", float(self.speed))
        _validate_message(self)


def _require(cond: bool, exc_cls, msg: str):
    if not cond:
        raise exc_cls(msg)


def _validate_message(m: TwinMessage) -> None:
    _require(m.type in MESSAGE_TYPES, UnknownTypeError, f"unknown message type {m.type!r}")
    _require(
        isinstance(m.id, int) and not isinstance(m.id, bool) and m.id >= 0,
        MalformedMessageError,
        "id must be a non-negative integer",
    )
    if m.type in ("MOVEJ", "POS"):
        _require(m.q is not None, BadArityError, f"{m.type} requires a joint array")
        _require(len(m.q) == 6, BadArityError, f"{m.type} requires exactly 6 joints, got {len(m.q)}")
        _require(
            all(isinstance(x, float) and math.isfinite(x) for x in m.q),
            MalformedMessageError,
            "joint values must be finite numbers",
        )
    if m.type == "MOVEJ":
        _require(
            isinstance(m.speed, float) and math.isfinite(m.speed) and 0.0 < m.speed <= 1.0,
            MalformedMessageError,
            "speed must be a number in (0, 1]",
        )
    if m.type == "LASER":
        _require(
            isinstance(m.device, int) and not isinstance(m.device, bool) and m.device >= 0,
            MalformedMessageError,
            "device must be a non-negative integer",
        )
        _require(isinstance(m.on, bool), MalformedMessageError, "on must be a boolean")
    if m.type == "ERR":
        _require(
            isinstance(m.code, str) and isinstance(m.text, str),
            MalformedMessageError,
            "ERR requires code and text strings",
        )
    if m.type == "STATE":
        _require(
            isinstance(m.phase, str)
            and isinstance(m.task, int)
            and not isinstance(m.task, bool),
            MalformedMessageError,
            "STATE requires a phase string and task integer",
        )


_FIELD_ORDER = ("type", "id", "q", "speed", "device", "on", "code", "text", "version", "phase", "task")


def encode(m: TwinMessage) -> str:
    """One line of canonical JSON, fields in fixed order, no newline."""
    doc = {}
    for name in _FIELD_ORDER:
        value = getattr(m, name)
        if value is None:
            continue
        doc[name] = list(value) if name == "q" else value
    return json.dumps(doc, separators=(",", ":"))


def decode(line: str | bytes) -> TwinMessage:
    """Parse and validate one protocol line; never lets junk through."""
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedMessageError(f"not valid UTF-8: {exc}") from exc
    try:
        doc = json.loads(line)
    except (json.JSONDecodeError, RecursionError) as exc:
        raise MalformedMessageError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedMessageError("message must be a JSON object")
    unknown = set(doc) - set(_FIELD_ORDER)
    if unknown:
        raise MalformedMessageError(f"unknown fields {sorted(unknown)}")
    if "type" not in doc or "id" not in doc:
        raise MalformedMessageError("message requires type and id")
    if not isinstance(doc["type"], str):
        raise MalformedMessageError("type must be a string")
    if doc["type"] not in MESSAGE_TYPES:
        raise UnknownTypeError(f"unknown message type {doc['type']!r}")
    q = doc.get("q")
    if q is not None:
        if not isinstance(q, list):
            raise MalformedMessageError("q must be an array")
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in q):
            raise MalformedMessageError("q entries must be numbers")
        q = tuple(float(x) for x in q)
    speed = doc.get("speed")
    if speed is not None:
        if not isinstance(speed, (int, float)) or isinstance(speed, bool):
            raise MalformedMessageError("speed must be a number")
        speed = float(speed)
    for name, typ in (("device", int), ("task", int)):
        if name in doc and (not isinstance(doc[name], typ) or isinstance(doc[name], bool)):
            raise MalformedMessageError(f"{name} must be an integer")
    for name in ("code", "text", "version", "phase"):
        if name in doc and not isinstance(doc[name], str):
            raise MalformedMessageError(f"{name} must be a string")
    if "on" in doc and not isinstance(doc["on"], bool):
        raise MalformedMessageError("on must be a boolean")
    if not isinstance(doc["id"], int) or isinstance(doc["id"], bool):
        raise MalformedMessageError("id must be an integer")
    return TwinMessage(
        type=doc["type"],
        id=doc["id"],
        q=q,
        speed=speed,
        device=doc.get("device"),
        on=doc.get("on"),
        code=doc.get("code"),
        text=doc.get("text"),
        version=doc.get("version"),
        phase=doc.get("phase"),
        task=doc.get("task"),
    )


# ---------------------------------------------------------------------------
# Motion emulator

@dataclass(frozen=True)
class EmulatorState:
    q: tuple[float, ...]
    goal: tuple[float, ...]
    speed: float
    moving: bool
    lasers: tuple[bool, ...]
    clock: float


def initial_state(q0=None) -> EmulatorState:
    q = tuple(float(x) for x in (q0 if q0 is not None else np.zeros(6)))
    return EmulatorState(q=q, goal=q, speed=1.0, moving=False, lasers=(False,) * MAX_DEVICES, clock=0.0)


def emulator_step(state: EmulatorState, dt: float, speeds) -> EmulatorState:
    """Advance every joint toward its goal at constant speed, clamped there.

    Joints never overshoot: each step moves at most speed * vmax * dt and
    lands exactly on the goal.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not state.moving:
        return replace(state, clock=state.clock + dt)
    speeds = np.asarray(speeds, dtype=float)
    q = np.array(state.q)
    goal = np.array(state.goal)
    delta = goal - q
    limit = state.speed * speeds * dt
    q = q + np.clip(delta, -limit, limit)
    arrived = bool(np.array_equal(q, goal))
    return replace(
        state,
        q=tuple(float(x) for x in q),
        moving=not arrived,
        clock=state.clock + dt,
    )


class Emulator:
    """Single controller: owns one EmulatorState, answers protocol requests."""

    def __init__(self, arm: ArmModel, q0=None):
        self.arm = arm
        self._state = initial_state(q0)
        self._lock = threading.Lock()

    @property
    def state(self) -> EmulatorState:
        with self._lock:
            return self._state

    def step(self, dt: float) -> EmulatorState:
        with self._lock:
            self._state = emulator_step(self._state, dt, self.arm.joint_speeds)
            return self._state

    def move_duration(self, goal, speed: float) -> float:
        with self._lock:
            return joint_move_duration(
                np.array(self._state.q), np.asarray(goal, dtype=float),
                self.arm.joint_speeds, speed,
            )

    def handle(self, msg: TwinMessage) -> TwinMessage:
        """Reply to one request; every request gets exactly one reply."""
        if msg.type not in REQUEST_TYPES:
            return TwinMessage(
                type="ERR", id=msg.id, code="unexpected-type",
                text=f"{msg.type} is not a request",
            )
        with self._lock:
            if msg.type == "HELLO":
                return TwinMessage(type="ACK", id=msg.id, version=PROTOCOL_VERSION)
            if msg.type == "GETPOS":
                return TwinMessage(type="POS", id=msg.id, q=self._state.q)
            if msg.type == "LASER":
                if msg.device >= MAX_DEVICES:
                    return TwinMessage(
                        type="ERR", id=msg.id, code="bad-device",
                        text=f"device index {msg.device} out of range",
                    )
                lasers = list(self._state.lasers)
                lasers[msg.device] = msg.on
                self._state = replace(self._state, lasers=tuple(lasers))
                return TwinMessage(type="ACK", id=msg.id)
            # MOVEJ
            if self._state.moving:
                return TwinMessage(
                    type="ERR", id=msg.id, code="busy", text="a move is in progress",
                )
            try:
                check_limits(self.arm, np.array(msg.q))
            except JointLimitError as exc:
                return TwinMessage(type="ERR", id=msg.id, code="joint-limit", text=str(exc))
            already_there = msg.q == self._state.q
            self._state = replace(
                self._state, goal=msg.q, speed=msg.speed, moving=not already_there,
            )
            return TwinMessage(type="ACK", id=msg.id)

    def handle_line(self, line: str | bytes) -> str:
        """Decode one request line and encode the reply; errors become ERR."""
        try:
            msg = decode(line)
        except ProtocolError as exc:
            return encode(TwinMessage(type="ERR", id=0, code=exc.code, text=str(exc)))
        return encode(self.handle(msg))


# ---------------------------------------------------------------------------
# Transports and client

class LoopbackTransport:
    """In-process link to an Emulator with a stepped simulation clock.

    Lines still pass through encode/decode, so the wire format is
    exercised end to end; idle() advances simulated time instead of
    sleeping.
    """

    def __init__(self, emulator: Emulator, sim_dt: float = 0.05):
        self.emulator = emulator
        self.sim_dt = sim_dt
        self._pending: list[str] = []

    def send_line(self, line: str) -> None:
        self._pending.append(self.emulator.handle_line(line))

    def recv_line(self) -> str:
        if not self._pending:
            raise ConnectionError("no reply pending")
        return self._pending.pop(0)

    def idle(self, seconds: float) -> None:
        remaining = seconds
        while remaining > 1e-12:
            dt = min(self.sim_dt, remaining)
            self.emulator.step(dt)
            remaining -= dt

    def now(self) -> float:
        return self.emulator.state.clock

    def close(self) -> None:
        pass


class TcpTransport:
    """Line-delimited client socket."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self.sock.makefile("rwb")

    def send_line(self, line: str) -> None:
        self._file.write(line.encode("utf-8") + b"\n")
        self._file.flush()

    def recv_line(self) -> str:
        raw = self._file.readline()
        if not raw:
            raise ConnectionError("emulator closed the connection")
        return raw.decode("utf-8").rstrip("\n")

    def idle(self, seconds: float) -> None:
        time.sleep(seconds)

    def now(self) -> float:
        return time.monotonic()

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self.sock.close()


class TwinClientError(RuntimeError):
    """Unexpected reply or broken link."""


class TwinClient:
    """FIFO request/reply client; ids increase monotonically."""

    def __init__(self, transport):
        self.transport = transport
        self._next_id = 1
        self.log: list[tuple[str, str]] = []  # (sent line, received line)

    def request(self, msg_type: str, **payload) -> TwinMessage:
        msg = TwinMessage(type=msg_type, id=self._next_id, **payload)
        self._next_id += 1
        line = encode(msg)
        self.transport.send_line(line)
        reply_line = self.transport.recv_line()
        self.log.append((line, reply_line))
        reply = decode(reply_line)
        if reply.id != msg.id:
            raise TwinClientError(f"reply id {reply.id} does not match request {msg.id}")
        return reply

    def hello(self) -> str:
        reply = self.request("HELLO")
        if reply.type != "ACK":
            raise TwinClientError(f"HELLO rejected: {reply}")
        return reply.version or ""

    def movej(self, q, speed: float = 1.0) -> TwinMessage:
        return self.request("MOVEJ", q=tuple(float(x) for x in q), speed=float(speed))

    def getpos(self) -> tuple[float, ...]:
        reply = self.request("GETPOS")
        if reply.type != "POS":
            raise TwinClientError(f"GETPOS rejected: {reply}")
        return reply.q

    def laser(self, device: int, on: bool) -> TwinMessage:
        return self.request("LASER", device=int(device), on=bool(on))

    def wait_arrival(self, goal, poll_s: float = 0.05, timeout_s: float = 600.0) -> tuple[float, ...]:
        """Poll GETPOS until the reported joints land exactly on the goal."""
        goal = tuple(float(x) for x in goal)
        start = self.transport.now()
        while True:
            q = self.getpos()
            if q == goal:
                return q
            if self.transport.now() - start > timeout_s:
                raise TwinClientError(f"move did not arrive within {timeout_s} s")
            self.transport.idle(poll_s)

    def close(self) -> None:
        self.transport.close()


# ---------------------------------------------------------------------------
# TCP server

class EmulatorServer:
    """Serves one Emulator over TCP, one connection at a time.

    Motion advances on the wall clock (scaled by time_scale) via a
    background stepping thread.
    """

    def __init__(self, arm: ArmModel, host: str = "127.0.0.1", port: int = 0, time_scale: float = 1.0):
        self.emulator = Emulator(arm)
        self.time_scale = time_scale
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self._stop = threading.Event()
        self._threads = [
            threading.Thread(target=self._accept_loop, daemon=True),
            threading.Thread(target=self._clock_loop, daemon=True),
        ]
        for t in self._threads:
            t.start()

    def _clock_loop(self):
        last = time.monotonic()
        while not self._stop.is_set():
            time.sleep(0.005)
            now = time.monotonic()
            dt = (now - last) * self.time_scale
            last = now
            if dt > 0:
                self.emulator.step(dt)

    def _accept_loop(self):
        self._listener.settimeout(0.2)
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            with conn:
                f = conn.makefile("rwb")
                try:
                    for raw in f:
                        reply = self.emulator.handle_line(raw.rstrip(b"\n"))
                        f.write(reply.encode("utf-8") + b"\n")
                        f.flush()
                except (ConnectionError, OSError, ValueError):
                    pass

    def close(self):
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        for t in self._threads:
            t.join(timeout=2.0)


def serve_emulator(arm: ArmModel, host: str = "127.0.0.1", port: int = 0, time_scale: float = 1.0) -> EmulatorServer:
    return EmulatorServer(arm, host, port, time_scale)


def connect(endpoint: str, *, arm: ArmModel | None = None, sim_dt: float = 0.05) -> TwinClient:
    """Open a twin link: 'sim:' for an in-process emulator, else 'host:port'."""
    if endpoint == "sim:" or endpoint == "sim":
        if arm is None:
            raise ValueError("sim endpoint needs an arm model")
        return TwinClient(LoopbackTransport(Emulator(arm), sim_dt=sim_dt))
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must be 'sim:' or 'host:port', got {endpoint!r}")
    return TwinClient(TcpTransport(host, int(port)))


# ---------------------------------------------------------------------------
# Program export: a plan as a replayable message sequence

def export_program(plan, speed: float = 1.0) -> str:
    """Serialize a plan into wire messages: HELLO, then per target
    MOVEJ / LASER on / LASER off."""
    lines = []
    mid = 1
    lines.append(encode(TwinMessage(type="HELLO", id=mid)))
    for sol in plan.solutions:
        mid += 1
        lines.append(
            encode(
                TwinMessage(
                    type="MOVEJ", id=mid,
                    q=tuple(float(x) for x in sol.q), speed=float(speed),
                )
            )
        )
        mid += 1
        lines.append(encode(TwinMessage(type="LASER", id=mid, device=sol.device_index, on=True)))
        mid += 1
        lines.append(encode(TwinMessage(type="LASER", id=mid, device=sol.device_index, on=False)))
    return "\n".join(lines) + "\n"


def load_program(text: str) -> list[TwinMessage]:
    return [decode(line) for line in text.splitlines() if line.strip()]
