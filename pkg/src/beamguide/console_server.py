"""HTTP face of a live run for the browser operator console.

Exposes a state document, a command endpoint feeding the sequencer's
command queue, a server-sent-event stream of state updates, and the
console's static assets. Schemas are documented in docs/console-api.md
and versioned with the wire protocol.
"""

from __future__ import annotations

import json
import math
import mimetypes
import queue
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .planner import Plan
from .sequencer import OperatorCommand, Phase, QueueCommands, SequencerState

COMMAND_NAMES = {c.value for c in OperatorCommand}


class ConsoleHub:
    """Shared state between the run loop and the HTTP handlers."""

    def __init__(self, cell, plan: Plan, commands: QueueCommands):
        self.cell = cell
        self.plan = plan
        self.commands = commands
        self._lock = threading.Lock()
        self._seq = 0
        self._doc = self._build_doc(SequencerState())
        self._subscribers: list[queue.Queue] = []
        self.command_log: list[dict] = []

    def _task_status(self, i: int, state: SequencerState) -> str:
        if state.phase is Phase.DONE or i < state.task_index:
            return "done"
        if i == state.task_index and state.phase in (Phase.MOVING, Phase.PROJECTING):
            return "active"
        return "pending"

    def _build_doc(self, state: SequencerState) -> dict:
        lo, hi = self.cell.mesh.bounds()
        sols = self.plan.solutions
        tasks = [
            {"id": s.target_id, "status": self._task_status(i, state)}
            for i, s in enumerate(sols)
        ]
        current = None
        if state.task_index < len(sols):
            current = sols[state.task_index].target_id
        mark = None
        if state.phase is Phase.PROJECTING and state.task_index < len(sols):
            p = sols[state.task_index].predicted
            d = np.asarray(p.direction, dtype=float)
            n = math.hypot(float(d[0]), float(d[1]))
            mark = {
                "x_m": float(p.point[0]),
                "y_m": float(p.point[1]),
                "dx": float(d[0]) / n if n > 1e-9 else 1.0,
                "dy": float(d[1]) / n if n > 1e-9 else 0.0,
            }
        targets = []
        status_by_id = {t["id"]: t["status"] for t in tasks}
        for t in self.cell.targets:
            targets.append(
                {
                    "id": t.id,
                    "x_m": float(t.point[0]),
                    "y_m": float(t.point[1]),
                    "status": status_by_id.get(t.id, "pending"),
                }
            )
        return {
            "version": 1,
            "phase": state.phase.value,
            "task_index": state.task_index,
            "task_count": len(sols),
            "current_task": current,
            "laser_on": state.laser_on,
            "last_event": state.last_event,
            "seq": self._seq,
            "stations": [
                {
                    "id": s.id,
                    "x_m": float(s.spec.x),
                    "y_m": float(s.spec.y),
                    "yaw_deg": float(s.spec.yaw_deg),
                    "active": s.id == state.station_id,
                }
                for s in self.plan.stations
            ],
            "footprint": {
                "min": [float(lo[0]), float(lo[1])],
                "max": [float(hi[0]), float(hi[1])],
            },
            "targets": targets,
            "mark": mark,
        }

    def update(self, state: SequencerState) -> None:
        with self._lock:
            self._seq += 1
            self._doc = self._build_doc(state)
            payload = json.dumps(self._doc)
            for q in list(self._subscribers):
                try:
                    q.put_nowait(payload)
                except queue.Full:
                    pass

    def state_json(self) -> str:
        with self._lock:
            return json.dumps(self._doc)

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=64)
        with self._lock:
            self._subscribers.append(q)
            q.put_nowait(json.dumps(self._doc))
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def submit_command(self, name: str) -> dict:
        if name not in COMMAND_NAMES:
            return {"ok": False, "error": f"unknown command {name!r}"}
        with self._lock:
            self.command_log.append({"command": name, "t": time.time()})
            n = len(self.command_log)
        self.commands.push(name)
        return {"ok": True, "seq": n}


def _make_handler(hub: ConsoleHub, static_dir: Path | None):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet; the run loop owns stdout
            pass

        def _json(self, code: int, payload: dict | str):
            body = payload if isinstance(payload, str) else json.dumps(payload)
            raw = body.encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def do_GET(self):
            if self.path == "/api/state":
                return self._json(200, hub.state_json())
            if self.path == "/api/command-log":
                return self._json(200, {"commands": hub.command_log})
            if self.path == "/api/events":
                return self._serve_events()
            return self._serve_static()

        def do_POST(self):
            if self.path != "/api/command":
                return self._json(404, {"ok": False, "error": "not found"})
            try:
                length = int(self.headers.get("Content-Length", "0"))
                doc = json.loads(self.rfile.read(length) or b"{}")
                name = doc.get("command", "")
            except (ValueError, json.JSONDecodeError):
                return self._json(400, {"ok": False, "error": "malformed body"})
            result = hub.submit_command(str(name))
            return self._json(200 if result["ok"] else 400, result)

        def _serve_events(self):
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.end_headers()
            q = hub.subscribe()
            try:
                while True:
                    try:
                        payload = q.get(timeout=2.0)
                        chunk = f"event: state\ndata: {payload}\n\n"
                    except queue.Empty:
                        chunk = ": keepalive\n\n"
                    self.wfile.write(chunk.encode("utf-8"))
                    self.wfile.flush()
            except (ConnectionError, BrokenPipeError, OSError):
                pass
            finally:
                hub.unsubscribe(q)

        def _serve_static(self):
            if static_dir is None:
                return self._json(404, {"ok": False, "error": "console assets not built"})
            rel = self.path.lstrip("/") or "index.html"
            path = (static_dir / rel).resolve()
            if not str(path).startswith(str(static_dir.resolve())) or not path.is_file():
                return self._json(404, {"ok": False, "error": "not found"})
            ctype = mimetypes.guess_type(str(path))[0] or "application/octet-stream"
            raw = path.read_bytes()
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

    return Handler


class ConsoleServer:
    def __init__(self, hub: ConsoleHub, host: str = "127.0.0.1", port: int = 0,
                 static_dir: Path | None = None):
        self.hub = hub
        self._httpd = ThreadingHTTPServer((host, port), _make_handler(hub, static_dir))
        self._httpd.daemon_threads = True
        self.host, self.port = self._httpd.server_address[:2]
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    def close(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=2.0)
