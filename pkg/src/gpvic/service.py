"""Live teaching service.

Wraps policy and simulator in sessions behind a small JSON protocol
(documented in PROTOCOL.md): plain request/response endpoints for the
session lifecycle, demo recording, feedback, snapshots and exports, plus a
WebSocket stream that broadcasts one state message per control tick and
accepts feedback messages in the other direction.

Simulated time is authoritative; the background loop paces itself against
the wall clock at the control rate on a best-effort basis, and a ``step``
endpoint advances a paused session deterministically (used by tests and
scripted clients).
"""

from __future__ import annotations

import asyncio
import itertools
import json
import threading

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field

from . import policy as pol
from . import sim

PROTOCOL_VERSION = "1"

__all__ = ["create_app", "PROTOCOL_VERSION", "Session"]

class SessionConfig(BaseModel):
    policy: dict = Field(default_factory=dict)
    environment: dict = Field(default_factory=dict)
    start_position: list[float] | None = None

class FeedbackMessage(BaseModel):
    increment: list[float]
    goal_flag: bool = False
    timestamp: float = 0.0

class DemoSamples(BaseModel):
    times: list[float]
    positions: list[list[float]]

def _build_environment(doc: dict) -> sim.Environment:
    doc = dict(doc)
    kind = doc.pop("kind", "free")
    factory = {
        "free": sim.Environment.free,
        "plug": sim.Environment.plug,
        "box": sim.Environment.box,
        "whiteboard": sim.Environment.whiteboard,
    }.get(kind)
    if factory is None:
        raise ValueError(f"unknown environment kind {kind!r}")
    for key in ("socket_position", "box_position", "push_direction",
                "plane_point", "plane_normal"):
        if key in doc:
            doc[key] = np.asarray(doc[key], dtype=float)
    if "obstacle" in doc and doc["obstacle"] is not None:
        lo, hi = doc["obstacle"]
        doc["obstacle"] = (np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    return factory(**doc)

class Session:
    """One teaching loop: policy, plant, status and the feedback queue."""

    def __init__(self, session_id: str, config: SessionConfig):
        self.id = session_id
        self.lock = threading.Lock()
        cfg_doc = dict(config.policy)
        if "lengthscale_bounds" in cfg_doc:
            cfg_doc["lengthscale_bounds"] = tuple(cfg_doc["lengthscale_bounds"])
        self.policy_config = pol.PolicyConfig(**cfg_doc)
        self.env = _build_environment(config.environment)
        self.start_position = np.asarray(
            config.start_position if config.start_position is not None else [0.3, 0.0, 0.2],
            dtype=float,
        )
        self.policy: pol.PolicyState | None = None
        self.state = sim.initial_state(self.start_position, self.env)
        self.status = "idle"   # idle | demo_recording | running | paused
        self.tick_counter = 0
        self.demos: list[tuple[np.ndarray, np.ndarray]] = []
        self._demo_times: list[float] = []
        self._demo_positions: list[list[float]] = []
        self.log_rows: list[dict] = []
        self.subscribers: set[asyncio.Queue] = set()
        self.error: str | None = None

    # -- lifecycle ---------------------------------------------------------

    def begin_demo(self):
        with self.lock:
            if self.status not in ("idle",):
                raise ValueError(f"cannot record a demo while {self.status}")
            self.status = "demo_recording"
            self._demo_times, self._demo_positions = [], []

    def add_demo_samples(self, times, positions):
        with self.lock:
            if self.status != "demo_recording":
                raise ValueError("no demo recording in progress")
            self._demo_times.extend(float(t) for t in times)
            self._demo_positions.extend([float(v) for v in p] for p in positions)

    def end_demo(self) -> dict:
        with self.lock:
            if self.status != "demo_recording":
                raise ValueError("no demo recording in progress")
            if len(self._demo_times) < 2:
                self.status = "idle"
                raise ValueError("a demo needs at least 2 samples")
            self.demos.append((np.asarray(self._demo_times),
                               np.asarray(self._demo_positions)))
            self.policy = pol.init_from_demos(self.demos, self.policy_config, seed=0)
            self.status = "idle"
            self.state = sim.initial_state(self.start_position, self.env)
            return {"db_sizes": list(self.policy.db_sizes), "n_demos": len(self.demos)}

    def start(self):
        with self.lock:
            if self.policy is None:
                raise ValueError("train a policy before starting the loop")
            if self.status not in ("idle", "paused"):
                raise ValueError(f"cannot start while {self.status}")
            self.status = "running"

    def pause(self):
        with self.lock:
            if self.status != "running":
                raise ValueError(f"cannot pause while {self.status}")
            self.status = "paused"

    def stop(self):
        with self.lock:
            self.status = "idle"
            self.state = sim.initial_state(self.start_position, self.env)
            self.tick_counter = 0
            self.log_rows = []

    # -- control loop ------------------------------------------------------

    def tick(self) -> dict:
        """Advance one control period and return the broadcast message."""
        with self.lock:
            if self.policy is None:
                raise ValueError("no trained policy")
            cmd = pol.query(self.policy, self.state.position)
            row = self._broadcast_row(cmd)
            try:
                self.state = sim.run_control_tick(
                    self.state, cmd, self.env, None, self.policy_config.control_period)
            except sim.SimulationDiverged as exc:
                self.status = "paused"
                self.error = str(exc)
                row["error"] = self.error
            self.tick_counter += 1
            self.log_rows.append(row)
            return row

    def _broadcast_row(self, cmd) -> dict:
        rel = cmd.sigma / self.policy.sigma_max if self.policy.sigma_max > 0 else 1.0
        return {
            "type": "state",
            "protocol_version": PROTOCOL_VERSION,
            "session": self.id,
            "tick": self.tick_counter,
            "t": round(self.tick_counter * self.policy_config.control_period, 9),
            "x": [float(v) for v in self.state.position],
            "v": [float(v) for v in self.state.velocity],
            "dx": [float(v) for v in cmd.attractor_displacement],
            "k_s": [float(v) for v in cmd.stiffness],
            "sigma_rel": float(min(rel, 1.0)),
            "f_stable": [float(v) for v in cmd.f_stable],
            "status": self.status,
        }

    def submit_feedback(self, msg: FeedbackMessage) -> dict:
        # event validation happens before any state checks: a malformed
        # event must never change session state
        event = pol.FeedbackEvent(
            increment=np.asarray(msg.increment, dtype=float),
            goal_flag=msg.goal_flag,
            timestamp=msg.timestamp,
        )
        with self.lock:
            if self.status not in ("running", "paused"):
                raise RuntimeError("feedback needs a running or paused session")
            if self.policy is None:
                raise RuntimeError("no trained policy")
            if event.goal_flag:
                self.policy = pol.mark_goal(self.policy, self.state.position)
            else:
                self.policy = pol.apply_feedback(self.policy, self.state.position, event)
            return {
                "type": "ack",
                "protocol_version": PROTOCOL_VERSION,
                "applied_as": self.policy.counts.last_branch,
                "db_sizes": list(self.policy.db_sizes),
                "at": [float(v) for v in self.state.position],
            }

    def field_snapshot(self, bounds, resolution, slice_axis, slice_value) -> dict:
        with self.lock:
            if self.policy is None:
                raise ValueError("no trained policy to evaluate")
            (lo0, hi0), (lo1, hi1) = bounds
            n0, n1 = resolution
            if n0 < 1 or n1 < 1 or n0 * n1 > 200 * 200:
                raise ValueError("snapshot grid limited to 200x200 cells")
            axes = [a for a in range(3) if a != slice_axis]
            g0 = np.linspace(lo0, hi0, n0)
            g1 = np.linspace(lo1, hi1, n1)
            grid = np.zeros((n0 * n1, 3))
            mesh0, mesh1 = np.meshgrid(g0, g1, indexing="ij")
            grid[:, axes[0]] = mesh0.ravel()
            grid[:, axes[1]] = mesh1.ravel()
            grid[:, slice_axis] = slice_value
            dx, ks, rel, fst = pol.query_batch(self.policy, grid)
            force = ks * dx
            return {
                "type": "field",
                "protocol_version": PROTOCOL_VERSION,
                "axes": axes,
                "slice_axis": slice_axis,
                "slice_value": slice_value,
                "grid0": [float(v) for v in g0],
                "grid1": [float(v) for v in g1],
                "force0": [float(v) for v in force[:, axes[0]]],
                "force1": [float(v) for v in force[:, axes[1]]],
                "sigma_rel": [float(v) for v in rel],
                "f_stable0": [float(v) for v in fst[:, axes[0]]],
                "f_stable1": [float(v) for v in fst[:, axes[1]]],
            }

    def log_csv(self) -> str:
        with self.lock:
            header = ["tick", "t", "x", "y", "z", "vx", "vy", "vz",
                      "dx_x", "dx_y", "dx_z", "k_x", "k_y", "k_z",
                      "sigma_rel", "fst_x", "fst_y", "fst_z"]
            lines = [",".join(header)]
            for row in self.log_rows:
                cells = [str(row["tick"]), repr(row["t"])]
                cells += [repr(v) for v in row["x"]]
                cells += [repr(v) for v in row["v"]]
                cells += [repr(v) for v in row["dx"]]
                cells += [repr(v) for v in row["k_s"]]
                cells.append(repr(row["sigma_rel"]))
                cells += [repr(v) for v in row["f_stable"]]
                lines.append(",".join(cells))
            return "\n".join(lines) + "\n"

def create_app(log_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="gpvic teaching service")
    sessions: dict[str, Session] = {}
    counter = itertools.count(1)
    loops: dict[str, asyncio.Task] = {}
    run_counter = itertools.count(1)

    def archive_log(session: Session):
        if log_dir is None or not session.log_rows:
            return
        from pathlib import Path
        directory = Path(log_dir)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{session.id}_run{next(run_counter)}.csv"
        path.write_text(session.log_csv())

    def get_session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return session

    async def run_loop(session: Session):
        period = session.policy_config.control_period
        loop = asyncio.get_event_loop()
        next_deadline = loop.time()
        while session.status == "running":
            row = await asyncio.to_thread(session.tick)
            dead = set()
            for q in session.subscribers:
                try:
                    q.put_nowait(row)
                except asyncio.QueueFull:
                    dead.add(q)
            session.subscribers -= dead
            next_deadline += period
            delay = next_deadline - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            else:
                next_deadline = loop.time()   # fell behind; do not spiral

    @app.get("/health")
    def health():
        return {"protocol_version": PROTOCOL_VERSION, "sessions": len(sessions)}

    @app.post("/sessions")
    def create_session(config: SessionConfig):
        try:
            session = Session(f"s{next(counter)}", config)
        except (ValueError, TypeError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        sessions[session.id] = session
        return {"protocol_version": PROTOCOL_VERSION, "session": session.id,
                "status": session.status}

    @app.get("/sessions/{session_id}")
    def session_status(session_id: str):
        s = get_session(session_id)
        return {
            "protocol_version": PROTOCOL_VERSION,
            "session": s.id,
            "status": s.status,
            "tick": s.tick_counter,
            "t": s.tick_counter * s.policy_config.control_period,
            "x": [float(v) for v in s.state.position],
            "trained": s.policy is not None,
            "db_sizes": list(s.policy.db_sizes) if s.policy else [],
            "error": s.error,
        }

    @app.delete("/sessions/{session_id}")
    def delete_session(session_id: str):
        s = get_session(session_id)
        archive_log(s)
        s.status = "idle"
        task = loops.pop(session_id, None)
        if task is not None:
            task.cancel()
        del sessions[session_id]
        return {"protocol_version": PROTOCOL_VERSION, "deleted": session_id}

    def _wrap(fn, *args):
        try:
            return fn(*args)
        except ValueError as exc:
            raise HTTPException(status_code=409, detail=str(exc))

    @app.post("/sessions/{session_id}/demo/begin")
    def demo_begin(session_id: str):
        _wrap(get_session(session_id).begin_demo)
        return {"protocol_version": PROTOCOL_VERSION, "status": "demo_recording"}

    @app.post("/sessions/{session_id}/demo/sample")
    def demo_sample(session_id: str, samples: DemoSamples):
        _wrap(get_session(session_id).add_demo_samples, samples.times, samples.positions)
        return {"protocol_version": PROTOCOL_VERSION, "received": len(samples.times)}

    @app.post("/sessions/{session_id}/demo/end")
    def demo_end(session_id: str):
        result = _wrap(get_session(session_id).end_demo)
        return {"protocol_version": PROTOCOL_VERSION, **result}

    @app.post("/sessions/{session_id}/start")
    async def start(session_id: str):
        s = get_session(session_id)
        _wrap(s.start)
        if session_id not in loops or loops[session_id].done():
            loops[session_id] = asyncio.create_task(run_loop(s))
        return {"protocol_version": PROTOCOL_VERSION, "status": s.status}

    @app.post("/sessions/{session_id}/pause")
    def pause(session_id: str):
        s = get_session(session_id)
        _wrap(s.pause)
        return {"protocol_version": PROTOCOL_VERSION, "status": s.status}

    @app.post("/sessions/{session_id}/stop")
    def stop(session_id: str):
        s = get_session(session_id)
        archive_log(s)
        s.stop()
        return {"protocol_version": PROTOCOL_VERSION, "status": s.status}

    @app.post("/sessions/{session_id}/step")
    def step(session_id: str, n: int = 1):
        """Deterministically advance a session that is not free-running."""
        s = get_session(session_id)
        if s.status == "running":
            raise HTTPException(status_code=409, detail="pause the session to step it")
        if s.policy is None:
            raise HTTPException(status_code=409, detail="no trained policy")
        s.status = "paused"
        last = None
        for _ in range(max(1, n)):
            last = s.tick()
        return {"protocol_version": PROTOCOL_VERSION, "state": last}

    @app.post("/sessions/{session_id}/feedback")
    def feedback(session_id: str, msg: FeedbackMessage):
        try:
            return get_session(session_id).submit_feedback(msg)
        except ValueError as exc:        # malformed event, nothing changed
            raise HTTPException(status_code=422, detail=str(exc))
        except RuntimeError as exc:      # wrong session state
            raise HTTPException(status_code=409, detail=str(exc))

    @app.get("/sessions/{session_id}/field")
    def field(session_id: str, lo0: float, hi0: float, lo1: float, hi1: float,
              n0: int = 40, n1: int = 40, slice_axis: int = 2, slice_value: float = 0.0):
        return _wrap(get_session(session_id).field_snapshot,
                     ((lo0, hi0), (lo1, hi1)), (n0, n1), slice_axis, slice_value)

    @app.get("/sessions/{session_id}/policy")
    def export_policy(session_id: str):
        s = get_session(session_id)
        if s.policy is None:
            raise HTTPException(status_code=409, detail="no trained policy")
        return json.loads(pol.policy_to_json(s.policy))

    @app.put("/sessions/{session_id}/policy")
    def import_policy(session_id: str, doc: dict):
        s = get_session(session_id)
        try:
            with s.lock:
                s.policy = pol.policy_from_json(doc)
                s.policy_config = s.policy.config
        except (KeyError, ValueError, TypeError) as exc:
            raise HTTPException(status_code=422, detail=f"invalid policy document: {exc}")
        return {"protocol_version": PROTOCOL_VERSION, "db_sizes": list(s.policy.db_sizes)}

    @app.get("/sessions/{session_id}/log.csv", response_class=PlainTextResponse)
    def log_csv(session_id: str):
        return get_session(session_id).log_csv()

    @app.websocket("/sessions/{session_id}/stream")
    async def stream(ws: WebSocket, session_id: str):
        session = sessions.get(session_id)
        if session is None:
            await ws.close(code=4404)
            return
        await ws.accept()
        queue: asyncio.Queue = asyncio.Queue(maxsize=256)
        session.subscribers.add(queue)
        await ws.send_text(json.dumps({
            "type": "hello",
            "protocol_version": PROTOCOL_VERSION,
            "session": session.id,
            "status": session.status,
        }))

        async def pump_outgoing():
            while True:
                row = await queue.get()
                await ws.send_text(json.dumps(row))

        pump = asyncio.create_task(pump_outgoing())
        try:
            while True:
                text = await ws.receive_text()
                try:
                    doc = json.loads(text)
                    if doc.get("type") == "feedback":
                        msg = FeedbackMessage(
                            increment=doc["increment"],
                            goal_flag=bool(doc.get("goal_flag", False)),
                            timestamp=float(doc.get("timestamp", 0.0)),
                        )
                        ack = session.submit_feedback(msg)
                        await ws.send_text(json.dumps(ack))
                    elif doc.get("type") == "ping":
                        await ws.send_text(json.dumps({
                            "type": "pong",
                            "protocol_version": PROTOCOL_VERSION,
                            "echo": doc.get("echo"),
                        }))
                except (ValueError, KeyError, RuntimeError) as exc:
                    await ws.send_text(json.dumps({
                        "type": "error",
                        "protocol_version": PROTOCOL_VERSION,
                        "detail": str(exc),
                    }))
        except WebSocketDisconnect:
            pass
        finally:
            pump.cancel()
            session.subscribers.discard(queue)

    app.state.sessions = sessions
    return app
