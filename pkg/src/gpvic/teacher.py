"""Scripted demonstrator/corrector and the experiment harness.

The scripted teacher stands in for the human at desk scale: it records
smooth task demonstrations, then supplies proportional directional
feedback against a phase-scheduled reference whenever the tracking error
leaves a dead band (or a task force target is unmet), and finally marks
the goal.  Episodes tick policy and plant at the control rate and log
everything needed for the reported metrics:

* goal error            distance from the final position to the task goal
* data efficiency       share of feedback events absorbed without growing
                        the database
* feedback time         time spent actively correcting
* peak speed            for the contact-loss study
* loop consistency      max pairwise RMSE between wiping loops
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from dataclasses import dataclass, field, replace

import numpy as np

from . import policy as pol
from . import sim

__all__ = [
    "Demonstration",
    "ReferencePath",
    "CorrectorConfig",
    "ScriptedCorrector",
    "EpisodeLog",
    "scripted_demo",
    "run_episode",
    "metrics",
    "loop_consistency",
    "experiment",
    "ExperimentReport",
    "PRESETS",
    "load_demo_file",
]

TASKS = ("unplug", "box", "wipe", "plug_insert")


class ArtifactSink:
    """Writes per-episode logs and policy snapshots into a run directory."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def log(self, name: str, episode_log: "EpisodeLog") -> None:
        episode_log.to_csv(self.directory / f"{name}.csv")

    def policy(self, name: str, state: pol.PolicyState) -> None:
        (self.directory / f"{name}.json").write_text(pol.policy_to_json(state))


def _emit_log(sink, name, log):
    if sink is not None:
        sink.log(name, log)


def _emit_policy(sink, name, state):
    if sink is not None:
        sink.policy(name, state)

# shared desk geometry [m]
SOCKET = np.array([0.5, 0.0, 0.2])
UNPLUG_GOAL = np.array([0.2, 0.0, 0.15])
BOX_START = np.array([0.3, -0.1, 0.1])
BOX_GOAL = np.array([0.3, 0.25, 0.1])
BOARD_Z = 0.1
WIPE_CORNERS = np.array([
    [0.30, -0.08, BOARD_Z],
    [0.46, -0.08, BOARD_Z],
    [0.46, 0.08, BOARD_Z],
    [0.30, 0.08, BOARD_Z],
])
INSERT_START = np.array([0.3, 0.0, 0.35])

DEMO_SPEED = 0.10          # [m/s], well under the 0.25 cap
DEMO_JITTER = 0.002        # [m] max seeded path jitter


@dataclass(frozen=True)
class Demonstration:
    times: np.ndarray        # (n,) uniform [s]
    positions: np.ndarray    # (n, 3) [m]
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# path construction
# ---------------------------------------------------------------------------

def _round_corners(waypoints: np.ndarray, radius: float = 0.025,
                   n_arc: int = 7) -> np.ndarray:
    """Replace polygon corners by circular arcs (closed polygons only).

    A smooth kernel mixes the displacement directions of adjacent edges, so
    sharp corners turn into cancellation zones; rounding keeps the taught
    flow field well defined.
    """
    pts = np.asarray(waypoints, dtype=float)
    n = pts.shape[0]
    out = []
    for i in range(n):
        prev_pt, pt, next_pt = pts[(i - 1) % n], pts[i], pts[(i + 1) % n]
        v_in = pt - prev_pt
        v_out = next_pt - pt
        l_in, l_out = np.linalg.norm(v_in), np.linalg.norm(v_out)
        r = min(radius, 0.4 * l_in, 0.4 * l_out)
        a = pt - v_in / l_in * r
        b = pt + v_out / l_out * r
        # quadratic Bezier from a to b with the corner as control point
        ts = np.linspace(0.0, 1.0, n_arc)[:, None]
        arc = (1 - ts) ** 2 * a + 2 * ts * (1 - ts) * pt + ts ** 2 * b
        out.append(arc)
    return np.vstack(out)


def _polyline_resample(waypoints: np.ndarray, speed: float, period: float,
                       closed: bool = False) -> np.ndarray:
    """Sample a polyline at constant speed; closed paths end at their start."""
    pts = np.asarray(waypoints, dtype=float)
    if closed:
        pts = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s_knots = np.concatenate([[0.0], np.cumsum(seg)])
    total = s_knots[-1]
    n = max(2, int(np.floor(total / (speed * period))) + 1)
    s = np.linspace(0.0, total, n)
    return np.column_stack([np.interp(s, s_knots, pts[:, k]) for k in range(3)])


def _smooth_jitter(n: int, length: float, rng, closed: bool) -> np.ndarray:
    """Low-frequency positional jitter, bounded by DEMO_JITTER per axis.

    Open paths keep their exact endpoints (the robot really starts at the
    socket and ends at the goal); closed paths keep their closure.
    """
    s = np.linspace(0.0, 1.0, n)
    out = np.zeros((n, 3))
    for axis in range(3):
        amp = rng.uniform(0.2, 1.0) * DEMO_JITTER
        k = int(rng.integers(1, 4))
        if closed:
            wave = np.sin(2 * np.pi * k * s)  # integer harmonics keep closure
        else:
            phase = rng.uniform(0, 2 * np.pi)
            wave = np.sin(np.pi * s) * np.sin(2 * np.pi * k * s + phase)
        out[:, axis] = amp * wave
    if closed:
        out[-1] = out[0]
    return out


def _unplug_waypoints(height: float) -> np.ndarray:
    pull_out = SOCKET + np.array([-0.06, 0.0, 0.0])
    apex_z = max(SOCKET[2], UNPLUG_GOAL[2]) + height
    arc_x = np.linspace(pull_out[0], UNPLUG_GOAL[0], 7)[1:-1]
    # half-sine arc between the pull-out point and the goal
    frac = (arc_x - pull_out[0]) / (UNPLUG_GOAL[0] - pull_out[0])
    arc_z = pull_out[2] + (UNPLUG_GOAL[2] - pull_out[2]) * frac \
        + (apex_z - max(pull_out[2], UNPLUG_GOAL[2])) * np.sin(np.pi * frac)
    arc = np.column_stack([arc_x, np.zeros_like(arc_x), arc_z])
    return np.vstack([SOCKET, SOCKET + [-0.03, 0, 0], pull_out, arc, UNPLUG_GOAL])


def scripted_demo(task: str, variant: float | None = None, seed: int = 0,
                  period: float = 0.01, speed: float = DEMO_SPEED) -> Demonstration:
    """Smooth reference demonstration for one task.

    ``variant`` parameterizes the task (unplug: arc apex height above the
    socket, default 0.15 m).  Deterministic in (task, variant, seed).
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}, expected one of {TASKS}")
    rng = np.random.default_rng((TASKS.index(task), seed))
    closed = task == "wipe"

    if task == "unplug":
        height = 0.15 if variant is None else float(variant)
        track = _polyline_resample(_unplug_waypoints(height), speed, period)
    elif task == "box":
        track = _polyline_resample(np.vstack([BOX_START, BOX_GOAL]), speed, period)
    elif task == "wipe":
        track = _polyline_resample(_round_corners(WIPE_CORNERS), speed, period, closed=True)
    else:  # plug_insert
        above = SOCKET + np.array([0.0, 0.0, 0.08])
        track = _polyline_resample(np.vstack([INSERT_START, above, SOCKET]), speed, period)

    seg_len = float(np.sum(np.linalg.norm(np.diff(track, axis=0), axis=1)))
    track = track + _smooth_jitter(track.shape[0], seg_len, rng, closed)
    times = np.arange(track.shape[0]) * period
    return Demonstration(times=times, positions=track,
                         meta={"task": task, "variant": variant, "seed": seed})


def _straight_demo(start, end, period=0.01, speed=DEMO_SPEED) -> Demonstration:
    track = _polyline_resample(np.vstack([start, end]), speed, period)
    times = np.arange(track.shape[0]) * period
    return Demonstration(times=times, positions=track, meta={"task": "straight"})


# ---------------------------------------------------------------------------
# reference path with arclength phase
# ---------------------------------------------------------------------------

class ReferencePath:
    """Dense path with arclength lookup for phase-scheduled tracking."""

    def __init__(self, positions: np.ndarray, closed: bool = False):
        self.points = np.asarray(positions, dtype=float)
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self.s[-1])
        self.closed = closed

    def nearest_s(self, x: np.ndarray) -> float:
        d = np.linalg.norm(self.points - np.asarray(x)[None, :], axis=1)
        return float(self.s[int(np.argmin(d))])

    def point_at(self, s: float) -> np.ndarray:
        if self.closed:
            s = s % self.length
        s = float(np.clip(s, 0.0, self.length))
        return np.array([np.interp(s, self.s, self.points[:, k]) for k in range(3)])

    def tangent_at(self, s: float) -> np.ndarray:
        h = max(1e-4, self.length * 1e-4)
        d = self.point_at(s + h) - self.point_at(max(s - h, 0.0) if not self.closed else s - h)
        n = np.linalg.norm(d)
        return d / n if n > 0 else np.array([1.0, 0.0, 0.0])

    @property
    def start(self) -> np.ndarray:
        return self.points[0].copy()

    @property
    def end(self) -> np.ndarray:
        return self.points[-1].copy()


@dataclass(frozen=True)
class CorrectorConfig:
    dead_band: float = 0.005       # [m] tracking error ignored below this
    gain: float = 25.0             # device units per meter of error
    damping: float = 0.2           # [s] velocity lead, damps overshoot
    v_ref: float = DEMO_SPEED      # scheduled reference speed [m/s]
    lead_max: float = 0.025        # [m] schedule never leads the robot more
    cadence: int = 5               # emit at most every N ticks
    goal_radius: float = 0.012     # [m] marks the goal inside this radius
    brake_radius: float = 0.04     # [m] backward corrections allowed this close
                                   # to the path end (braking is taught there;
                                   # elsewhere surges are left to the damping)
    mark_goal_at_end: bool = True
    press_axis: int | None = None  # axis pushed to maintain a contact force
    press_sign: float = -1.0
    press_target: float = 0.0      # [N] target normal force (0 disables)
    press_until: float = np.inf    # teaching budget for the press channel [s]


class ScriptedCorrector:
    """Proportional desk-scale stand-in for the human teacher."""

    def __init__(self, reference: ReferencePath, config: CorrectorConfig = CorrectorConfig()):
        self.ref = reference
        self.cfg = config
        self.s_sched = 0.0
        self.s_unwrapped = 0.0
        self._s_prev = 0.0
        self.goal_emitted = False
        self._tick = 0

    def _unwrap(self, s_here: float) -> float:
        if not self.ref.closed:
            self.s_unwrapped = s_here
            return s_here
        delta = s_here - self._s_prev
        if delta < -0.5 * self.ref.length:
            delta += self.ref.length
        elif delta > 0.5 * self.ref.length:
            delta -= self.ref.length
        self.s_unwrapped += delta
        self._s_prev = s_here
        return self.s_unwrapped

    def __call__(self, state: sim.SimState, t: float) -> pol.FeedbackEvent | None:
        self._tick += 1
        if self.goal_emitted:
            return None
        s_here = self._unwrap(self.ref.nearest_s(state.position))
        self.s_sched = min(self.s_sched + self.cfg.v_ref * 0.01,
                           s_here + self.cfg.lead_max)
        if not self.ref.closed:
            self.s_sched = min(self.s_sched, self.ref.length)

        target = self.ref.point_at(self.s_sched)
        err = target - state.position - self.cfg.damping * state.velocity

        if (self.cfg.mark_goal_at_end and not self.ref.closed
                and self.s_sched >= self.ref.length - 1e-9
                and np.linalg.norm(state.position - self.ref.end) < self.cfg.goal_radius
                and np.linalg.norm(state.velocity) < 0.02):
            self.goal_emitted = True
            return pol.FeedbackEvent(increment=np.zeros(3), goal_flag=True, timestamp=t)

        # a stuck robot gets gentler input every tick (as a human holding the
        # stick against resistance); once tracking resumes the cadence drops
        stalled = (float(np.linalg.norm(state.velocity)) < 0.02
                   and float(np.linalg.norm(err)) > 2 * self.cfg.dead_band)
        if not stalled and self._tick % self.cfg.cadence != 0:
            return None

        # never drag the policy backwards along the path (a surge settles by
        # itself); braking is only taught close to the path end
        tangent = self.ref.tangent_at(self.s_sched)
        longitudinal = float(err @ tangent)
        near_end = (not self.ref.closed and
                    self.ref.length - self.s_sched < self.cfg.brake_radius)
        if longitudinal < 0 and not near_end:
            err = err - longitudinal * tangent

        if self.cfg.press_target > 0.0:
            err[self.cfg.press_axis] = 0.0  # the press channel owns this axis
        inc = np.clip(self.cfg.gain * err, -1.0, 1.0)
        want_track = float(np.linalg.norm(err)) > self.cfg.dead_band

        want_press = False
        if self.cfg.press_target > 0.0 and t <= self.cfg.press_until:
            deficit = self.cfg.press_target - state.contact.wipe_normal_force
            if deficit > 0.05 * self.cfg.press_target:
                want_press = True
                inc[self.cfg.press_axis] = self.cfg.press_sign
        if not (want_track or want_press):
            return None
        if not want_track:
            keep = inc[self.cfg.press_axis]
            inc = np.zeros(3)
            inc[self.cfg.press_axis] = keep
        return pol.FeedbackEvent(increment=inc, goal_flag=False, timestamp=t)


# ---------------------------------------------------------------------------
# episode runner
# ---------------------------------------------------------------------------

@dataclass
class EpisodeLog:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    attractor_cmd: np.ndarray
    stiffness_cmd: np.ndarray
    sigma_rel: np.ndarray
    f_stable: np.ndarray
    f_env: np.ndarray
    f_perturb: np.ndarray
    normal_force: np.ndarray
    obstacle_hits: np.ndarray          # bool per tick
    events: list                        # (tick, kind, grew_database)
    final_policy: pol.PolicyState
    diverged: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n_ticks(self) -> int:
        return self.times.shape[0]

    def to_csv(self, path) -> None:
        header = (
            "t,x,y,z,vx,vy,vz,dx_x,dx_y,dx_z,k_x,k_y,k_z,sigma_rel,"
            "fst_x,fst_y,fst_z,fenv_x,fenv_y,fenv_z,fpert_x,fpert_y,fpert_z,"
            "normal_force,obstacle,event"
        )
        event_by_tick = {tick: kind for tick, kind, _ in self.events}
        with open(path, "w", newline="") as fh:
            fh.write(header + "\n")
            for i in range(self.n_ticks):
                row = np.concatenate([
                    [self.times[i]], self.positions[i], self.velocities[i],
                    self.attractor_cmd[i], self.stiffness_cmd[i], [self.sigma_rel[i]],
                    self.f_stable[i], self.f_env[i], self.f_perturb[i],
                    [self.normal_force[i]],
                ])
                cells = [repr(float(v)) for v in row]
                cells.append("1" if self.obstacle_hits[i] else "0")
                cells.append(event_by_tick.get(i, ""))
                fh.write(",".join(cells) + "\n")


def run_episode(
    policy_state: pol.PolicyState,
    env: sim.Environment,
    corrector: ScriptedCorrector | None = None,
    perturbation: sim.PerturbationSpec | None = None,
    duration: float = 10.0,
    start: np.ndarray | None = None,
    sim_cfg: sim.SimConfig = sim.DEFAULT_SIM,
) -> EpisodeLog:
    """Tick the teaching loop at the control rate and log every step.

    Deterministic given (policy, env, corrector state, perturbation seed).
    On divergence the partial log is returned with ``diverged`` set.
    """
    cfg = policy_state.config
    period = cfg.control_period
    n_ticks = int(round(duration / period))
    if start is None:
        start = corrector.ref.start if corrector is not None else np.zeros(3)
    state = sim.initial_state(start, env)

    p = policy_state
    counts_before = p.counts
    rows = {name: [] for name in
            ("t", "x", "v", "dx", "ks", "srel", "fst", "fenv", "fpert", "fn", "obs")}
    events: list = []
    diverged = False

    for i in range(n_ticks):
        t = i * period
        f_pert = (sim.sample_perturbation(perturbation, t)
                  if perturbation is not None else np.zeros(3))
        if corrector is not None:
            fb = corrector(state, t)
            if fb is not None:
                before = p.attractor_gp.n_points
                if fb.goal_flag:
                    p = pol.mark_goal(p, state.position)
                else:
                    p = pol.apply_feedback(p, state.position, fb)
                events.append((i, p.counts.last_branch, p.attractor_gp.n_points > before))
        cmd = pol.query(p, state.position)
        f_env_now = sim.env_force(env, state)
        rows["t"].append(t)
        rows["x"].append(state.position.copy())
        rows["v"].append(state.velocity.copy())
        rows["dx"].append(cmd.attractor_displacement)
        rows["ks"].append(cmd.stiffness)
        rows["srel"].append(min(cmd.sigma / p.sigma_max, 1.0) if p.sigma_max > 0 else 1.0)
        rows["fst"].append(cmd.f_stable)
        rows["fenv"].append(f_env_now)
        rows["fpert"].append(f_pert)
        rows["fn"].append(state.contact.wipe_normal_force)
        rows["obs"].append(state.contact.obstacle_penetrating)
        try:
            state = sim.run_control_tick(state, cmd, env, f_pert, period, sim_cfg)
        except sim.SimulationDiverged:
            diverged = True
            break

    return EpisodeLog(
        times=np.asarray(rows["t"]),
        positions=np.asarray(rows["x"]),
        velocities=np.asarray(rows["v"]),
        attractor_cmd=np.asarray(rows["dx"]),
        stiffness_cmd=np.asarray(rows["ks"]),
        sigma_rel=np.asarray(rows["srel"]),
        f_stable=np.asarray(rows["fst"]),
        f_env=np.asarray(rows["fenv"]),
        f_perturb=np.asarray(rows["fpert"]),
        normal_force=np.asarray(rows["fn"]),
        obstacle_hits=np.asarray(rows["obs"], dtype=bool),
        events=events,
        final_policy=p,
        diverged=diverged,
        meta={"duration": duration,
              "feedback_total": p.counts.total - counts_before.total,
              "appends": p.counts.appends - counts_before.appends},
    )


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def metrics(log: EpisodeLog, goal: np.ndarray | None = None,
            reference: ReferencePath | None = None,
            force_target: float = 0.0) -> dict:
    """Summary metrics for one episode; absent quantities are omitted."""
    out: dict = {}
    if goal is not None and log.n_ticks:
        out["goal_error"] = float(np.linalg.norm(log.positions[-1] - np.asarray(goal)))
    total = len(log.events)
    grew = sum(1 for _, _, g in log.events if g)
    if total > 0:
        out["data_efficiency"] = 100.0 * (total - grew) / total
    corrective_ticks = {tick for tick, kind, _ in log.events if kind != "goal"}
    out["feedback_time"] = len(corrective_ticks) * float(np.diff(log.times[:2])[0]) \
        if log.n_ticks > 1 else 0.0
    out["peak_speed"] = float(np.max(np.linalg.norm(log.velocities, axis=1))) \
        if log.n_ticks else 0.0
    if reference is not None and reference.closed:
        loops = split_loops(log, reference)
        if len(loops) >= 2:
            out["loop_consistency"] = loop_consistency(loops, log.positions)
        if force_target > 0 and loops:
            out["force_coverage"] = min(
                float(np.mean(log.normal_force[sl] >= force_target)) for sl in loops
            )
    out["obstacle_penetrations"] = int(np.count_nonzero(log.obstacle_hits))
    out["diverged"] = log.diverged
    return out


def _longest_true_run(mask: np.ndarray) -> int:
    best = run = 0
    for v in mask:
        run = run + 1 if v else 0
        best = max(best, run)
    return best


def split_loops(log: EpisodeLog, reference: ReferencePath) -> list[slice]:
    """Tick slices of completed loops.

    The raw nearest-point phase can flip between adjacent segments at the
    loop seam, so loops are cut where the unwrapped phase (accumulated
    minimal circular increments) crosses whole-loop multiples.
    """
    s = np.array([reference.nearest_s(x) for x in log.positions])
    length = reference.length
    delta = np.diff(s)
    delta = np.where(delta < -0.5 * length, delta + length, delta)
    delta = np.where(delta > 0.5 * length, delta - length, delta)
    unwrapped = np.concatenate([[s[0]], s[0] + np.cumsum(delta)])
    boundaries = []
    k = 1
    for i, u in enumerate(unwrapped):
        if u >= k * length - 1e-9:
            boundaries.append(i)
            k += 1
    return [slice(a, b) for a, b in zip(boundaries[:-1], boundaries[1:])]


def loop_consistency(loops: list[slice], positions: np.ndarray,
                     n_phase: int = 200) -> float:
    """Max pairwise positional RMSE between loops, aligned by loop start."""
    resampled = []
    for sl in loops:
        seg = positions[sl]
        frac = np.linspace(0.0, 1.0, seg.shape[0])
        grid = np.linspace(0.0, 1.0, n_phase)
        resampled.append(np.column_stack(
            [np.interp(grid, frac, seg[:, k]) for k in range(3)]))
    worst = 0.0
    for i in range(len(resampled)):
        for j in range(i + 1, len(resampled)):
            diff = resampled[i] - resampled[j]
            rmse = float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))
            worst = max(worst, rmse)
    return worst


# ---------------------------------------------------------------------------
# demo file ingestion
# ---------------------------------------------------------------------------

def load_demo_file(path) -> Demonstration:
    """Read a demo as CSV (t, x, y, z; header optional) or JSON."""
    text = open(path).read()
    stripped = text.lstrip()
    if stripped.startswith("{") or stripped.startswith("["):
        doc = json.loads(text)
        if isinstance(doc, dict):
            times = np.asarray(doc["t"], dtype=float)
            positions = np.column_stack([doc["x"], doc["y"], doc["z"]]).astype(float)
        else:
            arr = np.asarray(doc, dtype=float)
            times, positions = arr[:, 0], arr[:, 1:4]
    else:
        rows = []
        for record in csv.reader(io.StringIO(text)):
            if not record:
                continue
            try:
                rows.append([float(v) for v in record[:4]])
            except ValueError:
                continue  # header line
        arr = np.asarray(rows, dtype=float)
        times, positions = arr[:, 0], arr[:, 1:4]
    return Demonstration(times=times, positions=positions, meta={"source": str(path)})


def save_demo_csv(demo: Demonstration, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("t,x,y,z\n")
        for t, p in zip(demo.times, demo.positions):
            fh.write(",".join(repr(float(v)) for v in (t, p[0], p[1], p[2])) + "\n")


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def _teach_passes(policy_state, env_factory, ref, durations,
                  corrector_cfg=CorrectorConfig()):
    """Run several correction rounds (fresh environment and corrector each),
    mirroring the repeated rounds a human needs to cover the whole task."""
    logs = []
    p = policy_state
    for duration in durations:
        teacher = ScriptedCorrector(ref, corrector_cfg)
        log = run_episode(p, env_factory(), teacher, duration=duration, start=ref.start)
        p = log.final_policy
        logs.append(log)
    return p, logs


def _pooled_teach_metrics(logs) -> dict:
    total = sum(len(log.events) for log in logs)
    grew = sum(1 for log in logs for _, _, g in log.events if g)
    period = 0.01
    ticks = {(i, tick) for i, log in enumerate(logs)
             for tick, kind, _ in log.events if kind != "goal"}
    return {
        "data_efficiency": 100.0 * (total - grew) / total if total else float("nan"),
        "feedback_time": len(ticks) * period,
        "feedback_events": total,
    }


def _teach_and_eval_unplug(seed: int, heights, cfg: pol.PolicyConfig, sink=None, tag="unplug",
                           env_overrides: dict | None = None):
    demos = [scripted_demo("unplug", h, seed=seed + 17 * i)
             for i, h in enumerate(heights)]
    demo_time = sum(d.times[-1] for d in demos)
    policy_state = pol.init_from_demos(demos, cfg, seed=seed)
    ref = ReferencePath(demos[0].positions)

    env_kw = dict({"breakaway_force": 20.0}, **(env_overrides or {}))
    env_factory = lambda: sim.Environment.plug(SOCKET, **env_kw)
    taught, teach_logs = _teach_passes(policy_state, env_factory, ref, (16.0, 12.0))

    eval_log = run_episode(taught, env_factory(), None, duration=12.0, start=ref.start)
    for i, tl in enumerate(teach_logs):
        _emit_log(sink, f"{tag}_seed{seed}_teach{i}", tl)
    _emit_log(sink, f"{tag}_seed{seed}_eval", eval_log)
    _emit_policy(sink, f"{tag}_seed{seed}_policy", taught)
    m_teach = _pooled_teach_metrics(teach_logs)
    m_eval = metrics(eval_log, goal=UNPLUG_GOAL)
    return {
        "seed": seed,
        "demo_time": float(demo_time),
        "feedback_time": m_teach["feedback_time"],
        "data_efficiency": m_teach["data_efficiency"],
        "goal_error": m_eval["goal_error"],
        "breakaway": _breakaway_happened(eval_log),
    }


def _breakaway_happened(log: EpisodeLog) -> bool:
    # the plug is out once the end-effector moved well past the socket stretch
    d = np.linalg.norm(log.positions - SOCKET[None, :], axis=1)
    return bool(np.any(d > 0.05))


def preset_unplug_single(seed: int, overrides: dict | None = None, sink=None,
                         env_overrides: dict | None = None) -> dict:
    cfg = _config_with(overrides)
    return _teach_and_eval_unplug(seed, [0.15], cfg, sink=sink, tag="unplug_single",
                                  env_overrides=env_overrides)


def preset_unplug_multi(seed: int, overrides: dict | None = None, sink=None,
                        env_overrides: dict | None = None) -> dict:
    cfg = _config_with(overrides)
    return _teach_and_eval_unplug(seed, [0.10, 0.15, 0.20], cfg, sink=sink, tag="unplug_multi",
                                  env_overrides=env_overrides)


def preset_perturbed_goal_prior_ablation(seed: int, overrides: dict | None = None, sink=None,
                                         env_overrides: dict | None = None) -> dict:
    base = dict(k_mean=600.0, k_max=1200.0, f_max=50.0,
                lengthscale_bounds=(0.015, 0.025), lengthscale_init=0.02)
    base.update(overrides or {})
    cfg = _config_with(base)
    demo = _straight_demo([0.2, 0.0, 0.2], [0.55, 0.0, 0.2])
    goal = demo.positions[-1]
    trained = pol.init_from_demos([demo], cfg, seed=seed)
    trained = pol.mark_goal(trained, goal)

    spec = sim.PerturbationSpec(mean=10.0, stddev=5.0, hold_interval=0.2, seed=seed)
    env = sim.Environment.free()
    row = {"seed": seed}
    for label, use_prior in (("with_prior", True), ("without_prior", False)):
        arm = replace(trained, config=replace(cfg, use_stabilization=use_prior))
        log = run_episode(arm, env, None, spec, duration=12.0, start=demo.positions[0])
        _emit_log(sink, f"prior_ablation_seed{seed}_{label}", log)
        row[f"goal_error_{label}"] = metrics(log, goal=goal)["goal_error"]
    return row


def preset_box_contact_loss_ablation(seed: int, overrides: dict | None = None, sink=None,
                                     env_overrides: dict | None = None) -> dict:
    demo = scripted_demo("box", seed=seed)
    ref = ReferencePath(demo.positions)
    midpoint = 0.5 * (BOX_START[1] + BOX_GOAL[1])
    row = {"seed": seed}

    # a tight displacement limit routes the taught force through the
    # stiffness channel; the unbounded arm ignores the limit by construction
    arms = {
        "bounded": _config_with(dict(overrides or {}, delta_lim=0.03)),
        "unbounded": _config_with(dict(overrides or {}, delta_lim=0.03,
                                       unbounded_attractor=True,
                                       k_mean=40.0, k_min=0.0)),
    }
    for label, cfg in arms.items():
        trained = pol.init_from_demos([demo], cfg, seed=seed)
        env_kw = dict({"friction_force": 8.0}, **(env_overrides or {}))
        env_factory = lambda removal=np.inf: sim.Environment.box(
            BOX_START, [0, 1.0, 0], removal_time=removal, **env_kw)
        taught, teach_logs = _teach_passes(trained, env_factory, ref, (12.0,))

        # find when the push crosses the stroke midpoint, then rerun with the
        # box removed right there (a genuine mid-push contact loss)
        probe = run_episode(taught, env_factory(), None, duration=8.0, start=ref.start)
        crossing = np.flatnonzero(probe.positions[:, 1] >= midpoint)
        removal = float(probe.times[crossing[0]]) if crossing.size else 1.0

        log = run_episode(taught, env_factory(removal), None, duration=8.0, start=ref.start)
        _emit_log(sink, f"box_seed{seed}_{label}_eval", log)
        _emit_policy(sink, f"box_seed{seed}_{label}_policy", taught)
        after = log.times >= removal
        row[f"peak_speed_{label}"] = float(
            np.max(np.linalg.norm(log.velocities[after], axis=1)))
        row[f"data_efficiency_{label}"] = _pooled_teach_metrics(teach_logs)["data_efficiency"]
        row[f"removal_time_{label}"] = removal
    return row


def _wipe_board_env(obstacle=None, env_overrides: dict | None = None):
    env_kw = dict({"normal_stiffness": 5000.0, "friction_coeff": 0.3},
                  **(env_overrides or {}))
    return sim.Environment.whiteboard([0.38, 0.0, BOARD_Z], [0, 0, 1.0],
                                      obstacle=obstacle, **env_kw)


WIPE_FORCE_TARGET = 8.0
WIPE_OBSTACLE = (np.array([0.44, -0.02, BOARD_Z - 0.02]),
                 np.array([0.48, 0.02, BOARD_Z + 0.1]))


def _detour_waypoints() -> np.ndarray:
    """Wipe rectangle with the right edge bulged smoothly around the obstacle.

    A single cosine lobe keeps the direction field kernel-friendly; sharp
    zig-zags leave dead zones the taught flow cannot carry through.
    """
    ys = np.linspace(-0.06, 0.06, 15)
    bulge_x = 0.46 - 0.06 * np.cos(np.pi * ys / 0.12) ** 2
    bulge = np.column_stack([bulge_x, ys, np.full_like(ys, BOARD_Z)])
    return np.vstack([
        [0.30, -0.08, BOARD_Z],
        [0.46, -0.08, BOARD_Z],
        bulge,
        [0.46, 0.08, BOARD_Z],
        [0.30, 0.08, BOARD_Z],
    ])


def _teach_wipe(seed: int, cfg: pol.PolicyConfig, env, ref: ReferencePath,
                teach_duration: float):
    demo = scripted_demo("wipe", seed=seed)
    trained = pol.init_from_demos([demo], cfg, seed=seed)
    teacher = ScriptedCorrector(ref, CorrectorConfig(
        press_axis=2, press_sign=-1.0, press_target=WIPE_FORCE_TARGET * 1.6,
        mark_goal_at_end=False,
    ))
    teach = run_episode(trained, env, teacher, duration=teach_duration, start=ref.start)
    return teach


def preset_wipe_cyclic(seed: int, overrides: dict | None = None, sink=None,
                       env_overrides: dict | None = None) -> dict:
    cfg = _config_with(dict(overrides or {},
                            lengthscale_bounds=(0.012, 0.02)))
    demo_ref = ReferencePath(scripted_demo("wipe", seed=seed).positions, closed=True)
    env = _wipe_board_env(env_overrides=env_overrides)
    teach = _teach_wipe(seed, cfg, env, demo_ref, teach_duration=20.0)

    # warm-up lap plus five measured laps
    loop_time = demo_ref.length / DEMO_SPEED
    eval_log = run_episode(teach.final_policy, env, None,
                           duration=6.5 * loop_time, start=demo_ref.start)
    _emit_log(sink, f"wipe_seed{seed}_eval", eval_log)
    _emit_policy(sink, f"wipe_seed{seed}_policy", teach.final_policy)
    m = metrics(eval_log, reference=demo_ref, force_target=WIPE_FORCE_TARGET)
    loops = split_loops(eval_log, demo_ref)[-5:]
    m["loop_consistency"] = loop_consistency(loops, eval_log.positions)
    m["force_coverage"] = min(
        float(np.mean(eval_log.normal_force[sl] >= WIPE_FORCE_TARGET)) for sl in loops
    ) if loops else 0.0
    return {
        "seed": seed,
        "loop_consistency": m["loop_consistency"],
        "force_coverage": m["force_coverage"],
        "data_efficiency": metrics(teach).get("data_efficiency", float("nan")),
        "feedback_time": metrics(teach)["feedback_time"],
        "n_loops": len(loops),
    }


def preset_wipe_obstacle(seed: int, overrides: dict | None = None, sink=None,
                         env_overrides: dict | None = None) -> dict:
    cfg = _config_with(dict(overrides or {},
                            lengthscale_bounds=(0.012, 0.02)))
    base_ref = ReferencePath(scripted_demo("wipe", seed=seed).positions, closed=True)
    plain_env = _wipe_board_env(env_overrides=env_overrides)
    taught = _teach_wipe(seed, cfg, plain_env, base_ref, teach_duration=20.0)

    detour_ref = ReferencePath(
        _polyline_resample(_round_corners(_detour_waypoints()),
                           DEMO_SPEED, cfg.control_period, closed=True),
        closed=True)
    obstacle_env = _wipe_board_env(obstacle=WIPE_OBSTACLE, env_overrides=env_overrides)
    adapt_cfg = CorrectorConfig(
        press_axis=2, press_sign=-1.0, press_target=WIPE_FORCE_TARGET * 1.3,
        mark_goal_at_end=False,
    )
    # correction rounds continue until a silent probe run makes it around
    # without stalling, as a human would keep correcting until it works
    loop_time = detour_ref.length / DEMO_SPEED
    adapted = taught.final_policy
    adapt_logs = []
    for _ in range(6):
        round_teacher = ScriptedCorrector(detour_ref, adapt_cfg)
        log = run_episode(adapted, obstacle_env, round_teacher,
                          duration=20.0, start=detour_ref.start)
        adapted = log.final_policy
        adapt_logs.append(log)
        probe = run_episode(adapted, obstacle_env, None,
                            duration=2.5 * loop_time, start=detour_ref.start)
        speeds = np.linalg.norm(probe.velocities, axis=1)
        stalled = _longest_true_run(speeds < 0.02) > 100
        if not stalled and len(split_loops(probe, detour_ref)) >= 2:
            break

    eval_log = run_episode(adapted, obstacle_env, None,
                           duration=9.0 * loop_time, start=detour_ref.start)
    loops = split_loops(eval_log, detour_ref)[-5:]
    _emit_log(sink, f"wipe_obstacle_seed{seed}_eval", eval_log)
    _emit_policy(sink, f"wipe_obstacle_seed{seed}_policy", adapted)
    return {
        "seed": seed,
        "obstacle_penetrations": int(np.count_nonzero(eval_log.obstacle_hits)),
        "loop_consistency": loop_consistency(loops, eval_log.positions)
        if len(loops) >= 2 else float("nan"),
        "data_efficiency": _pooled_teach_metrics(adapt_logs)["data_efficiency"],
        "n_loops": len(loops),
    }


def preset_plug_insert(seed: int, overrides: dict | None = None, sink=None,
                       env_overrides: dict | None = None) -> dict:
    cfg = _config_with(overrides)
    demo = scripted_demo("plug_insert", seed=seed)
    ref = ReferencePath(demo.positions)
    trained = pol.init_from_demos([demo], cfg, seed=seed)
    env = sim.Environment.free()
    teacher = ScriptedCorrector(ref, CorrectorConfig(goal_radius=0.008))
    teach = run_episode(trained, env, teacher, duration=12.0, start=ref.start)
    eval_log = run_episode(teach.final_policy, env, None, duration=8.0, start=ref.start)
    _emit_log(sink, f"plug_insert_seed{seed}_eval", eval_log)
    _emit_policy(sink, f"plug_insert_seed{seed}_policy", teach.final_policy)
    return {
        "seed": seed,
        "goal_error": metrics(eval_log, goal=SOCKET)["goal_error"],
        "data_efficiency": metrics(teach).get("data_efficiency", float("nan")),
        "feedback_time": metrics(teach)["feedback_time"],
    }


PRESETS = {
    "unplug_single": preset_unplug_single,
    "unplug_multi": preset_unplug_multi,
    "perturbed_goal_prior_ablation": preset_perturbed_goal_prior_ablation,
    "box_contact_loss_ablation": preset_box_contact_loss_ablation,
    "wipe_cyclic": preset_wipe_cyclic,
    "wipe_obstacle": preset_wipe_obstacle,
    "plug_insert": preset_plug_insert,
}


def _config_with(overrides: dict | None) -> pol.PolicyConfig:
    base = pol.PolicyConfig()
    if not overrides:
        return base
    allowed = {f for f in base.__dataclass_fields__}
    bad = set(overrides) - allowed
    if bad:
        raise ValueError(f"unknown policy config overrides: {sorted(bad)}")
    if "lengthscale_bounds" in overrides:
        overrides = dict(overrides)
        overrides["lengthscale_bounds"] = tuple(overrides["lengthscale_bounds"])
    return replace(base, **overrides)


@dataclass
class ExperimentReport:
    preset: str
    rows: list[dict]

    def columns(self) -> list[str]:
        cols: list[str] = []
        for row in self.rows:
            for key in row:
                if key not in cols:
                    cols.append(key)
        return cols

    def aggregate(self) -> dict[str, dict]:
        out = {}
        for col in self.columns():
            if col == "seed":
                continue
            vals = [row[col] for row in self.rows if col in row]
            if all(isinstance(v, (int, float, np.floating, bool)) for v in vals):
                arr = np.asarray([float(v) for v in vals])
                out[col] = {"max": float(np.max(arr)), "mean": float(np.mean(arr)),
                            "min": float(np.min(arr))}
        return out

    def to_text(self) -> str:
        cols = [c for c in self.columns() if c != "seed"]
        lines = [f"preset: {self.preset}"]
        header = "stat".ljust(6) + "".join(c.rjust(max(len(c) + 2, 14)) for c in cols)
        lines.append(header)
        agg = self.aggregate()
        for stat in ("max", "mean", "min"):
            cells = []
            for c in cols:
                v = agg.get(c, {}).get(stat)
                cells.append(("%.4f" % v if v is not None else "-").rjust(max(len(c) + 2, 14)))
            lines.append(stat.ljust(6) + "".join(cells))
        return "\n".join(lines)

    def to_csv(self, path) -> None:
        cols = self.columns()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in self.rows:
                writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                                 for c in cols])
            agg = self.aggregate()
            for stat in ("max", "mean", "min"):
                writer.writerow([stat] + [
                    repr(agg[c][stat]) if c in agg else "" for c in cols if c != "seed"])


def experiment(preset: str, seeds, overrides: dict | None = None,
               sink: ArtifactSink | None = None,
               env_overrides: dict | None = None) -> ExperimentReport:
    """Run one experiment preset across seeds."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}, expected one of {sorted(PRESETS)}")
    rows = [PRESETS[preset](int(seed), overrides, sink=sink, env_overrides=env_overrides)
            for seed in seeds]
    return ExperimentReport(preset=preset, rows=rows)
