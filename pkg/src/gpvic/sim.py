"""Cartesian point-mass impedance plant and the task environments.

The end-effector is a constant diagonal mass driven by the commanded
spring (stiffness times attractor distance), a critical damping term
recomputed from the commanded stiffness every step, and external forces:

    inertia * xdd = K_s * dx - D * xd + f_env + f_perturb

integrated with semi-implicit Euler.  Environments supply f_env:

* ``plug``        -- a stiff socket anchor that releases for good once its
                     tension exceeds the breakaway force (force discontinuity)
* ``box``         -- constant friction opposing the push while contact
                     persists; the box can vanish at ``removal_time``
* ``whiteboard``  -- unilateral penalty plane with kinetic friction
* ``free``        -- nothing

All environments share optional workspace walls and an optional axis-aligned
box obstacle.  A control tick holds the commanded attractor *position*
(anchored at the robot position when the command was issued) across its
integration substeps.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "SimConfig",
    "SimState",
    "Contact",
    "Environment",
    "PerturbationSpec",
    "SimulationDiverged",
    "critical_damping",
    "env_force",
    "step",
    "run_control_tick",
    "sample_perturbation",
    "initial_state",
]


class SimulationDiverged(RuntimeError):
    """State left the finite range; integration cannot continue."""


@dataclass(frozen=True)
class SimConfig:
    inertia: float = 1.5          # per-axis mass [kg]
    damping_floor: float = 2.0    # minimum damping so a slack robot settles [N s/m]
    sim_dt: float = 1e-3          # integration step [s]


DEFAULT_SIM = SimConfig()

# Socket anchor model for the plug task.
SOCKET_STIFFNESS = 1e4            # [N/m]
SOCKET_DAMPING = 250.0            # [N s/m]
BOX_DETACH_TOL = 5e-3             # retreat distance that breaks box contact [m]
OBSTACLE_STIFFNESS = 4e3          # bumper penalty [N/m]
WALL_STIFFNESS = 2e3              # workspace penalty walls [N/m]


@dataclass(frozen=True)
class Contact:
    plug_attached: bool = False
    plug_broken: bool = False
    box_active: bool = False
    box_progress: float = 0.0        # furthest push progress along the push axis [m]
    wipe_normal_force: float = 0.0   # last normal force on the board [N]
    obstacle_penetrating: bool = False


@dataclass(frozen=True)
class SimState:
    position: np.ndarray             # (3,) [m]
    velocity: np.ndarray             # (3,) [m/s]
    time: float = 0.0
    contact: Contact = field(default_factory=Contact)


@dataclass(frozen=True)
class Environment:
    kind: str = "free"
    # plug
    socket_position: np.ndarray | None = None
    breakaway_force: float = 20.0
    # box
    box_position: np.ndarray | None = None
    push_direction: np.ndarray | None = None
    friction_force: float = 8.0
    removal_time: float = np.inf
    # whiteboard
    plane_point: np.ndarray | None = None
    plane_normal: np.ndarray | None = None
    normal_stiffness: float = 5000.0
    friction_coeff: float = 0.3
    # shared extras
    obstacle: tuple[np.ndarray, np.ndarray] | None = None    # (lo, hi)
    workspace: tuple[np.ndarray, np.ndarray] | None = (
        np.array([-0.2, -0.6, -0.05]),
        np.array([1.0, 0.6, 0.9]),
    )

    def __post_init__(self):
        if self.kind not in ("free", "plug", "box", "whiteboard"):
            raise ValueError(f"unknown environment kind: {self.kind}")
        for name in ("socket_position", "box_position", "push_direction",
                     "plane_point", "plane_normal"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float).reshape(3))
        if self.breakaway_force < 0 or self.friction_force < 0 or self.normal_stiffness < 0:
            raise ValueError("force parameters must be non-negative")
        if self.push_direction is not None:
            n = np.linalg.norm(self.push_direction)
            if n > 0:
                object.__setattr__(self, "push_direction", self.push_direction / n)

    @classmethod
    def free(cls, **kw):
        return cls(kind="free", **kw)

    @classmethod
    def plug(cls, socket_position, breakaway_force=20.0, **kw):
        return cls(kind="plug", socket_position=socket_position,
                   breakaway_force=breakaway_force, **kw)

    @classmethod
    def box(cls, box_position, push_direction, friction_force=8.0,
            removal_time=np.inf, **kw):
        return cls(kind="box", box_position=box_position, push_direction=push_direction,
                   friction_force=friction_force, removal_time=removal_time, **kw)

    @classmethod
    def whiteboard(cls, plane_point, plane_normal, normal_stiffness=5000.0,
                   friction_coeff=0.3, **kw):
        return cls(kind="whiteboard", plane_point=plane_point, plane_normal=plane_normal,
                   normal_stiffness=normal_stiffness, friction_coeff=friction_coeff, **kw)


def initial_state(position, env: Environment, velocity=None) -> SimState:
    contact = Contact(plug_attached=(env.kind == "plug"),
                      box_active=(env.kind == "box"))
    return SimState(
        position=np.asarray(position, dtype=float).reshape(3),
        velocity=np.zeros(3) if velocity is None else np.asarray(velocity, dtype=float).reshape(3),
        time=0.0,
        contact=contact,
    )


@dataclass(frozen=True)
class PerturbationSpec:
    mean: float = 10.0
    stddev: float = 5.0
    hold_interval: float = 0.2
    seed: int = 0
    signed: bool = False

    def __post_init__(self):
        if self.stddev < 0:
            raise ValueError("stddev must be non-negative")
        if self.hold_interval <= 0:
            raise ValueError("hold_interval must be positive")


def sample_perturbation(spec: PerturbationSpec, t: float) -> np.ndarray:
    """Per-axis normal force held piecewise constant over each interval.

    Deterministic random access: the sample depends only on the spec seed and
    the interval index, not on calling order.
    """
    k = int(np.floor((t + 1e-12) / spec.hold_interval))
    rng = np.random.default_rng((spec.seed, k))
    force = rng.normal(spec.mean, spec.stddev, size=3)
    if spec.signed:
        force = force * rng.choice((-1.0, 1.0), size=3)
    return force


def critical_damping(inertia, stiffness) -> np.ndarray:
    """Per-axis unit-damping-ratio coefficients 2 sqrt(inertia * K)."""
    inertia = np.asarray(inertia, dtype=float)
    stiffness = np.asarray(stiffness, dtype=float)
    if np.any(inertia <= 0) or np.any(stiffness < 0):
        raise ValueError("inertia must be positive, stiffness non-negative")
    return 2.0 * np.sqrt(inertia * stiffness)


# ---------------------------------------------------------------------------
# environment forces
# ---------------------------------------------------------------------------

def env_force(env: Environment, state: SimState) -> np.ndarray:
    """External force at the current state (contact transitions excluded)."""
    f = np.zeros(3)
    x, v, c = state.position, state.velocity, state.contact

    if env.kind == "plug" and c.plug_attached and not c.plug_broken:
        stretch = x - env.socket_position
        tension = SOCKET_STIFFNESS * float(np.linalg.norm(stretch))
        if tension <= env.breakaway_force:
            f += -SOCKET_STIFFNESS * stretch - SOCKET_DAMPING * v

    elif env.kind == "box" and c.box_active and state.time < env.removal_time:
        s = float((x - env.box_position) @ env.push_direction)
        if s >= c.box_progress - BOX_DETACH_TOL:
            f += -env.friction_force * env.push_direction

    elif env.kind == "whiteboard":
        pen = float((env.plane_point - x) @ env.plane_normal)
        if pen > 0:
            fn = env.normal_stiffness * pen
            f += fn * env.plane_normal
            v_t = v - (v @ env.plane_normal) * env.plane_normal
            speed = float(np.linalg.norm(v_t))
            if speed > 1e-9:
                f += -env.friction_coeff * fn * v_t / speed

    if env.obstacle is not None:
        f += _box_penalty(x, env.obstacle, OBSTACLE_STIFFNESS)
    if env.workspace is not None:
        lo, hi = env.workspace
        f += WALL_STIFFNESS * (np.maximum(lo - x, 0.0) - np.maximum(x - hi, 0.0))
    return f


def _inside_box(x, box) -> bool:
    lo, hi = box
    return bool(np.all(x > lo) and np.all(x < hi))


def _box_penalty(x, box, stiffness) -> np.ndarray:
    """Push out through the nearest face when inside the box."""
    if not _inside_box(x, box):
        return np.zeros(3)
    lo, hi = box
    gaps = np.concatenate([x - lo, hi - x])
    i = int(np.argmin(gaps))
    f = np.zeros(3)
    axis, depth = i % 3, gaps[i]
    f[axis] = -stiffness * depth if i < 3 else stiffness * depth
    return f


def _advance_contact(env: Environment, state: SimState, x_new: np.ndarray) -> Contact:
    c = state.contact
    if env.kind == "plug" and c.plug_attached and not c.plug_broken:
        tension = SOCKET_STIFFNESS * float(
            np.linalg.norm(state.position - env.socket_position))
        if tension > env.breakaway_force:
            c = replace(c, plug_broken=True)
    if env.kind == "box" and c.box_active:
        s = float((x_new - env.box_position) @ env.push_direction)
        c = replace(c, box_progress=max(c.box_progress, s))
    if env.kind == "whiteboard":
        pen = float((env.plane_point - x_new) @ env.plane_normal)
        c = replace(c, wipe_normal_force=env.normal_stiffness * max(pen, 0.0))
    if env.obstacle is not None:
        c = replace(c, obstacle_penetrating=_inside_box(x_new, env.obstacle))
    return c


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def step(state: SimState, cmd, env: Environment, perturbation,
         dt: float, cfg: SimConfig = DEFAULT_SIM) -> SimState:
    """One semi-implicit Euler step under the commanded spring.

    ``cmd`` needs ``attractor_displacement`` and ``stiffness`` attributes;
    the displacement is taken literally for this step, so callers holding a
    command across substeps must re-express it against the anchored
    attractor position (see ``run_control_tick``).
    """
    if not 0.0 < dt <= 0.05:
        raise ValueError("dt must lie in (0, 0.05]")
    x, v = state.position, state.velocity
    k_s = np.asarray(cmd.stiffness, dtype=float)
    dx = np.asarray(cmd.attractor_displacement, dtype=float)
    perturbation = np.zeros(3) if perturbation is None else np.asarray(perturbation, dtype=float)

    d = np.maximum(critical_damping(cfg.inertia, k_s), cfg.damping_floor)
    f = k_s * dx - d * v + env_force(env, state) + perturbation
    v_new = v + f / cfg.inertia * dt
    x_new = x + v_new * dt
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(v_new))):
        raise SimulationDiverged(f"state non-finite at t={state.time:.3f}")
    return SimState(
        position=x_new,
        velocity=v_new,
        time=state.time + dt,
        contact=_advance_contact(env, state, x_new),
    )


@dataclass(frozen=True)
class _SubCommand:
    attractor_displacement: np.ndarray
    stiffness: np.ndarray


def run_control_tick(state: SimState, cmd, env: Environment, perturbation,
                     control_period: float, cfg: SimConfig = DEFAULT_SIM) -> SimState:
    """Integrate one control period with the attractor position held fixed."""
    n_sub = max(1, int(round(control_period / cfg.sim_dt)))
    dt = control_period / n_sub
    anchor = state.position + np.asarray(cmd.attractor_displacement, dtype=float)
    k_s = np.asarray(cmd.stiffness, dtype=float)
    for _ in range(n_sub):
        sub = _SubCommand(anchor - state.position, k_s)
        state = step(state, sub, env, perturbation, dt, cfg)
    return state
