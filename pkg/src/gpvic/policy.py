"""Variable-impedance teaching policy over Gaussian processes.

One 3-output GP maps end-effector position to a desired attractor
displacement; three 1-output GPs (sharing the attractor kernel and a
constant prior of ``k_mean``) map position to per-axis stiffness.  The
query pipeline composes raw prediction, the variance-gradient
stabilization force and the attractor/stiffness modulation into a single
control command.

Directional feedback is split axis-wise between the attractor and the
stiffness: increments move the attractor until the displacement limit is
hit (or the axis stiffness already sits above its base value), after which
the overflow converts into a stiffness change through

    (K_s + K_inc) * delta_lim = K_s * |dx + dx_inc|

clamped to the configured saturation range.  Whether a feedback event
appends a new sample or corrects the existing database is gated by the
relative posterior variance at the robot position, so corrections inside
the demonstrated corridor never grow the database.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import gp

__all__ = [
    "PolicyConfig",
    "PolicyState",
    "FeedbackEvent",
    "ControlCommand",
    "FeedbackCounts",
    "init_from_demos",
    "interpret_feedback",
    "apply_feedback",
    "mark_goal",
    "stabilization_force",
    "modulate",
    "query",
    "query_batch",
    "policy_to_json",
    "policy_from_json",
]


@dataclass(frozen=True)
class PolicyConfig:
    """Tuning knobs shared by the whole policy stack (SI units)."""

    delta_lim: float = 0.05            # max attractor distance per axis [m]
    k_mean: float = 300.0              # stiffness prior [N/m]
    k_min: float = 0.0                 # stiffness floor [N/m]
    k_max: float = 600.0               # stiffness saturation [N/m]
    f_max: float = 15.0                # stabilization force cap [N]
    theta: float = 0.9                 # relative uncertainty threshold
    sigma_threshold_rel: float = 0.3   # append/correct gate, fraction of sigma_max
    feedback_gain: float = 0.01        # meters of attractor per unit device input
    control_period: float = 0.01       # loop period [s]
    lengthscale_init: float = 0.02     # kernel init before training [m]
    lengthscale_bounds: tuple[float, float] = (0.012, 0.03)
    sample_spacing: float = 0.004      # min distance between stored samples [m]
    noise_floor_rel: float = 0.01      # sigma_n^2 floor as a fraction of sigma_f^2
    # ablation switches
    use_stabilization: bool = True
    unbounded_attractor: bool = False  # feedback moves the attractor only, no limit

    def __post_init__(self):
        if not self.delta_lim > 0:
            raise ValueError("delta_lim must be positive")
        if not (0 <= self.k_min <= self.k_mean <= self.k_max):
            raise ValueError("need 0 <= k_min <= k_mean <= k_max")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if not 0 < self.sigma_threshold_rel < 1:
            raise ValueError("sigma_threshold_rel must lie in (0, 1)")
        if not self.f_max > 0:
            raise ValueError("f_max must be positive")
        if not self.feedback_gain > 0:
            raise ValueError("feedback_gain must be positive")
        if not self.control_period > 0:
            raise ValueError("control_period must be positive")


@dataclass(frozen=True)
class FeedbackEvent:
    """One axis-wise teleoperation input, normalized to [-1, 1] per axis."""

    increment: np.ndarray          # (3,)
    goal_flag: bool = False
    timestamp: float = 0.0

    def __post_init__(self):
        inc = np.asarray(self.increment, dtype=float).reshape(3)
        object.__setattr__(self, "increment", inc)
        if np.any(np.abs(inc) > 1.0 + 1e-12):
            raise ValueError("per-axis feedback increment must stay within [-1, 1]")


@dataclass(frozen=True)
class ControlCommand:
    attractor_displacement: np.ndarray   # (3,) [m]
    stiffness: np.ndarray                # (3,) diagonal [N/m]
    sigma: float                         # attractor posterior variance
    f_stable: np.ndarray                 # (3,) [N], diagnostic


@dataclass(frozen=True)
class FeedbackCounts:
    total: int = 0
    appends: int = 0
    last_branch: str | None = None   # "append" | "correct" | "goal"


@dataclass(frozen=True)
class PolicyState:
    attractor_gp: gp.GPModel                 # 3-in -> 3-out, displacement [m]
    stiffness_gps: tuple[gp.GPModel, ...]    # three 3-in -> 1-out models [N/m]
    config: PolicyConfig
    sigma_max: float                         # unconditioned variance of the attractor GP
    alpha_nom: float                         # nominal stabilization gain
    counts: FeedbackCounts = field(default_factory=FeedbackCounts)

    @property
    def db_sizes(self) -> tuple[int, ...]:
        return (self.attractor_gp.n_points,) + tuple(g.n_points for g in self.stiffness_gps)


# ---------------------------------------------------------------------------
# initialization from demonstrations
# ---------------------------------------------------------------------------

def resample_uniform(times: np.ndarray, positions: np.ndarray, period: float) -> np.ndarray:
    """Linear resampling of a timed trajectory onto the control period."""
    times = np.asarray(times, dtype=float)
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if times.shape[0] != positions.shape[0] or times.shape[0] < 2:
        raise ValueError("demo needs at least 2 timed samples")
    grid = np.arange(times[0], times[-1] + 0.5 * period, period)
    grid = np.clip(grid, times[0], times[-1])
    return np.column_stack([np.interp(grid, times, positions[:, k]) for k in range(3)])


def init_from_demos(demos, config: PolicyConfig, seed: int = 0) -> PolicyState:
    """Train the attractor GP on one-step displacements of the demos and
    build the stiffness GPs with the same kernel around the ``k_mean`` prior.

    ``demos`` is a sequence of (times, positions) pairs or objects exposing
    ``times`` and ``positions``.
    """
    if not demos:
        raise ValueError("at least one demonstration is required")

    inputs_parts, targets_parts = [], []
    for demo in demos:
        times, positions = _demo_arrays(demo)
        track = resample_uniform(times, positions, config.control_period)
        if track.shape[0] < 2:
            raise ValueError("demo too short after resampling")
        steps = np.diff(track, axis=0)
        # thin the database: a slow demo oversamples the corridor far below
        # the kernel scale, which makes corrections pin to single ticks.
        # Targets stay one-control-period displacements.
        keep = [0]
        travelled = 0.0
        for i in range(1, steps.shape[0]):
            travelled += float(np.linalg.norm(track[i] - track[i - 1]))
            if travelled >= config.sample_spacing:
                keep.append(i)
                travelled = 0.0
        idx = np.asarray(keep)
        inputs_parts.append(track[idx])
        targets_parts.append(steps[idx])
    inputs = np.vstack(inputs_parts)
    targets = np.vstack(targets_parts)

    # scale bounds to the observed one-step displacements; unbounded signal
    # variance inflates badly on manifold-supported data, and a noise floor
    # keeps the near-duplicate samples of a slow demo from producing a
    # ringing interpolant (corrections must spread smoothly)
    scale = max(float(np.mean(targets * targets)), 1e-12)
    init_hyper = gp.Hyperparameters(
        lengthscales=np.full(3, config.lengthscale_init),
        signal_variance=scale,
        noise_variance=scale * 1e-2,
    )
    attractor = gp.train(
        inputs, targets, init_hyper,
        prior_mean=np.zeros(3),
        lengthscale_bounds=config.lengthscale_bounds,
        signal_bounds=(scale * 1e-2, scale * 1e2),
        noise_bounds=(scale * 3e-3, scale * 3e-1),
    )
    floor = config.noise_floor_rel * attractor.hyper.signal_variance
    if attractor.hyper.noise_variance < floor:
        eased = gp.Hyperparameters(
            lengthscales=attractor.hyper.lengthscales,
            signal_variance=attractor.hyper.signal_variance,
            noise_variance=floor,
        )
        attractor = gp.fit_new(inputs, targets, eased, np.zeros(3))

    k_targets = np.full((inputs.shape[0], 1), config.k_mean)
    k_prior = np.array([config.k_mean])
    stiffness = tuple(
        _shared_output_model(attractor, k_targets, k_prior) for _ in range(3)
    )

    sigma_max = attractor.hyper.signal_variance
    alpha_nom = _calibrate_alpha(attractor, config, seed)
    return PolicyState(
        attractor_gp=attractor,
        stiffness_gps=stiffness,
        config=config,
        sigma_max=sigma_max,
        alpha_nom=alpha_nom,
    )


def _demo_arrays(demo):
    if hasattr(demo, "times") and hasattr(demo, "positions"):
        return demo.times, demo.positions
    times, positions = demo
    return times, positions


# All four GPs share the input set and kernel, so they can share the
# factorization: one triangular solve per query serves every output.

def _shared_output_model(base: gp.GPModel, targets: np.ndarray,
                         prior_mean: np.ndarray) -> gp.GPModel:
    return gp.GPModel(
        inputs=base.inputs, targets=targets, prior_mean=prior_mean,
        hyper=base.hyper, chol=base.chol,
        alpha=gp._solve_alpha(base.chol, targets, prior_mean),
        jitter=base.jitter,
    )


def _is_shared(policy: "PolicyState") -> bool:
    chol = policy.attractor_gp.chol
    return all(g.chol is chol for g in policy.stiffness_gps)


def _calibrate_alpha(attractor: gp.GPModel, config: PolicyConfig, seed: int) -> float:
    """Nominal gain: f_max over the 95th-percentile gradient norm seen one
    lengthscale off the demonstration."""
    rng = np.random.default_rng(seed)
    pts = attractor.inputs
    if pts.shape[0] > 400:
        pts = pts[rng.choice(pts.shape[0], 400, replace=False)]
    jitter = rng.normal(size=pts.shape) * attractor.hyper.lengthscales[None, :]
    grads = gp.variance_gradient_batch(attractor, pts + jitter)
    scale = float(np.percentile(np.linalg.norm(grads, axis=1), 95))
    return config.f_max / max(scale, 1e-300)


# ---------------------------------------------------------------------------
# feedback interpretation (axis-wise)
# ---------------------------------------------------------------------------

def interpret_feedback(
    fb: FeedbackEvent,
    dx: np.ndarray,
    k_s: np.ndarray,
    config: PolicyConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Split a teleoperation input into attractor and stiffness increments.

    Axes with zero input produce exactly zero increments.  In the
    unbounded-attractor ablation the input always goes to the attractor.
    """
    dx = np.asarray(dx, dtype=float).reshape(3)
    k_s = np.asarray(k_s, dtype=float).reshape(3)
    dx_inc = np.zeros(3)
    ks_inc = np.zeros(3)
    lim = config.delta_lim

    for axis in range(3):
        inc = fb.increment[axis]
        if inc == 0.0:
            continue
        raw = dx[axis] + config.feedback_gain * inc
        if config.unbounded_attractor:
            dx_inc[axis] = config.feedback_gain * inc
            continue
        if abs(raw) >= lim or k_s[axis] > config.k_mean:
            k_new = np.clip(k_s[axis] * abs(raw) / lim, config.k_min, config.k_max)
            ks_inc[axis] = k_new - k_s[axis]
        dx_inc[axis] = np.clip(raw, -lim, lim) - dx[axis]
    return dx_inc, ks_inc


def _shared_solve(policy: PolicyState, x: np.ndarray):
    """(k*, weights) of the common factorization at one query point."""
    att = policy.attractor_gp
    kstar = gp.kernel_matrix(att.inputs, x[None, :], att.hyper)[:, 0]
    from scipy.linalg import cho_solve
    return kstar, cho_solve((att.chol, True), kstar)


def _raw_prediction(policy: PolicyState, x: np.ndarray, solve=None):
    cfg = policy.config
    att = policy.attractor_gp
    if _is_shared(policy):
        kstar, v = _shared_solve(policy, x) if solve is None else solve
        dx = att.prior_mean + v @ (att.targets - att.prior_mean[None, :])
        k_raw = np.array([
            g.prior_mean[0] + v @ (g.targets[:, 0] - g.prior_mean[0])
            for g in policy.stiffness_gps
        ])
        sf2 = att.hyper.signal_variance
        sigma = float(np.clip(sf2 - kstar @ v, 0.0, sf2))
    else:
        pred = gp.predict(att, x)
        dx, sigma, v = pred.mean, pred.variance, pred.weights
        k_raw = np.array([gp.predict(g, x).mean[0] for g in policy.stiffness_gps])
    return dx, np.clip(k_raw, cfg.k_min, cfg.k_max), sigma, v


def _correct_all(policy: PolicyState, weights: np.ndarray,
                 dx_inc: np.ndarray, ks_inc: np.ndarray) -> PolicyState:
    norm_sq = float(weights @ weights)
    if np.sqrt(norm_sq) <= gp.CORRECTION_TOL:
        raise gp.CorrectionUndefined("prediction weights vanish; append instead")
    pinv = weights / norm_sq
    att = policy.attractor_gp
    att_targets = att.targets + np.outer(pinv, dx_inc)
    attractor = replace(att, targets=att_targets,
                        alpha=gp._solve_alpha(att.chol, att_targets, att.prior_mean))
    stiffness = []
    for i, g in enumerate(policy.stiffness_gps):
        t = g.targets + pinv[:, None] * ks_inc[i]
        stiffness.append(replace(g, targets=t,
                                 alpha=gp._solve_alpha(g.chol, t, g.prior_mean)))
    counts = replace(policy.counts, total=policy.counts.total + 1, last_branch="correct")
    return replace(policy, attractor_gp=attractor, stiffness_gps=tuple(stiffness),
                   counts=counts)


def apply_feedback(policy: PolicyState, x: np.ndarray, fb: FeedbackEvent) -> PolicyState:
    """Fold one corrective input into the databases at position ``x``.

    Outside the known region (relative variance above the gate) the sample is
    appended to all four GPs; inside, the existing targets are corrected in
    place so the raw prediction at ``x`` shifts by exactly the increment.
    """
    if fb.goal_flag:
        raise ValueError("goal events are handled by mark_goal")
    x = np.asarray(x, dtype=float).reshape(3)
    cfg = policy.config
    dx, k_s, sigma, weights = _raw_prediction(policy, x)
    dx_inc, ks_inc = interpret_feedback(fb, dx, k_s, cfg)

    if sigma > cfg.sigma_threshold_rel * policy.sigma_max:
        return _append_all(policy, x, dx + dx_inc, k_s + ks_inc, branch="append")
    try:
        return _correct_all(policy, weights, dx_inc, ks_inc)
    except gp.CorrectionUndefined:
        return _append_all(policy, x, dx + dx_inc, k_s + ks_inc, branch="append")


def mark_goal(policy: PolicyState, x: np.ndarray) -> PolicyState:
    """Pin the task goal: zero displacement and saturation stiffness at ``x``.

    Appending alone is not enough when the goal sits on a densely sampled
    demonstration: highly correlated neighbours smooth the new sample away.
    The appended point is therefore followed by a label correction that
    pins the posterior mean at the goal exactly (one append event total).
    """
    x = np.asarray(x, dtype=float).reshape(3)
    cfg = policy.config
    dists = np.linalg.norm(policy.attractor_gp.inputs - x[None, :], axis=1)
    gap = float(np.min(dists[dists > gp.DUPLICATE_TOL], initial=np.inf))

    new = _append_all(policy, x, np.zeros(3), np.full(3, cfg.k_max), branch="goal")
    dx, k_raw, _, weights = _raw_prediction(new, x)
    counts = new.counts
    pinned = _correct_all(new, weights, -dx, cfg.k_max - k_raw)

    # brake zone: the pin's spread can push the displacement field's zero
    # crossing slightly short of the goal, parking the robot early; point
    # the field at the goal from the approach midpoint as well
    if np.isfinite(gap) and gap > 10 * gp.DUPLICATE_TOL:
        nearest = policy.attractor_gp.inputs[int(np.argmin(np.where(
            dists > gp.DUPLICATE_TOL, dists, np.inf)))]
        mid = 0.5 * (nearest + x)
        dx_mid, _, _, w_mid = _raw_prediction(pinned, mid)
        pinned = _correct_all(pinned, w_mid, (x - mid) - dx_mid, np.zeros(3))
    return replace(pinned, counts=counts)


def _append_all(policy, x, dx_target, ks_target, branch):
    att = policy.attractor_gp
    dists = np.linalg.norm(att.inputs - x[None, :], axis=1)
    idx = int(np.argmin(dists))
    if dists[idx] <= gp.DUPLICATE_TOL:
        att_targets = att.targets.copy()
        att_targets[idx] = dx_target
        attractor = replace(att, targets=att_targets,
                            alpha=gp._solve_alpha(att.chol, att_targets, att.prior_mean))
        stiffness = []
        for i, g in enumerate(policy.stiffness_gps):
            t = g.targets.copy()
            t[idx] = ks_target[i]
            stiffness.append(replace(g, targets=t,
                                     alpha=gp._solve_alpha(g.chol, t, g.prior_mean)))
        grew = False
    else:
        attractor = gp.append(att, x, dx_target)
        stiffness = [
            _shared_output_model(attractor,
                                 np.vstack([g.targets, [[ks_target[i]]]]),
                                 g.prior_mean)
            for i, g in enumerate(policy.stiffness_gps)
        ] if _is_shared(policy) else [
            gp.append(g, x, np.array([ks_target[i]]))
            for i, g in enumerate(policy.stiffness_gps)
        ]
        grew = True
    counts = FeedbackCounts(
        total=policy.counts.total + 1,
        appends=policy.counts.appends + (1 if grew else 0),
        last_branch=branch,
    )
    return replace(policy, attractor_gp=attractor, stiffness_gps=tuple(stiffness),
                   counts=counts)


# ---------------------------------------------------------------------------
# query pipeline
# ---------------------------------------------------------------------------

def stabilization_force(policy: PolicyState, x: np.ndarray) -> np.ndarray:
    """Force field descending the variance manifold, capped at ``f_max``."""
    if not policy.config.use_stabilization:
        return np.zeros(3)
    grad = gp.variance_gradient(policy.attractor_gp, np.asarray(x, dtype=float))
    return _cap_stabilization(grad, policy.alpha_nom, policy.config.f_max)


def _cap_stabilization(grad, alpha_nom, f_max):
    norm = float(np.linalg.norm(grad))
    if norm == 0.0:
        return np.zeros(3)
    alpha = min(alpha_nom, f_max / norm)
    return -alpha * grad


def modulate(
    dx: np.ndarray,
    k_s: np.ndarray,
    f_stable: np.ndarray,
    sigma: float,
    sigma_max: float,
    config: PolicyConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Spread the desired force over attractor and stiffness, then scale the
    stiffness down towards zero as the relative uncertainty approaches 1."""
    dx = np.asarray(dx, dtype=float).reshape(3)
    k_s = np.asarray(k_s, dtype=float).reshape(3)
    f_stable = np.asarray(f_stable, dtype=float).reshape(3)
    lim = config.delta_lim

    f = k_s * dx + f_stable
    dx_out = np.zeros(3)
    ks_out = np.zeros(3)
    for axis in range(3):
        if config.unbounded_attractor:
            dx_out[axis] = f[axis] / k_s[axis] if k_s[axis] > 0 else 0.0
            ks_out[axis] = k_s[axis]
        elif abs(f[axis]) <= k_s[axis] * lim:
            dx_out[axis] = f[axis] / k_s[axis] if k_s[axis] > 0 else 0.0
            ks_out[axis] = k_s[axis]
        else:
            dx_out[axis] = np.sign(f[axis]) * lim
            ks_out[axis] = min(abs(f[axis]) / lim, config.k_max)

    rel = sigma / sigma_max if sigma_max > 0 else 1.0
    if rel > config.theta:
        ks_out = ks_out * max(0.0, (1.0 - rel)) / (1.0 - config.theta)
    return dx_out, ks_out


def query(policy: PolicyState, x: np.ndarray) -> ControlCommand:
    """Pure composition predict -> stabilize -> modulate at one position."""
    x = np.asarray(x, dtype=float).reshape(3)
    cfg = policy.config
    if _is_shared(policy):
        kstar, v = _shared_solve(policy, x)
        dx, k_s, sigma, _ = _raw_prediction(policy, x, solve=(kstar, v))
        if cfg.use_stabilization:
            att = policy.attractor_gp
            ls2 = att.hyper.lengthscales ** 2
            dk = kstar[:, None] * (att.inputs - x[None, :]) / ls2[None, :]
            f_st = _cap_stabilization(-2.0 * (dk.T @ v), policy.alpha_nom, cfg.f_max)
        else:
            f_st = np.zeros(3)
    else:
        dx, k_s, sigma, _ = _raw_prediction(policy, x)
        f_st = stabilization_force(policy, x)
    dx_out, ks_out = modulate(dx, k_s, f_st, sigma, policy.sigma_max, cfg)
    return ControlCommand(
        attractor_displacement=dx_out,
        stiffness=ks_out,
        sigma=sigma,
        f_stable=f_st,
    )


def query_batch(policy: PolicyState, xs: np.ndarray):
    """Vectorized ``query`` for field evaluation.

    Returns (dx_out (m,3), ks_out (m,3), sigma_rel (m,), f_stable (m,3)).
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    cfg = policy.config
    if _is_shared(policy):
        from scipy.linalg import cho_solve
        att = policy.attractor_gp
        kstar = gp.kernel_matrix(att.inputs, xs, att.hyper)
        v = cho_solve((att.chol, True), kstar)
        dx = att.prior_mean[None, :] + v.T @ (att.targets - att.prior_mean[None, :])
        sf2 = att.hyper.signal_variance
        sigma = np.clip(sf2 - np.sum(kstar * v, axis=0), 0.0, sf2)
        k_cols = [g.prior_mean[0] + v.T @ (g.targets[:, 0] - g.prior_mean[0])
                  for g in policy.stiffness_gps]
    else:
        dx, sigma = gp.predict_batch(policy.attractor_gp, xs)
        k_cols = [gp.predict_batch(g, xs)[0][:, 0] for g in policy.stiffness_gps]
    k_s = np.clip(np.column_stack(k_cols), cfg.k_min, cfg.k_max)

    if cfg.use_stabilization:
        grads = gp.variance_gradient_batch(policy.attractor_gp, xs)
        norms = np.linalg.norm(grads, axis=1)
        alphas = np.where(
            norms > 0.0,
            np.minimum(policy.alpha_nom, cfg.f_max / np.maximum(norms, 1e-300)),
            0.0,
        )
        f_st = -alphas[:, None] * grads
    else:
        f_st = np.zeros_like(xs)

    f = k_s * dx + f_st
    if cfg.unbounded_attractor:
        dx_out = np.where(k_s > 0, f / np.maximum(k_s, 1e-300), 0.0)
        ks_out = k_s.copy()
    else:
        within = np.abs(f) <= k_s * cfg.delta_lim
        dx_out = np.where(
            within,
            np.where(k_s > 0, f / np.maximum(k_s, 1e-300), 0.0),
            np.sign(f) * cfg.delta_lim,
        )
        ks_out = np.where(within, k_s, np.minimum(np.abs(f) / cfg.delta_lim, cfg.k_max))

    rel = sigma / policy.sigma_max if policy.sigma_max > 0 else np.ones_like(sigma)
    scale = np.where(rel > cfg.theta, np.maximum(0.0, 1.0 - rel) / (1.0 - cfg.theta), 1.0)
    ks_out = ks_out * scale[:, None]
    return dx_out, ks_out, np.clip(rel, 0.0, 1.0), f_st


# ---------------------------------------------------------------------------
# persistence and demo ingestion
# ---------------------------------------------------------------------------

def policy_to_json(policy: PolicyState) -> str:
    cfg = policy.config
    doc = {
        "version": 1,
        "config": {
            "delta_lim": cfg.delta_lim,
            "k_mean": cfg.k_mean,
            "k_min": cfg.k_min,
            "k_max": cfg.k_max,
            "f_max": cfg.f_max,
            "theta": cfg.theta,
            "sigma_threshold_rel": cfg.sigma_threshold_rel,
            "feedback_gain": cfg.feedback_gain,
            "control_period": cfg.control_period,
            "lengthscale_init": cfg.lengthscale_init,
            "lengthscale_bounds": list(cfg.lengthscale_bounds),
            "use_stabilization": cfg.use_stabilization,
            "unbounded_attractor": cfg.unbounded_attractor,
        },
        "sigma_max": policy.sigma_max,
        "alpha_nom": policy.alpha_nom,
        "counts": {"total": policy.counts.total, "appends": policy.counts.appends},
        "attractor": json.loads(gp.model_to_json(policy.attractor_gp)),
        "stiffness": [json.loads(gp.model_to_json(g)) for g in policy.stiffness_gps],
    }
    return json.dumps(doc)


def policy_from_json(doc: str | dict) -> PolicyState:
    if isinstance(doc, str):
        doc = json.loads(doc)
    if doc.get("version") != 1:
        raise ValueError(f"unsupported policy document version: {doc.get('version')}")
    raw_cfg = dict(doc["config"])
    raw_cfg["lengthscale_bounds"] = tuple(raw_cfg["lengthscale_bounds"])
    cfg = PolicyConfig(**raw_cfg)
    counts = doc.get("counts", {})
    attractor = gp.model_from_json(doc["attractor"])
    stiffness = []
    for d in doc["stiffness"]:
        g = gp.model_from_json(d)
        same_kernel = (
            np.array_equal(g.inputs, attractor.inputs)
            and np.array_equal(g.hyper.lengthscales, attractor.hyper.lengthscales)
            and g.hyper.signal_variance == attractor.hyper.signal_variance
            and g.hyper.noise_variance == attractor.hyper.noise_variance
        )
        if same_kernel:
            g = _shared_output_model(attractor, g.targets, g.prior_mean)
        stiffness.append(g)
    return PolicyState(
        attractor_gp=attractor,
        stiffness_gps=tuple(stiffness),
        config=cfg,
        sigma_max=float(doc["sigma_max"]),
        alpha_nom=float(doc["alpha_nom"]),
        counts=FeedbackCounts(
            total=int(counts.get("total", 0)),
            appends=int(counts.get("appends", 0)),
        ),
    )
