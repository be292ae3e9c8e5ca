"""Acceptance suite.

One test per criterion; each prints a single PASS/FAIL line (run with
``pytest -s tests/test_acceptance.py`` to see them) and enforces the stated
tolerance and runtime budget.
"""

import time

import numpy as np
import pytest

from gpvic import gp, policy as pol, sim, teacher


def _report(num: int, ok: bool, detail: str):
    print(f"[criterion {num}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num}: {detail}"


# ---------------------------------------------------------------------------

def test_criterion_1_correction_rule_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for trial in range(100):
        n = int(rng.integers(2, 51))
        hyper = gp.Hyperparameters(rng.uniform(0.3, 1.2, 3),
                                   float(rng.uniform(0.5, 2.0)),
                                   float(rng.uniform(0.0, 1e-3)))
        model = gp.fit_new(rng.uniform(-1, 1, (n, 3)), rng.normal(size=(n, 3)), hyper)
        x = model.inputs[int(rng.integers(n))] + rng.normal(scale=0.2, size=3)
        if np.linalg.norm(gp.predict(model, x).weights) <= 1e-8:
            x = model.inputs[int(rng.integers(n))]
        eps = rng.normal(size=3)
        before = gp.predict(model, x).mean
        after = gp.predict(gp.correct_labels(model, x, eps), x).mean
        worst = max(worst, float(np.max(np.abs(after - before - eps))))
    elapsed = time.perf_counter() - t0
    _report(1, worst < 1e-8 and elapsed < 5.0,
            f"max |shift - eps| = {worst:.2e} over 100 random GPs ({elapsed:.2f} s)")


def test_criterion_2_variance_gradient_matches_finite_differences():
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(20):
        rng = np.random.default_rng(100 + trial)
        n = int(rng.integers(5, 40))
        hyper = gp.Hyperparameters(rng.uniform(0.3, 1.0, 3), 1.0,
                                   float(rng.uniform(0, 1e-4)))
        model = gp.fit_new(rng.uniform(-1, 1, (n, 3)), rng.normal(size=(n, 1)), hyper)
        for p in rng.uniform(-1.3, 1.3, size=(30, 3)):
            g = gp.variance_gradient(model, p)
            fd = np.zeros(3)
            for d in range(3):
                h = 1e-5 * hyper.lengthscales[d]
                pp, pm = p.copy(), p.copy()
                pp[d] += h
                pm[d] -= h
                fd[d] = (gp.predict(model, pp).variance
                         - gp.predict(model, pm).variance) / (2 * h)
            rel = np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-12)
            worst = max(worst, rel)
    elapsed = time.perf_counter() - t0
    _report(2, worst < 1e-4 and elapsed < 5.0,
            f"max relative error vs central differences = {worst:.2e} "
            f"(30 probes x 20 models, {elapsed:.2f} s)")


def test_criterion_3_modulation_algebra():
    cfg = pol.PolicyConfig()
    checks = []

    # directional feedback overflow: K_inc = 300*0.08/0.05 - 300 = 180
    fb = pol.FeedbackEvent(increment=[1.0, 0, 0])
    dx_inc, ks_inc = pol.interpret_feedback(
        fb, [0.03, 0, 0], [300, 300, 300], pol.PolicyConfig(feedback_gain=0.05))
    checks.append(abs(ks_inc[0] - 180.0) < 1e-9)
    checks.append(abs(0.03 + dx_inc[0] - 0.05) < 1e-12)

    # force spreading: f = 300*0.04 + 9 = 21 N -> dx 0.05, K 420
    dx_out, ks_out = pol.modulate([0.04, 0, 0], [300, 300, 300], [9.0, 0, 0],
                                  sigma=0.0, sigma_max=1.0, config=cfg)
    checks.append(abs(dx_out[0] - 0.05) < 1e-12)
    checks.append(abs(ks_out[0] - 420.0) < 1e-9)

    # uncertainty pull-down: factor (1-0.95)/(1-0.9) = 0.5, and 0 at the top
    _, ks_half = pol.modulate([0.01, 0, 0], [300, 300, 300], [0, 0, 0],
                              sigma=0.95, sigma_max=1.0, config=cfg)
    _, ks_zero = pol.modulate([0.01, 0, 0], [300, 300, 300], [0, 0, 0],
                              sigma=1.0, sigma_max=1.0, config=cfg)
    checks.append(abs(ks_half[0] - 150.0) < 1e-9)
    checks.append(abs(ks_zero[0]) < 1e-12)

    # continuity at the threshold within 1e-4 * K_s
    cont = True
    for ks0 in (50.0, 300.0, 600.0):
        below = pol.modulate([0.01, 0, 0], [ks0] * 3, [0, 0, 0],
                             sigma=cfg.theta - 1e-6, sigma_max=1.0, config=cfg)[1]
        above = pol.modulate([0.01, 0, 0], [ks0] * 3, [0, 0, 0],
                             sigma=cfg.theta + 1e-6, sigma_max=1.0, config=cfg)[1]
        cont &= bool(np.all(np.abs(below - above) < 1e-4 * ks0))
    checks.append(cont)
    _report(3, all(checks),
            "hand-derived cases (K_inc=180; dx=0.05/K=420; factor 0.5; K=0 at top) "
            "and threshold continuity")


def test_criterion_4_stabilization_ablation():
    t0 = time.perf_counter()
    rows = [teacher.preset_perturbed_goal_prior_ablation(s) for s in (1, 2, 3, 4, 5)]
    with_prior = np.array([r["goal_error_with_prior"] for r in rows])
    without = np.array([r["goal_error_without_prior"] for r in rows])
    elapsed = time.perf_counter() - t0
    ok = (with_prior.mean() <= 0.3 * without.mean()
          and with_prior.max() <= 0.05
          and elapsed < 120.0)
    _report(4, ok,
            f"goal error with prior mean {with_prior.mean():.4f} m / max "
            f"{with_prior.max():.4f} m vs without {without.mean():.4f} m "
            f"({elapsed:.1f} s)")


def test_criterion_5_contact_loss_velocity():
    t0 = time.perf_counter()
    ratios = []
    for s in (1, 2, 3, 4, 5):
        row = teacher.preset_box_contact_loss_ablation(s)
        ratios.append(row["peak_speed_bounded"] / row["peak_speed_unbounded"])
    elapsed = time.perf_counter() - t0
    ok = all(r <= 0.5 for r in ratios) and elapsed < 120.0
    _report(5, ok,
            f"peak-speed ratios bounded/unbounded = "
            f"{', '.join(f'{r:.3f}' for r in ratios)} ({elapsed:.1f} s)")


def test_criterion_6_unplug_preset():
    rows = [teacher.preset_unplug_single(s) for s in (1, 2, 3, 4, 5)]
    breakaways = [r["breakaway"] for r in rows]
    errors = [r["goal_error"] for r in rows]
    effs = [r["data_efficiency"] for r in rows]
    ok = all(breakaways) and all(e < 0.03 for e in errors) and all(e >= 90 for e in effs)
    _report(6, ok,
            f"breakaway {sum(breakaways)}/5, goal errors "
            f"{', '.join(f'{e * 100:.2f}' for e in errors)} cm, efficiency "
            f"{', '.join(f'{e:.1f}' for e in effs)} %")


def test_criterion_7_wiping_cyclicity():
    cyc = teacher.preset_wipe_cyclic(1)
    obs = teacher.preset_wipe_obstacle(1)
    ok = (cyc["n_loops"] >= 5
          and cyc["loop_consistency"] <= 0.01
          and cyc["force_coverage"] >= 0.95
          and obs["n_loops"] >= 5
          and obs["obstacle_penetrations"] == 0)
    _report(7, ok,
            f"loop RMSE {cyc['loop_consistency'] * 100:.3f} cm, force coverage "
            f"{cyc['force_coverage'] * 100:.1f} %, obstacle run "
            f"{obs['n_loops']} loops with {obs['obstacle_penetrations']} penetrations")


def test_criterion_8_simulator_fidelity():
    # closed-form critically damped release
    k, lam, x0 = 10.0, 1.5, 0.1
    w = np.sqrt(k / lam)
    cfg = sim.SimConfig(inertia=lam, damping_floor=0.0)
    env = sim.Environment.free()
    attractor = np.array([0.3, 0.1, 0.2])
    state = sim.initial_state(attractor + [x0, 0, 0], env)
    worst = 0.0
    for _ in range(5000):
        state = sim.step(state, sim._SubCommand(attractor - state.position,
                                                np.full(3, k)), env, None, 1e-3, cfg)
        exact = x0 * (1 + w * state.time) * np.exp(-w * state.time)
        worst = max(worst, abs(state.position[0] - attractor[0] - exact))
    release_ok = worst < 1e-3 * x0

    # energy dissipation without external force
    k2 = 200.0
    state = sim.initial_state(attractor + [0.08, -0.05, 0.03], env)
    cfg2 = sim.SimConfig(inertia=lam)
    prev = np.inf
    energy_ok = True
    for _ in range(3000):
        state = sim.step(state, sim._SubCommand(attractor - state.position,
                                                np.full(3, k2)), env, None, 1e-3, cfg2)
        spring = attractor - state.position
        e = 0.5 * lam * state.velocity @ state.velocity + 0.5 * k2 * spring @ spring
        energy_ok &= e <= prev + 1e-12
        prev = e

    # bit-exact determinism under a seeded disturbance
    spec = sim.PerturbationSpec(mean=4.0, stddev=2.0, seed=9)

    def run():
        st = sim.initial_state([0.3, 0.0, 0.2], env)
        out = []
        for i in range(300):
            f = sim.sample_perturbation(spec, st.time)
            st = sim.run_control_tick(st, sim._SubCommand(np.array([0.01, 0, 0]),
                                                          np.full(3, 300.0)),
                                      env, f, 0.01)
            out.append(st.position.copy())
        return np.asarray(out)

    determinism_ok = bool(np.array_equal(run(), run()))
    _report(8, release_ok and energy_ok and determinism_ok,
            f"release error {worst / x0:.2e} (rel), energy non-increasing: "
            f"{energy_ok}, bit-exact determinism: {determinism_ok}")


def test_criterion_9_far_field_safety():
    demo = teacher._straight_demo([0.2, 0.0, 0.2], [0.45, 0.0, 0.2])
    cfg = pol.PolicyConfig()
    state = pol.init_from_demos([demo], cfg, seed=0)
    state = pol.mark_goal(state, demo.positions[-1])
    l_max = float(np.max(state.attractor_gp.hyper.lengthscales))
    rng = np.random.default_rng(4)
    worst_k, worst_dx = 0.0, 0.0
    for _ in range(60):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        anchor = state.attractor_gp.inputs[int(rng.integers(state.attractor_gp.n_points))]
        probe = anchor + direction * (5.0 * l_max + rng.uniform(0, 0.3))
        dists = np.linalg.norm(state.attractor_gp.inputs - probe[None, :], axis=1)
        if dists.min() < 5.0 * l_max:
            continue
        cmd = pol.query(state, probe)
        worst_k = max(worst_k, float(np.max(cmd.stiffness)))
        worst_dx = max(worst_dx, float(np.max(np.abs(cmd.attractor_displacement))))
    ok = worst_k <= 1e-3 * cfg.k_max and worst_dx <= cfg.delta_lim + 1e-9
    _report(9, ok,
            f"max far-field stiffness {worst_k:.2e} N/m (cap {1e-3 * cfg.k_max}), "
            f"max |dx| {worst_dx:.4f} m")
