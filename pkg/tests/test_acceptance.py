"""Acceptance suite: one verdict line per criterion, printed in the pytest summary.

Run ``pytest tests/test_acceptance.py -v`` (or execute this file directly).
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

from oracles import closed_loop_rhs, fine_trajectory, smooth_reference, stacked_error
from rovinspect.controllers import PAPER_NFC_GAINS, nfc_body_wrench_fast, sampled_spectral_radius, verify_stability
from rovinspect.dynamics import (
    BodyVelocity,
    ModelParams,
    coriolis_matrix,
    kinetic_energy,
    rk4_step,
    rk4_step_feedback,
    transform_J,
    transform_J_dot,
    world_accel,
)
from rovinspect.harness import mean_mae_over_seeds, rmse, run_episode
from rovinspect.localization import (
    FusedEstimate,
    MeasurementNoise,
    ProcessNoise,
    ekf_predict,
    ekf_update,
    observe_tags,
    pose_from_tag,
    propagate,
    propagation_jacobian,
)
from rovinspect.planner import BoundaryPolygon, Mode, build_plan, offset_inward, point_segment_distance
from rovinspect.planner import MissionState, advance
from rovinspect.scenario import standard_scenario, tank_tag_map
from rovinspect.se3 import PlanarPose, RigidTransform, wrap_angle
from scipy.integrate import solve_ivp

P = ModelParams()
K1 = [-300.0, -350.0, -1500.0, -250.0]
K2 = [-100.0, -70.0, -300.0, -60.0]
REPORTED_YAW_MAE = {"nfc": 0.120, "pid": 0.142}


def _nfc_trajectory(x0, t_end, dt):
    """Continuous-feedback NFC on the nominal plant, no saturation or disturbance."""

    def policy(t, x):
        eta_d, d, dd = smooth_reference(t)
        return nfc_body_wrench_fast(x, eta_d, d, dd, P, K1, K2)

    n = int(round(t_end / dt))
    xs = [list(x0)]
    x = list(x0)
    for k in range(n):
        x = rk4_step_feedback(x, k * dt, P, policy, dt)
        xs.append(x)
    return np.arange(n + 1) * dt, np.array(xs)


def _start_state(eps0, eps_dot0=(0, 0, 0, 0)):
    eta_d, d, _ = smooth_reference(0.0)
    eta = np.asarray(eta_d) + np.asarray(eps0)
    nu = transform_J(eta[3]).T @ (np.asarray(d) + np.asarray(eps_dot0))
    return list(eta) + list(nu)


def test_criterion_1_exact_linearization(record):
    rng = np.random.default_rng(2024)
    dt, T = 1e-3, 10.0
    t0 = time.perf_counter()
    worst = 0.0
    rhs = closed_loop_rhs(smooth_reference, K1, K2)
    for _ in range(20):
        eps0 = rng.normal(size=4)
        eps0 *= rng.uniform(0.05, 0.3) / np.linalg.norm(eps0)
        ts, xs = _nfc_trajectory(_start_state(eps0), T, dt)
        err = stacked_error(xs, ts, smooth_reference)
        sol = solve_ivp(rhs, (0.0, T), err[0], t_eval=ts[::10], method="DOP853", rtol=1e-10, atol=1e-12)
        worst = max(worst, float(np.max(np.abs(sol.y.T - err[::10]))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-3 and elapsed < 30.0
    record(1, "exact feedback linearization", ok,
           f"sup|e_sim - e_linear| = {worst:.2e} (tol 1e-3) over 20 runs, {elapsed:.1f} s (limit 30 s)")
    assert ok


def test_criterion_2_convergence(record):
    # Lemma 1 is a continuous-time statement, so the wrench is re-evaluated at every RK4 stage.
    dt = 1e-3
    ts, xs = _nfc_trajectory(_start_state((0.2, 0.2, 0.1, 0.3)), 20.0, dt)
    norms = np.linalg.norm(stacked_error(xs, ts, smooth_reference), axis=1)
    final = float(norms[-1])
    rises = np.nonzero(np.diff(norms) > 0.0)[0]
    monotone_from = float(ts[rises[-1] + 1]) if len(rises) else 0.0
    hover = verify_stability(PAPER_NFC_GAINS, P, BodyVelocity())
    cruise = verify_stability(PAPER_NFC_GAINS, P, BodyVelocity(u=0.1))
    held = sampled_spectral_radius(PAPER_NFC_GAINS, P, BodyVelocity(), 0.01)
    ok = final < 1e-2 and hover.stable and cruise.stable and monotone_from < 20.0
    record(2, "convergence and stability", ok,
           f"|e(20 s)| = {final:.2e} (tol 1e-2), |e| decreasing from t = {monotone_from:.2f} s, "
           f"max Re(eig) hover {hover.eigenvalues.real.max():.3f}, at u=0.1 {cruise.eigenvalues.real.max():.3f} "
           f"[info: input held over dt=0.01 gives spectral radius {held:.2f}]")
    assert ok


def _world_frame_trajectory(eta0, eta_dot0, tau_world, dt, n, p):
    def f(y):
        return np.concatenate((y[4:], world_accel(y[:4], y[4:], p, tau_world(y))))

    y = np.concatenate((eta0, eta_dot0))
    out = [y[:4].copy()]
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(y[:4].copy())
    return np.array(out)


def test_criterion_3_dynamics_oracles(record):
    rng = np.random.default_rng(77)
    # (a) Coriolis does no work
    worst_a = 0.0
    for nu in rng.normal(size=(10_000, 4)) * 2.0:
        b = BodyVelocity.from_array(nu)
        worst_a = max(worst_a, abs(float(nu @ coriolis_matrix(P, b) @ nu)))
    ok_a = worst_a <= 1e-12

    # (b) unforced damped motion loses energy
    violations = 0
    pq = ModelParams(d_n1=1.0, d_n2=1.0, d_n3=1.0, d_n4=0.3)
    for k in range(10_000):
        p = P if k % 2 == 0 else pq
        x = [0.0, 0.0, 0.0, rng.uniform(-3, 3)] + list(rng.normal(size=4))
        e = kinetic_energy(p, BodyVelocity.from_array(x[4:]))
        for _ in range(5):
            x = rk4_step(x, p, [0, 0, 0, 0], 0.01, (0, 0, 0, 0))
            e_new = kinetic_energy(p, BodyVelocity.from_array(x[4:]))
            if e_new > e * (1 + 1e-14):
                violations += 1
            e = e_new
    ok_b = violations == 0

    # (c) body-frame vs world-frame simulation
    p = ModelParams(d_n1=0.8, d_n4=0.2, buoyancy_minus_weight=0.4, tau_d=(0.5, -0.3, 0.0, 0.05))

    def tau_world(y):
        return np.array([3.0 * math.cos(0.3 * y[1]), 2.0, 0.4, 0.3 * math.sin(y[3])])

    def policy(t, x):
        return (transform_J(x[3]).T @ tau_world(np.asarray(x))).tolist()

    dt, n = 1e-3, 10_000
    x0 = [0.1, -0.2, 0.3, 0.4, 0.2, -0.1, 0.05, 0.3]
    body = [np.asarray(x0)[:4]]
    x = list(x0)
    for k in range(n):
        x = rk4_step_feedback(x, k * dt, p, policy, dt)
        body.append(np.asarray(x[:4]))
    body = np.array(body)
    world = _world_frame_trajectory(np.asarray(x0[:4]), transform_J(x0[3]) @ np.asarray(x0[4:]), tau_world, dt, n, p)
    diff = body - world
    diff[:, 3] = (diff[:, 3] + np.pi) % (2 * np.pi) - np.pi
    worst_c = float(np.max(np.abs(diff)))
    ok_c = worst_c <= 1e-6

    # (d) RK4 order
    xo = [0.0, 0.0, 0.0, 0.2, 0.3, -0.2, 0.1, 0.8]
    tau = [10.0, -6.0, 2.0, 0.5]
    T = 4.0
    ref = fine_trajectory(xo, tau, T, [T])[-1]

    def run(h):
        y = list(xo)
        for _ in range(int(round(T / h))):
            y = rk4_step(y, P, tau, h)
        return np.asarray(y)

    ratio = float(np.max(np.abs(run(0.05) - ref)) / np.max(np.abs(run(0.025) - ref)))
    ok_d = 12.0 <= ratio <= 20.0

    ok = ok_a and ok_b and ok_c and ok_d
    record(3, "dynamics oracles", ok,
           f"(a) max|nu'C nu| = {worst_a:.1e}; (b) energy increases {violations}/50000 steps; "
           f"(c) body vs world {worst_c:.1e} (tol 1e-6); (d) RK4 error ratio {ratio:.2f} (want 12..20)")
    assert ok


def test_criterion_4_controller_comparison(record):
    s = standard_scenario()
    seeds = range(10)
    t0 = time.perf_counter()
    nfc, nfc_runs = mean_mae_over_seeds(s, seeds, "nfc")
    pid, pid_runs = mean_mae_over_seeds(s, seeds, "pid")
    elapsed = time.perf_counter() - t0
    completed = all(r.completed for r in nfc_runs + pid_runs)
    order = {a: bool(nfc[i] < pid[i]) for a, i in (("x", 0), ("z", 2), ("yaw", 3))}
    band = {
        k: bool(REPORTED_YAW_MAE[k] / 3 <= v <= REPORTED_YAW_MAE[k] * 3)
        for k, v in (("nfc", nfc[3]), ("pid", pid[3]))
    }
    ok = all(order.values()) and completed and all(band.values()) and elapsed < 120.0
    record(4, "NFC vs PID on the tank scenario", ok,
           f"MAE x {nfc[0]:.4f}/{pid[0]:.4f} z {nfc[2]:.4f}/{pid[2]:.4f} yaw {nfc[3]:.4f}/{pid[3]:.4f} (nfc/pid); "
           f"nfc<pid {order}; completed {completed}; yaw within x3 of 0.120/0.142: {band}; {elapsed:.0f} s")
    assert ok


def _walk(plan, dt):
    mission, current, refs = MissionState(), plan.waypoints[0], []
    while mission.mode != Mode.DONE:
        mission, r = advance(mission, plan, current, dt)
        refs.append(r)
        current = r.eta_d
    return refs


def test_criterion_5_planner(record):
    square = BoundaryPolygon([(0, 0), (2, 0), (2, 2), (0, 2)], depth=0.5)
    got = np.array(offset_inward(square, 0.5).vertices)
    sq_err = float(np.max(np.abs(got - [(0.5, 0.5), (1.5, 0.5), (1.5, 1.5), (0.5, 1.5)])))
    pent = BoundaryPolygon([(0, 0), (3, -0.4), (4.2, 1.5), (2.1, 3.3), (-0.6, 1.9)], depth=1.0)
    inner = offset_inward(pent, 0.2)
    clearance = min(point_segment_distance(v, a, b) for v in inner.vertices for a, b in pent.edges())
    jumps = []
    for plan in (build_plan(standard_scenario().path.polygon(), 0.4, 0.1), build_plan(pent, 0.2, 0.1, smooth=True)):
        dt = 0.01
        refs = _walk(plan, dt)
        for r0, r1 in zip(refs, refs[1:]):
            dp = math.hypot(r1.eta_d.x - r0.eta_d.x, r1.eta_d.y - r0.eta_d.y) - plan.speed * dt
            dy = abs(wrap_angle(r1.eta_d.psi - r0.eta_d.psi)) - plan.yaw_rate * dt
            jumps.append(max(dp, dy))
    excess = max(jumps)
    ok = sq_err <= 1e-12 and clearance >= 0.2 - 1e-9 and excess <= 1e-9
    record(5, "planner correctness", ok,
           f"square offset error {sq_err:.1e}; pentagon clearance {clearance:.6f} >= 0.2; "
           f"max continuity excess {excess:.1e} (tol 1e-9)")
    assert ok


def test_criterion_6_localization(record):
    rng = np.random.default_rng(6)
    tags = tank_tag_map()
    cam = standard_scenario().camera_to_rig()
    # round trip
    rt = 0.0
    for _ in range(300):
        pose = RigidTransform.from_yaw(rng.uniform(-math.pi, math.pi), (rng.uniform(0.4, 2.2), rng.uniform(0.4, 1.3), 0.35))
        for obs in observe_tags(pose, tags, cam, fov_limit=1.05):
            rt = max(rt, float(np.max(np.abs(pose_from_tag(obs, tags, cam).matrix() - pose.matrix()))))
    # covariance over 1e5 cycles
    est = FusedEstimate.from_pose(PlanarPose(1.0, 1.0, 0.3, 0.0))
    q = ProcessNoise((1e-8,) * 4, (4e-6,) * 4)
    r = MeasurementNoise((0.012,) * 4)
    min_eig, asym = math.inf, 0.0
    for k in range(100_000):
        est = ekf_predict(est, rng.normal(size=4) * 0.02, 0.01, q)
        if k % 10 == 0:
            est = ekf_update(est, PlanarPose.from_array(est.x[:4] + rng.normal(size=4) * 0.012), r)
        if k % 1000 == 0 or k == 99_999:
            P_ = est.covariance
            asym = max(asym, float(np.max(np.abs(P_ - P_.T))))
            min_eig = min(min_eig, float(np.min(np.linalg.eigvalsh(P_))))
    # fused vs tag-only over 100 seeded episodes
    fused_sq, tag_sq, count = np.zeros(4), np.zeros(4), 0
    base = standard_scenario(duration=15.0)
    for seed in range(100):
        res = run_episode(base.with_(seed=seed))
        ok_rows = ~np.isnan(res.tag_pose[:, 0])
        for est_series, acc in ((res.estimate, fused_sq), (res.tag_pose, tag_sq)):
            d = est_series[ok_rows] - res.truth[ok_rows]
            d[:, 3] = (d[:, 3] + np.pi) % (2 * np.pi) - np.pi
            acc += np.sum(d**2, axis=0)
        count += int(np.sum(ok_rows))
    fused_rmse = np.sqrt(fused_sq / count)
    tag_rmse = np.sqrt(tag_sq / count)
    # Jacobian
    jac = 0.0
    for _ in range(20):
        x = np.concatenate((rng.normal(size=3), [rng.uniform(-3, 3)], rng.normal(size=4)))
        a = rng.normal(size=4)
        F = propagation_jacobian(x, a, 0.05)
        Fd = np.zeros((8, 8))
        for j in range(8):
            e = np.zeros(8)
            e[j] = 1e-6
            Fd[:, j] = (propagate(x + e, a, 0.05) - propagate(x - e, a, 0.05)) / 2e-6
        jac = max(jac, float(np.max(np.abs(F - Fd)) / np.max(np.abs(Fd))))
    ok = rt <= 1e-12 and min_eig >= -1e-9 and asym <= 1e-12 and bool(np.all(fused_rmse <= tag_rmse)) and jac < 1e-5
    record(6, "localization", ok,
           f"round trip {rt:.1e}; min eig(P) {min_eig:.1e}; fused RMSE {np.round(fused_rmse, 4).tolist()} "
           f"vs tag-only {np.round(tag_rmse, 4).tolist()}; Jacobian rel err {jac:.1e}")
    assert ok


def test_criterion_7_determinism(record, tmp_path, repo_root):
    scenario = repo_root / "scenarios" / "tank.yaml"
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        subprocess.run(
            [sys.executable, "-m", "rovinspect", "simulate", str(scenario), "--seed", "5", "--out-dir", str(d)],
            check=True, capture_output=True,
        )
        outs.append((d / "tank_nfc_seed5.csv").read_bytes())
    ok = outs[0] == outs[1] and len(outs[0]) > 0
    record(7, "determinism", ok, f"two simulate runs byte-identical: {outs[0] == outs[1]} ({len(outs[0])} bytes)")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
