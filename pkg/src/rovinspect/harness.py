"""Closed-loop episodes: sense -> plan -> control -> actuate -> integrate, plus MAE metrics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .controllers import NfcController, PidController, ReferencePoint
from .dynamics import ModelParams, VehicleState, rk4_step
from .localization import FusedEstimate, Localizer
from .planner import InspectionPlan, MissionState, Mode, advance, build_plan
from .scenario import Scenario
from .se3 import PlanarPose, RigidTransform, wrap_angle

SAFETY_HALF_WIDTH = 10.0  # m, around the boundary centroid
AXES = ("x", "y", "z", "psi")
HEADLINE_AXES = ("x", "z", "psi")

CSV_COLUMNS = (
    ["t"]
    + list(AXES)
    + [f"{a}_hat" for a in AXES]
    + [f"{a}_d" for a in AXES]
    + ["fx", "fy", "fz", "mz", "mode", "saturated"]
)


class LengthMismatch(ValueError):
    pass


class EpisodeDiverged(RuntimeError):
    def __init__(self, message: str, t: float, state: VehicleState):
        super().__init__(message)
        self.t = t
        self.state = state


def mae(series_actual, series_ref) -> np.ndarray:
    """Per-axis mean absolute error; the yaw difference is wrapped before taking |.|."""
    a = np.asarray(series_actual, dtype=float).reshape(-1, 4)
    r = np.asarray(series_ref, dtype=float).reshape(-1, 4)
    if a.shape != r.shape:
        raise LengthMismatch(f"series lengths differ: {len(a)} vs {len(r)}")
    if len(a) == 0:
        raise LengthMismatch("series must not be empty")
    err = a - r
    err[:, 3] = (err[:, 3] + np.pi) % (2.0 * np.pi) - np.pi
    # (-pi, pi] convention at the boundary
    err[:, 3] = np.where(err[:, 3] == -np.pi, np.pi, err[:, 3])
    return np.mean(np.abs(err), axis=0)


def rmse(series_actual, series_ref) -> np.ndarray:
    a = np.asarray(series_actual, dtype=float).reshape(-1, 4)
    r = np.asarray(series_ref, dtype=float).reshape(-1, 4)
    err = a - r
    err[:, 3] = (err[:, 3] + np.pi) % (2.0 * np.pi) - np.pi
    return np.sqrt(np.mean(err**2, axis=0))


@dataclass
class EpisodeResult:
    scenario_name: str
    controller: str
    seed: int
    dt: float
    t: np.ndarray
    truth: np.ndarray
    estimate: np.ndarray
    reference: np.ndarray
    wrench: np.ndarray
    modes: list
    saturated: np.ndarray
    tag_pose: np.ndarray  # latest tag-only pose per tick, NaN before the first detection
    completed: bool
    rejections: int = 0
    mae: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mae is None:
            self.mae = mae(self.truth, self.reference)

    @property
    def saturation_fraction(self) -> float:
        return float(np.mean(self.saturated)) if len(self.saturated) else 0.0

    @property
    def headline_mae(self) -> dict:
        return {a: float(self.mae[AXES.index(a)]) for a in HEADLINE_AXES}

    def summary(self) -> dict:
        return {
            "scenario": self.scenario_name,
            "controller": self.controller,
            "seed": self.seed,
            "ticks": int(len(self.t)),
            "completed": bool(self.completed),
            "mae": {a: _sig(v) for a, v in zip(AXES, self.mae)},
            "headline_mae": {a: _sig(v) for a, v in self.headline_mae.items()},
            "estimate_mae": {a: _sig(v) for a, v in zip(AXES, mae(self.estimate, self.reference))},
            "saturation_fraction": _sig(self.saturation_fraction),
            "measurement_rejections": int(self.rejections),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for k in range(len(self.t)):
            row = [_fmt(self.t[k])]
            for block in (self.truth, self.estimate, self.reference, self.wrench):
                row.extend(_fmt(v) for v in block[k])
            row.append(self.modes[k])
            row.append("1" if self.saturated[k] else "0")
            w.writerow(row)
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def _fmt(v: float) -> str:
    return f"{float(v):.9g}"


def _sig(v: float) -> float:
    return float(f"{float(v):.9g}")


def _initial_state(s: Scenario, plan: InspectionPlan) -> list[float]:
    if s.initial_state is not None:
        x = list(s.initial_state)
        x[3] = wrap_angle(x[3])
        return x
    wp = plan.waypoints[0]
    return [wp.x, wp.y, wp.z, wp.psi, 0.0, 0.0, 0.0, 0.0]


def make_controller(s: Scenario, kind: str | None = None):
    kind = kind or s.controller
    if kind == "nfc":
        return NfcController(s.nominal, s.nfc_gains, s.limits)
    if kind == "pid":
        return PidController(s.pid_gains, s.dt, s.limits, s.nominal)
    raise ValueError(f"unknown controller {kind!r}")


def _ticks_per(rate: float, dt: float) -> int:
    return max(1, int(round(1.0 / (rate * dt))))


def run_episode(s: Scenario, controller: str | None = None) -> EpisodeResult:
    """Run one closed-loop episode; deterministic for a given scenario and seed."""
    kind = controller or s.controller
    plan = build_plan(
        s.path.polygon(), s.path.margin, s.path.speed, s.path.start, s.path.yaw_rate, s.path.smooth
    )
    ctl = make_controller(s, kind)
    plant: ModelParams = s.plant
    limits = s.limits
    lim = list(limits) if limits is not None else None
    dt = s.dt
    n_max = max(1, int(math.floor(s.duration / dt + 1e-9)))

    x = _initial_state(s, plan)
    centroid = np.mean(np.asarray(plan.offset_polygon.vertices), axis=0)
    center = (float(centroid[0]), float(centroid[1]), plan.waypoints[0].z)

    loc_spec = s.localization
    seq = np.random.SeedSequence(s.seed)
    tag_ss, imu_ss = seq.spawn(2)
    localizer = None
    if loc_spec.enabled:
        localizer = Localizer(
            tag_map=s.resolve_tag_map(),
            camera_to_rig=s.camera_to_rig(),
            tag_noise=loc_spec.tag_noise,
            imu_noise=loc_spec.imu,
            process=loc_spec.process,
            measurement=loc_spec.measurement,
            tag_rng=np.random.default_rng(tag_ss),
            imu_rng=np.random.default_rng(imu_ss),
            fov_limit=loc_spec.fov,
            range_limit=loc_spec.range,
        )
        P0 = np.diag([1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4])
        localizer.estimate = FusedEstimate(np.array(x, dtype=float), P0)
        n_tag = _ticks_per(loc_spec.tag_rate, dt)
        n_imu = _ticks_per(loc_spec.imu_rate, dt)
    imu_accum = [0.0, 0.0, 0.0, 0.0]
    imu_count = 0

    t_s = np.empty(n_max)
    truth = np.empty((n_max, 4))
    est = np.empty((n_max, 4))
    ref_s = np.empty((n_max, 4))
    wrench = np.empty((n_max, 4))
    tag_pose = np.full((n_max, 4), np.nan)
    sat = np.zeros(n_max, dtype=bool)
    modes = []

    mission = MissionState()
    completed = False
    n = 0
    for k in range(n_max):
        t = k * dt
        # sense
        if localizer is not None:
            if k % n_tag == 0:
                rig = RigidTransform.from_yaw(x[3], (x[0], x[1], x[2]))
                localizer.tag_update(rig, t)
            xh = localizer.estimate.x.tolist()
            if localizer.last_tag_pose is not None:
                tag_pose[k] = localizer.last_tag_pose.as_array()
        else:
            xh = list(x)
        est_state = VehicleState.from_array(xh)
        # plan
        mission, ref = advance(mission, plan, est_state.eta, dt)
        # control
        tau_b, clipped = ctl.command(est_state, ref)
        tau = tau_b.as_array().tolist()
        if lim is not None:
            tau = [max(-lim[i], min(lim[i], tau[i])) for i in range(4)]

        t_s[k] = t
        truth[k] = x[:4]
        est[k] = xh[:4]
        ref_s[k] = ref.eta_d.as_array()
        wrench[k] = tau
        sat[k] = clipped
        modes.append(mission.label())
        n = k + 1
        if mission.mode == Mode.DONE:
            completed = True
            break

        # actuate + integrate
        dist = s.disturbance.at(t)
        tau_d = tuple(a + b for a, b in zip(plant.tau_d, dist))
        x_new = rk4_step(x, plant, tau, dt, tau_d)
        if not all(math.isfinite(v) for v in x_new):
            raise EpisodeDiverged("state became non-finite", t, VehicleState.from_array(x))
        if (
            abs(x_new[0] - center[0]) > SAFETY_HALF_WIDTH
            or abs(x_new[1] - center[1]) > SAFETY_HALF_WIDTH
            or abs(x_new[2] - center[2]) > SAFETY_HALF_WIDTH
        ):
            raise EpisodeDiverged("vehicle left the safety box", t + dt, VehicleState.from_array(x_new))
        if localizer is not None:
            for i in range(4):
                imu_accum[i] += (x_new[4 + i] - x[4 + i]) / dt
            imu_count += 1
            if imu_count == n_imu:
                accel = localizer.imu_sample([a / imu_count for a in imu_accum])
                localizer.predict(accel, dt * imu_count)
                imu_accum = [0.0, 0.0, 0.0, 0.0]
                imu_count = 0
        x = x_new

    return EpisodeResult(
        scenario_name=s.name,
        controller=kind,
        seed=s.seed,
        dt=dt,
        t=t_s[:n],
        truth=truth[:n],
        estimate=est[:n],
        reference=ref_s[:n],
        wrench=wrench[:n],
        modes=modes,
        saturated=sat[:n],
        tag_pose=tag_pose[:n],
        completed=completed,
        rejections=localizer.rejections if localizer is not None else 0,
    )


@dataclass
class ComparisonReport:
    nfc: EpisodeResult
    pid: EpisodeResult

    def winners(self) -> dict:
        out = {}
        for a in AXES:
            i = AXES.index(a)
            n, p = self.nfc.mae[i], self.pid.mae[i]
            out[a] = "tie" if n == p else ("nfc" if n < p else "pid")
        return out

    def table(self) -> str:
        w = self.winners()
        lines = [f"{'axis':<6}{'NFC MAE':>14}{'PID MAE':>14}  winner"]
        for a in AXES:
            i = AXES.index(a)
            note = "  (cruise axis, not in headline)" if a not in HEADLINE_AXES else ""
            lines.append(f"{a:<6}{self.nfc.mae[i]:>14.6g}{self.pid.mae[i]:>14.6g}  {w[a]}{note}")
        lines.append(f"completed: nfc={self.nfc.completed} pid={self.pid.completed}")
        return "\n".join(lines)

    def summary(self) -> dict:
        return {"nfc": self.nfc.summary(), "pid": self.pid.summary(), "winners": self.winners()}


def compare_controllers(s: Scenario) -> ComparisonReport:
    """NFC and PID on the identical scenario, seed and disturbance."""
    return ComparisonReport(nfc=run_episode(s, "nfc"), pid=run_episode(s, "pid"))


def mean_mae_over_seeds(s: Scenario, seeds, controller: str) -> tuple[np.ndarray, list[EpisodeResult]]:
    results = [run_episode(s.with_(seed=int(seed)), controller) for seed in seeds]
    return np.mean([r.mae for r in results], axis=0), results
