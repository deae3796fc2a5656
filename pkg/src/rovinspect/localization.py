"""Tag-chain pose measurements and an EKF fusing them with body-frame accelerations.

Frame conventions: ``T_a_b`` is the pose of frame ``b`` in frame ``a``.  The
camera looks along its +z axis; a tag's +z axis points out of the tag face
into the volume it can be seen from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import BodyVelocity
from .se3 import (
    PlanarPose,
    RigidTransform,
    axis_angle_matrix,
    chain_rig_pose,
    compose,
    invert,
    to_planar,
    wrap_angle,
)

# chi-square 0.99 quantile with 4 degrees of freedom
GATE_CHI2 = 13.28

# Camera axes (x right, y down, z forward) expressed in a body frame with
# x forward, y starboard, z down: the camera looks along body +x.
FORWARD_CAMERA_ROTATION = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


class UnknownTag(KeyError):
    pass


@dataclass(frozen=True)
class Tag:
    id: int
    pose: RigidTransform  # T_map_tag


class TagMap:
    def __init__(self, tags):
        self.tags: dict[int, Tag] = {}
        for tag in tags:
            if tag.id in self.tags:
                raise ValueError(f"duplicate tag id {tag.id}")
            self.tags[tag.id] = tag

    def __len__(self):
        return len(self.tags)

    def __iter__(self):
        return iter(sorted(self.tags.values(), key=lambda t: t.id))

    def __contains__(self, tag_id):
        return tag_id in self.tags

    def pose(self, tag_id: int) -> RigidTransform:
        try:
            return self.tags[tag_id].pose
        except KeyError:
            raise UnknownTag(tag_id) from None

    def dumps(self) -> str:
        """One line per tag: id followed by the 12-number transform."""
        lines = ["# id r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz"]
        for tag in self:
            lines.append(" ".join([str(tag.id)] + [f"{v:.17g}" for v in tag.pose.to_flat()]))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> TagMap:
        tags = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].replace(",", " ").strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 13:
                raise ValueError(f"tag map line {lineno}: expected 13 fields, got {len(parts)}")
            tags.append(Tag(int(parts[0]), RigidTransform.from_flat(parts[1:])))
        return cls(tags)


def wall_tag_pose(position, facing_yaw: float) -> RigidTransform:
    """Tag mounted on a vertical wall, its face looking along world heading ``facing_yaw``."""
    c, s = math.cos(facing_yaw), math.sin(facing_yaw)
    z_axis = np.array([c, s, 0.0])
    y_axis = np.array([0.0, 0.0, 1.0])
    x_axis = np.cross(y_axis, z_axis)
    return RigidTransform(np.column_stack((x_axis, y_axis, z_axis)), np.asarray(position, dtype=float))


def forward_camera(offset=(0.0, 0.0, 0.0)) -> RigidTransform:
    """``T_camera_rig`` for a camera at ``offset`` in the rig looking along rig +x."""
    rig_camera = RigidTransform(FORWARD_CAMERA_ROTATION, np.asarray(offset, dtype=float))
    return invert(rig_camera)


@dataclass(frozen=True)
class NoiseParams:
    sigma_t: float = 0.0  # m, per translation axis
    sigma_r: float = 0.0  # rad, rotation angle about a random axis


@dataclass(frozen=True)
class TagObservation:
    id: int
    camera_from_tag: RigidTransform  # T_camera_tag as a detector reports it
    timestamp: float = 0.0


def observe_tags(
    true_pose: RigidTransform,
    tag_map: TagMap,
    camera_to_rig: RigidTransform,
    noise: NoiseParams = NoiseParams(),
    fov_limit: float = 1.0,
    range_limit: float = 3.0,
    rng: np.random.Generator | None = None,
    timestamp: float = 0.0,
) -> list[TagObservation]:
    """Synthetic detections of every tag inside the camera's view cone.

    ``fov_limit`` is the half-angle of the cone around the optical axis.  A tag
    is only seen from its front side.
    """
    map_camera = compose(true_pose, invert(camera_to_rig))
    camera_map = invert(map_camera)
    out = []
    for tag in tag_map:
        cam_tag = compose(camera_map, tag.pose)
        p = cam_tag.translation
        dist = float(np.linalg.norm(p))
        if dist == 0.0 or dist > range_limit or p[2] <= 0.0:
            continue
        if math.acos(min(1.0, p[2] / dist)) > fov_limit:
            continue
        # camera must be in front of the tag face
        if invert(cam_tag).translation[2] <= 0.0:
            continue
        if rng is not None and (noise.sigma_t > 0.0 or noise.sigma_r > 0.0):
            dt = rng.normal(0.0, noise.sigma_t, 3) if noise.sigma_t > 0.0 else np.zeros(3)
            axis = rng.normal(size=3)
            angle = rng.normal(0.0, noise.sigma_r) if noise.sigma_r > 0.0 else 0.0
            R_noise = axis_angle_matrix(axis, angle)
            cam_tag = RigidTransform(R_noise @ cam_tag.rotation, cam_tag.translation + dt)
        out.append(TagObservation(tag.id, cam_tag, timestamp))
    return out


def pose_from_tag(obs: TagObservation, tag_map: TagMap, camera_to_rig: RigidTransform) -> RigidTransform:
    """Rig pose in the map from one detection: ``T_map_tag * T_tag_camera * T_camera_rig``."""
    map_tag = tag_map.pose(obs.id)
    return chain_rig_pose(map_tag, invert(obs.camera_from_tag), camera_to_rig)


@dataclass(frozen=True)
class ProcessNoise:
    """Continuous white-noise intensities; ``Q = diag(pose, velocity) * dt``."""

    pose: tuple = (1e-6, 1e-6, 1e-6, 1e-6)
    velocity: tuple = (1e-3, 1e-3, 1e-3, 1e-3)

    def matrix(self, dt: float) -> np.ndarray:
        return np.diag(np.concatenate((self.pose, self.velocity))) * dt


@dataclass(frozen=True)
class MeasurementNoise:
    """Standard deviations of a pose measurement (x, y, z, yaw)."""

    sigma: tuple = (0.02, 0.02, 0.02, 0.02)

    def matrix(self) -> np.ndarray:
        return np.diag(np.square(self.sigma))


@dataclass
class FusedEstimate:
    x: np.ndarray  # [x, y, z, psi, u, v, w, r]
    covariance: np.ndarray
    rejected: bool = False
    mahalanobis2: float = 0.0

    @classmethod
    def from_pose(cls, pose: PlanarPose, nu: BodyVelocity = BodyVelocity(), covariance=None) -> FusedEstimate:
        P = np.eye(8) * 1e-2 if covariance is None else np.array(covariance, dtype=float)
        return cls(np.concatenate((pose.as_array(), nu.as_array())), P)

    @property
    def eta_hat(self) -> PlanarPose:
        return PlanarPose.from_array(self.x[:4])

    @property
    def nu_hat(self) -> BodyVelocity:
        return BodyVelocity.from_array(self.x[4:])


def propagate(x: np.ndarray, accel, dt: float) -> np.ndarray:
    """Constant-acceleration kinematics over ``dt`` (body-frame velocity and acceleration)."""
    psi = x[3]
    c, s = math.cos(psi), math.sin(psi)
    a = np.asarray(accel, dtype=float)
    disp = x[4:] * dt + 0.5 * a * dt * dt
    out = x.copy()
    out[0] += c * disp[0] - s * disp[1]
    out[1] += s * disp[0] + c * disp[1]
    out[2] += disp[2]
    out[3] = wrap_angle(x[3] + disp[3])
    out[4:] += a * dt
    return out


def propagation_jacobian(x: np.ndarray, accel, dt: float) -> np.ndarray:
    psi = x[3]
    c, s = math.cos(psi), math.sin(psi)
    a = np.asarray(accel, dtype=float)
    disp = x[4:] * dt + 0.5 * a * dt * dt
    F = np.eye(8)
    F[0, 3] = -s * disp[0] - c * disp[1]
    F[1, 3] = c * disp[0] - s * disp[1]
    F[0, 4], F[0, 5] = c * dt, -s * dt
    F[1, 4], F[1, 5] = s * dt, c * dt
    F[2, 6] = dt
    F[3, 7] = dt
    return F


def ekf_predict(est: FusedEstimate, imu_accel, dt: float, q: ProcessNoise = ProcessNoise()) -> FusedEstimate:
    if dt <= 0:
        raise ValueError("dt must be positive")
    F = propagation_jacobian(est.x, imu_accel, dt)
    P = F @ est.covariance @ F.T + q.matrix(dt)
    return FusedEstimate(propagate(est.x, imu_accel, dt), 0.5 * (P + P.T))


_H = np.hstack((np.eye(4), np.zeros((4, 4))))


def ekf_update(est: FusedEstimate, measured: PlanarPose, r: MeasurementNoise = MeasurementNoise()) -> FusedEstimate:
    """Kalman update on (x, y, z, yaw) with a wrapped yaw innovation and Joseph-form covariance.

    Measurements whose squared Mahalanobis distance exceeds ``GATE_CHI2`` are
    rejected: the estimate is returned unchanged with ``rejected`` set.
    """
    P = est.covariance
    y = measured.as_array() - est.x[:4]
    y[3] = wrap_angle(y[3])
    R = r.matrix()
    S = P[:4, :4] + R
    Sinv_y = np.linalg.solve(S, y)
    d2 = float(y @ Sinv_y)
    if d2 > GATE_CHI2:
        return FusedEstimate(est.x.copy(), P.copy(), rejected=True, mahalanobis2=d2)
    K = np.linalg.solve(S, P[:4, :]).T  # P H^T S^-1, S symmetric
    x = est.x + K @ y
    x[3] = wrap_angle(x[3])
    IKH = np.eye(8) - K @ _H
    P_new = IKH @ P @ IKH.T + K @ R @ K.T
    return FusedEstimate(x, 0.5 * (P_new + P_new.T), rejected=False, mahalanobis2=d2)


@dataclass(frozen=True)
class ImuNoise:
    bias: tuple = (0.0, 0.0, 0.0, 0.0)
    sigma: tuple = (0.0, 0.0, 0.0, 0.0)


@dataclass
class Localizer:
    """EKF plus the synthetic sensors feeding it; owns its random streams."""

    tag_map: TagMap
    camera_to_rig: RigidTransform
    tag_noise: NoiseParams
    imu_noise: ImuNoise
    process: ProcessNoise
    measurement: MeasurementNoise
    tag_rng: np.random.Generator
    imu_rng: np.random.Generator
    fov_limit: float = 1.0
    range_limit: float = 3.0
    estimate: FusedEstimate | None = None
    last_tag_pose: PlanarPose | None = None
    rejections: int = field(default=0)

    def imu_sample(self, true_accel) -> np.ndarray:
        n = self.imu_rng.normal(size=4) * np.asarray(self.imu_noise.sigma)
        return np.asarray(true_accel) + np.asarray(self.imu_noise.bias) + n

    def predict(self, accel, dt: float):
        self.estimate = ekf_predict(self.estimate, accel, dt, self.process)

    def tag_update(self, true_pose: RigidTransform, timestamp: float) -> list[PlanarPose]:
        obs = observe_tags(
            true_pose, self.tag_map, self.camera_to_rig, self.tag_noise,
            self.fov_limit, self.range_limit, self.tag_rng, timestamp,
        )
        poses = []
        for o in obs:  # id order
            meas = to_planar(pose_from_tag(o, self.tag_map, self.camera_to_rig))
            poses.append(meas)
            self.estimate = ekf_update(self.estimate, meas, self.measurement)
            if self.estimate.rejected:
                self.rejections += 1
        if poses:
            self.last_tag_pose = poses[-1]
        return poses
