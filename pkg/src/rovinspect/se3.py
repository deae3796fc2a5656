"""Rigid transforms in 3-D and the planar (x, y, z, yaw) pose used for control.

A ``RigidTransform`` ``T_a_b`` maps coordinates expressed in frame ``b`` into
frame ``a``: ``p_a = R @ p_b + t``.  Chaining therefore reads left to right,
``T_a_c = compose(T_a_b, T_b_c)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Re-orthonormalize a transform once this many compositions have accumulated.
REORTHO_INTERVAL = 1000


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(angle, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def yaw_matrix(psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues' formula for a rotation of ``angle`` about unit ``axis``."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def gram_schmidt(R: np.ndarray) -> np.ndarray:
    """Orthonormalize the columns of ``R`` (first column keeps its direction)."""
    c0 = R[:, 0] / np.linalg.norm(R[:, 0])
    c1 = R[:, 1] - (c0 @ R[:, 1]) * c0
    c1 = c1 / np.linalg.norm(c1)
    c2 = np.cross(c0, c1)
    return np.column_stack((c0, c1, c2))


class InvalidTransform(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray
    # Compositions since the rotation was last orthonormalized.
    compositions: int = field(default=0, compare=False)

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidTransform("non-finite transform entries")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise InvalidTransform("rotation is not a proper orthonormal matrix")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> RigidTransform:
        return cls(np.eye(3), np.array([x, y, z], dtype=float))

    @classmethod
    def from_yaw(cls, psi: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(yaw_matrix(psi), np.asarray(translation, dtype=float))

    @classmethod
    def from_matrix(cls, H: np.ndarray) -> RigidTransform:
        H = np.asarray(H, dtype=float)
        return cls(H[:3, :3], H[:3, 3])

    @classmethod
    def from_planar(cls, pose: PlanarPose) -> RigidTransform:
        return cls.from_yaw(pose.psi, (pose.x, pose.y, pose.z))

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        H = np.eye(4)
        H[:3, :3] = self.rotation
        H[:3, 3] = self.translation
        return H

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def to_flat(self) -> list[float]:
        """Row-major rotation (9 numbers) followed by the translation (3)."""
        return [float(v) for v in self.rotation.reshape(-1)] + [float(v) for v in self.translation]

    @classmethod
    def from_flat(cls, values) -> RigidTransform:
        values = [float(v) for v in values]
        if len(values) != 12:
            raise InvalidTransform(f"expected 12 numbers, got {len(values)}")
        return cls(np.array(values[:9]).reshape(3, 3), np.array(values[9:]))

    def allclose(self, other: RigidTransform, atol: float = 1e-12) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)


def _trusted(R: np.ndarray, t: np.ndarray, n: int) -> RigidTransform:
    # Skip validation for products of already valid transforms.
    out = object.__new__(RigidTransform)
    R.flags.writeable = False
    t.flags.writeable = False
    object.__setattr__(out, "rotation", R)
    object.__setattr__(out, "translation", t)
    object.__setattr__(out, "compositions", n)
    return out


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Apply ``b`` first, then ``a`` (homogeneous product ``a @ b``)."""
    R = a.rotation @ b.rotation
    t = a.rotation @ b.translation + a.translation
    n = max(a.compositions, b.compositions) + 1
    if n >= REORTHO_INTERVAL:
        R = gram_schmidt(R)
        n = 0
    return _trusted(R, t, n)


def invert(t: RigidTransform) -> RigidTransform:
    Rt = t.rotation.T.copy()
    return _trusted(Rt, -(Rt @ t.translation), t.compositions)


def chain_rig_pose(
    map_to_tag: RigidTransform, tag_to_camera: RigidTransform, camera_to_rig: RigidTransform
) -> RigidTransform:
    """Rig pose in the map: ``T_map_tag * T_tag_camera * T_camera_rig``."""
    return compose(compose(map_to_tag, tag_to_camera), camera_to_rig)


@dataclass(frozen=True)
class PlanarPose:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    psi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "psi", wrap_angle(float(self.psi)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.psi])

    @classmethod
    def from_array(cls, a) -> PlanarPose:
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


def to_planar(t: RigidTransform) -> PlanarPose:
    """Project onto (x, y, z, yaw); roll and pitch are dropped."""
    R = t.rotation
    x, y, z = (float(v) for v in t.translation)
    return PlanarPose(x, y, z, math.atan2(R[1, 0], R[0, 0]))
