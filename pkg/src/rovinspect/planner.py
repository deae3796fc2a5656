"""Inward-offset inspection path and the mission state machine that walks it."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .controllers import ReferencePoint
from .se3 import PlanarPose, wrap_angle

ACCEPT_RADIUS = 0.05  # m
ACCEPT_YAW = 0.05  # rad
TURN_DONE_YAW = 0.02  # rad
DEFAULT_YAW_RATE = 0.2  # rad/s
RAMP_TIME = 0.5  # s, smoothed-reference velocity ramps


class PlanningError(ValueError):
    pass


class MarginTooLarge(PlanningError):
    pass


def _signed_area(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _is_convex_ccw(vertices) -> bool:
    v = np.asarray(vertices, dtype=float)
    n = len(v)
    for i in range(n):
        a, b, c = v[i], v[(i + 1) % n], v[(i + 2) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if cross <= 0.0:
            return False
    return True


@dataclass(frozen=True)
class BoundaryPolygon:
    """Convex, counterclockwise polygon at a constant inspection depth."""

    vertices: tuple
    depth: float = 0.0

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise PlanningError("polygon needs at least 3 vertices")
        if _signed_area(verts) <= 0.0:
            raise PlanningError("polygon must be counterclockwise")
        if not _is_convex_ccw(verts):
            raise PlanningError("only convex polygons are supported")
        object.__setattr__(self, "vertices", verts)

    def __len__(self):
        return len(self.vertices)

    def edges(self):
        n = len(self.vertices)
        return [(self.vertices[i], self.vertices[(i + 1) % n]) for i in range(n)]

    def perimeter(self) -> float:
        return sum(math.dist(a, b) for a, b in self.edges())


def point_segment_distance(p, a, b) -> float:
    p, a, b = (np.asarray(q, dtype=float) for q in (p, a, b))
    ab = b - a
    t = float(np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def offset_inward(boundary: BoundaryPolygon, margin: float) -> BoundaryPolygon:
    """Shift every edge inward by ``margin`` and intersect neighbouring edges."""
    if not margin > 0.0:
        raise PlanningError("margin must be positive")
    verts = np.asarray(boundary.vertices)
    n = len(verts)
    lines = []
    for i in range(n):
        a, b = verts[i], verts[(i + 1) % n]
        d = (b - a) / np.linalg.norm(b - a)
        inward = np.array([-d[1], d[0]])  # left normal points inside for CCW
        lines.append((a + margin * inward, d))
    out = []
    for i in range(n):
        p1, d1 = lines[i - 1]
        p2, d2 = lines[i]
        den = d1[0] * d2[1] - d1[1] * d2[0]
        diff = p2 - p1
        s = (diff[0] * d2[1] - diff[1] * d2[0]) / den
        out.append(p1 + s * d1)
    # Each new edge must keep the direction of the edge it came from.
    for i in range(n):
        new_edge = out[(i + 1) % n] - out[i]
        if np.dot(new_edge, lines[i][1]) <= 1e-12:
            raise MarginTooLarge(f"margin {margin} collapses the polygon")
    try:
        return BoundaryPolygon(tuple(map(tuple, out)), boundary.depth)
    except PlanningError as exc:
        raise MarginTooLarge(f"margin {margin} collapses the polygon") from exc


@dataclass(frozen=True)
class InspectionPlan:
    offset_polygon: BoundaryPolygon
    waypoints: tuple  # PlanarPose per offset vertex, in traversal order
    speed: float
    margin: float
    yaw_rate: float = DEFAULT_YAW_RATE
    smooth: bool = False

    @property
    def n_edges(self) -> int:
        return len(self.waypoints)

    def edge(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        a = self.waypoints[i]
        b = self.waypoints[(i + 1) % len(self.waypoints)]
        return np.array([a.x, a.y]), np.array([b.x, b.y])

    def edge_length(self, i: int) -> float:
        a, b = self.edge(i)
        return float(np.linalg.norm(b - a))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "z", "psi"])
        for wp in self.waypoints:
            w.writerow([f"{wp.x:.9g}", f"{wp.y:.9g}", f"{wp.z:.9g}", f"{wp.psi:.9g}"])
        return buf.getvalue()


def build_plan(
    boundary: BoundaryPolygon,
    margin: float,
    speed: float,
    start=None,
    yaw_rate: float = DEFAULT_YAW_RATE,
    smooth: bool = False,
) -> InspectionPlan:
    """Waypoints on the offset polygon, each facing outward toward the net.

    Traversal is counterclockwise and starts at the offset vertex nearest to
    ``start`` (an (x, y) pair); with no start the first vertex is used.
    """
    if not speed > 0.0:
        raise PlanningError("speed must be positive")
    inner = offset_inward(boundary, margin)
    verts = list(inner.vertices)
    k = 0
    if start is not None:
        k = int(np.argmin([math.dist(v, (start[0], start[1])) for v in verts]))
    verts = verts[k:] + verts[:k]
    n = len(verts)
    waypoints = []
    for i in range(n):
        (ax, ay), (bx, by) = verts[i], verts[(i + 1) % n]
        # outward normal of a CCW edge is (dy, -dx)
        heading = math.atan2(-(bx - ax), by - ay)
        waypoints.append(PlanarPose(ax, ay, boundary.depth, heading))
    rotated = BoundaryPolygon(tuple(verts), boundary.depth)
    return InspectionPlan(rotated, tuple(waypoints), float(speed), float(margin), yaw_rate, smooth)


class Mode(enum.IntEnum):
    TRANSIT_TO_START = 0
    FOLLOW_EDGE = 1
    CORNER_TURN = 2
    DONE = 3


@dataclass(frozen=True)
class MissionState:
    mode: Mode = Mode.TRANSIT_TO_START
    edge: int = 0
    progress: float = 0.0  # m along the current edge
    psi_ref: float | None = None  # reference yaw carried between ticks
    elapsed: float = 0.0  # s spent on the current edge

    def label(self) -> str:
        if self.mode in (Mode.FOLLOW_EDGE, Mode.CORNER_TURN):
            return f"{self.mode.name}({self.edge})"
        return self.mode.name


def _slew(current: float, target: float, max_step: float) -> float:
    diff = wrap_angle(target - current)
    if abs(diff) <= max_step:
        return target
    return wrap_angle(current + math.copysign(max_step, diff))


def _trapezoid(t: float, length: float, speed: float, ramp: float) -> tuple[float, float, float]:
    """Distance, speed and acceleration along an edge for a trapezoidal profile."""
    ramp = min(ramp, length / speed)
    total = length / speed + ramp
    acc = speed / ramp
    if t <= 0.0:
        return 0.0, 0.0, 0.0
    if t >= total:
        return length, 0.0, 0.0
    if t < ramp:
        return 0.5 * acc * t * t, acc * t, acc
    if t <= total - ramp:
        return 0.5 * speed * ramp + speed * (t - ramp), speed, 0.0
    rem = total - t
    return length - 0.5 * acc * rem * rem, acc * rem, -acc


def _edge_reference(plan: InspectionPlan, i: int, s: float, vel: float, acc: float, psi: float, psi_dot: float):
    a, b = plan.edge(i)
    length = float(np.linalg.norm(b - a))
    d = (b - a) / length
    p = a + d * s if s < length else b
    z = plan.waypoints[i].z
    return ReferencePoint(
        PlanarPose(float(p[0]), float(p[1]), z, psi),
        (float(d[0] * vel), float(d[1] * vel), 0.0, psi_dot),
        (float(d[0] * acc), float(d[1] * acc), 0.0, 0.0),
    )


def _hold(wp: PlanarPose, psi: float, psi_dot: float = 0.0) -> ReferencePoint:
    return ReferencePoint(PlanarPose(wp.x, wp.y, wp.z, psi), (0.0, 0.0, 0.0, psi_dot))


def advance(
    mission: MissionState, plan: InspectionPlan, current: PlanarPose, dt: float
) -> tuple[MissionState, ReferencePoint]:
    """One tick of the mission state machine; returns the new state and its reference."""
    n = plan.n_edges
    max_turn = plan.yaw_rate * dt

    if mission.mode == Mode.TRANSIT_TO_START:
        wp = plan.waypoints[0]
        psi = wp.psi if mission.psi_ref is None else mission.psi_ref
        near = math.hypot(current.x - wp.x, current.y - wp.y) < ACCEPT_RADIUS and abs(current.z - wp.z) < ACCEPT_RADIUS
        if near and abs(wrap_angle(current.psi - wp.psi)) < ACCEPT_YAW:
            mission = MissionState(Mode.FOLLOW_EDGE, 0, 0.0, psi, 0.0)
            return mission, _edge_reference(plan, 0, 0.0, 0.0, 0.0, psi, 0.0)
        return replace(mission, psi_ref=psi), _hold(wp, psi)

    if mission.mode == Mode.FOLLOW_EDGE:
        i = mission.edge
        length = plan.edge_length(i)
        target = plan.waypoints[i].psi
        psi = _slew(mission.psi_ref, target, max_turn)
        psi_dot = wrap_angle(psi - mission.psi_ref) / dt
        elapsed = mission.elapsed + dt
        if plan.smooth:
            s, vel, acc = _trapezoid(elapsed, length, plan.speed, RAMP_TIME)
            finished = s >= length
        else:
            s = min(mission.progress + plan.speed * dt, length)
            vel, acc = plan.speed, 0.0
            finished = s >= length
        if finished:
            wp = plan.waypoints[(i + 1) % n]
            if i == n - 1:
                return MissionState(Mode.DONE, i, length, psi, elapsed), _hold(wp, psi)
            return MissionState(Mode.CORNER_TURN, i, length, psi, elapsed), _hold(wp, psi)
        state = MissionState(Mode.FOLLOW_EDGE, i, s, psi, elapsed)
        return state, _edge_reference(plan, i, s, vel, acc, psi, psi_dot)

    if mission.mode == Mode.CORNER_TURN:
        i = mission.edge
        wp = plan.waypoints[i + 1]
        psi = _slew(mission.psi_ref, wp.psi, max_turn)
        psi_dot = wrap_angle(psi - mission.psi_ref) / dt
        if abs(wrap_angle(wp.psi - psi)) < TURN_DONE_YAW:
            state = MissionState(Mode.FOLLOW_EDGE, i + 1, 0.0, psi, 0.0)
            return state, _edge_reference(plan, i + 1, 0.0, 0.0, 0.0, psi, psi_dot)
        return replace(mission, psi_ref=psi), _hold(wp, psi, psi_dot)

    # DONE: frozen at the final waypoint
    wp = plan.waypoints[0]
    psi = mission.psi_ref if mission.psi_ref is not None else wp.psi
    return mission, _hold(wp, psi)
