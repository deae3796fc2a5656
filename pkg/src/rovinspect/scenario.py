"""Scenario configuration: dataclasses plus YAML loading/dumping (schema version 1).

See ``docs/formats.md`` for the file layout.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .controllers import PAPER_NFC_GAINS, PAPER_PID_GAINS, NfcGains, PidAxisGains, PidGains
from .dynamics import DEFAULT_LIMITS, ModelParams
from .localization import (
    ImuNoise,
    MeasurementNoise,
    NoiseParams,
    ProcessNoise,
    Tag,
    TagMap,
    forward_camera,
    wall_tag_pose,
)
from .planner import DEFAULT_YAW_RATE, BoundaryPolygon

SCHEMA_VERSION = 1

TANK_LENGTH = 2.59
TANK_WIDTH = 1.70
TANK_HEIGHT = 0.61


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class DisturbanceSpec:
    """Body-frame disturbance ``constant + amplitude * sin(2 pi f t + phase)`` from ``onset`` on."""

    constant: tuple = (0.0, 0.0, 0.0, 0.0)
    amplitude: tuple = (0.0, 0.0, 0.0, 0.0)
    frequency: float = 0.0  # Hz
    phase: float = 0.0  # rad
    onset: float = 0.0  # s

    def __post_init__(self):
        object.__setattr__(self, "constant", tuple(float(v) for v in self.constant))
        object.__setattr__(self, "amplitude", tuple(float(v) for v in self.amplitude))
        if len(self.constant) != 4 or len(self.amplitude) != 4:
            raise ScenarioError("disturbance vectors need 4 components")
        if self.frequency < 0:
            raise ScenarioError("disturbance frequency must be >= 0")

    def at(self, t: float) -> tuple:
        if t < self.onset:
            return (0.0, 0.0, 0.0, 0.0)
        s = math.sin(2.0 * math.pi * self.frequency * t + self.phase)
        return tuple(c + a * s for c, a in zip(self.constant, self.amplitude))


@dataclass(frozen=True)
class PathSpec:
    boundary: tuple = ((0.0, 0.0), (TANK_LENGTH, 0.0), (TANK_LENGTH, TANK_WIDTH), (0.0, TANK_WIDTH))
    depth: float = 0.35
    margin: float = 0.4
    speed: float = 0.1
    yaw_rate: float = DEFAULT_YAW_RATE
    smooth: bool = False
    start: tuple | None = None

    def polygon(self) -> BoundaryPolygon:
        return BoundaryPolygon(self.boundary, self.depth)


@dataclass(frozen=True)
class LocalizationSpec:
    enabled: bool = True
    tag_map_file: str | None = None
    camera_offset: tuple = (0.1, 0.0, 0.0)
    fov: float = 1.05  # rad, half-angle
    range: float = 3.0  # m
    tag_rate: float = 10.0  # Hz
    imu_rate: float = 100.0  # Hz
    tag_noise: NoiseParams = NoiseParams(0.01, 0.01)
    imu: ImuNoise = ImuNoise((0.0, 0.0, 0.0, 0.0), (0.02, 0.02, 0.02, 0.02))
    # velocity intensity = imu sigma^2 * imu period
    process: ProcessNoise = ProcessNoise((1e-8, 1e-8, 1e-8, 1e-8), (4e-6, 4e-6, 4e-6, 4e-6))
    measurement: MeasurementNoise = MeasurementNoise((0.012, 0.012, 0.012, 0.012))


@dataclass(frozen=True)
class Scenario:
    name: str = "tank"
    seed: int = 0
    dt: float = 0.01
    duration: float = 120.0
    controller: str = "nfc"
    plant: ModelParams = ModelParams()
    nominal: ModelParams = ModelParams()
    limits: tuple | None = DEFAULT_LIMITS
    nfc_gains: NfcGains = PAPER_NFC_GAINS
    pid_gains: PidGains = PAPER_PID_GAINS
    path: PathSpec = PathSpec()
    tank: tuple = (TANK_LENGTH, TANK_WIDTH, TANK_HEIGHT)
    localization: LocalizationSpec = LocalizationSpec()
    disturbance: DisturbanceSpec = DisturbanceSpec()
    initial_state: tuple | None = None  # x, y, z, psi, u, v, w, r
    tag_map: TagMap | None = field(default=None, compare=False)
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        if not 0.0 < self.dt <= 0.05:
            raise ScenarioError(f"dt must lie in (0, 0.05], got {self.dt}")
        if not self.duration > 0.0:
            raise ScenarioError("duration must be positive")
        if self.controller not in ("nfc", "pid"):
            raise ScenarioError(f"unknown controller {self.controller!r}")
        L, W, H = self.tank
        for x, y in self.path.boundary:
            if not (-1e-9 <= x <= L + 1e-9 and -1e-9 <= y <= W + 1e-9):
                raise ScenarioError(f"boundary vertex ({x}, {y}) lies outside the tank")
        if not 0.0 <= self.path.depth <= H:
            raise ScenarioError("inspection depth outside the tank")

    def with_(self, **changes) -> Scenario:
        return replace(self, **changes)

    def resolve_tag_map(self) -> TagMap:
        if self.tag_map is not None:
            return self.tag_map
        if self.localization.tag_map_file:
            path = Path(self.base_dir) / self.localization.tag_map_file
            return TagMap.loads(path.read_text())
        return tank_tag_map(self.tank[0], self.tank[1], self.path.depth)

    def camera_to_rig(self):
        return forward_camera(self.localization.camera_offset)


def tank_tag_map(
    length: float = TANK_LENGTH, width: float = TANK_WIDTH, depth: float = 0.35, corner_inset: float = 0.3
) -> TagMap:
    """Eight tags facing inward: three per long wall (two near the corners), one per short wall."""
    a, b = corner_inset, length - corner_inset
    specs = [
        ((a, 0.0), math.pi / 2),
        ((length / 2, 0.0), math.pi / 2),
        ((b, 0.0), math.pi / 2),
        ((length, width / 2), math.pi),
        ((b, width), -math.pi / 2),
        ((length / 2, width), -math.pi / 2),
        ((a, width), -math.pi / 2),
        ((0.0, width / 2), 0.0),
    ]
    return TagMap([Tag(i, wall_tag_pose((x, y, depth), yaw)) for i, ((x, y), yaw) in enumerate(specs)])


def standard_scenario(**changes) -> Scenario:
    """Tank scenario: constant current (2, 2, 0, 0.1) and tag noise 0.01 m / 0.01 rad."""
    s = Scenario(
        name="tank",
        duration=120.0,
        disturbance=DisturbanceSpec(constant=(2.0, 2.0, 0.0, 0.1)),
    )
    return replace(s, **changes) if changes else s


# ---------------------------------------------------------------------------
# YAML (de)serialization

_PARAM_FIELDS = [f.name for f in fields(ModelParams)]


def _params_from(d, base: ModelParams = ModelParams()) -> ModelParams:
    d = dict(d or {})
    scale = d.pop("scale", None) or {}
    unknown = set(d) - set(_PARAM_FIELDS)
    if unknown:
        raise ScenarioError(f"unknown model parameters: {sorted(unknown)}")
    p = replace(base, **d)
    bad = set(scale) - set(_PARAM_FIELDS)
    if bad:
        raise ScenarioError(f"cannot scale unknown parameters: {sorted(bad)}")
    return p.scaled(**scale) if scale else p


def _params_to(p: ModelParams) -> dict:
    d = asdict(p)
    d["tau_d"] = list(p.tau_d)
    return d


def _vec(v, n=4):
    v = [float(x) for x in v]
    if len(v) != n:
        raise ScenarioError(f"expected {n} numbers, got {len(v)}")
    return tuple(v)


def scenario_from_dict(d: dict, base_dir=".") -> Scenario:
    try:
        return _scenario_from_dict(d, base_dir)
    except ScenarioError:
        raise
    except (TypeError, KeyError, ValueError, AttributeError) as exc:
        raise ScenarioError(f"malformed scenario: {exc!r}") from exc


def _scenario_from_dict(d: dict, base_dir) -> Scenario:
    if d is not None and not isinstance(d, dict):
        raise ScenarioError("scenario file must contain a mapping")
    d = dict(d or {})
    version = d.pop("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported scenario schema version {version}")
    kw = {"base_dir": str(base_dir)}
    for key in ("name", "seed", "dt", "duration", "controller"):
        if key in d:
            kw[key] = d.pop(key)
    if "seed" in kw:
        kw["seed"] = int(kw["seed"])
    for key in ("dt", "duration"):
        if key in kw:
            kw[key] = float(kw[key])
    if "plant" in d:
        kw["plant"] = _params_from(d.pop("plant"))
    if "nominal" in d:
        kw["nominal"] = _params_from(d.pop("nominal"))
    if "limits" in d:
        lim = d.pop("limits")
        kw["limits"] = None if lim is None else _vec(lim)
    gains = d.pop("gains", None) or {}
    if "nfc" in gains:
        kw["nfc_gains"] = NfcGains(_vec(gains["nfc"]["K1"]), _vec(gains["nfc"]["K2"]))
    if "pid" in gains:
        g = gains["pid"]
        kw["pid_gains"] = PidGains(**{axis: PidAxisGains(**g[axis]) for axis in ("lateral", "throttle", "depth", "yaw")})
    if "path" in d:
        p = dict(d.pop("path"))
        if "boundary" in p:
            p["boundary"] = tuple(tuple(float(c) for c in v) for v in p["boundary"])
        if p.get("start") is not None:
            p["start"] = tuple(float(c) for c in p["start"])
        kw["path"] = PathSpec(**p)
    if "tank" in d:
        t = d.pop("tank")
        kw["tank"] = (float(t["length"]), float(t["width"]), float(t["height"]))
    if "localization" in d:
        loc = dict(d.pop("localization"))
        sub = {}
        if "tag_noise" in loc:
            sub["tag_noise"] = NoiseParams(**loc.pop("tag_noise"))
        if "imu" in loc:
            imu = loc.pop("imu")
            sub["imu"] = ImuNoise(_vec(imu.get("bias", (0, 0, 0, 0))), _vec(imu.get("sigma", (0, 0, 0, 0))))
        if "ekf" in loc:
            ekf = loc.pop("ekf")
            sub["process"] = ProcessNoise(_vec(ekf["process_pose"]), _vec(ekf["process_velocity"]))
            sub["measurement"] = MeasurementNoise(_vec(ekf["measurement_sigma"]))
        if "camera_offset" in loc:
            loc["camera_offset"] = _vec(loc["camera_offset"], 3)
        kw["localization"] = LocalizationSpec(**loc, **sub)
    if "disturbance" in d:
        kw["disturbance"] = DisturbanceSpec(**d.pop("disturbance"))
    if "initial_state" in d:
        init = d.pop("initial_state")
        kw["initial_state"] = None if init is None else _vec(init, 8)
    if d:
        raise ScenarioError(f"unknown scenario keys: {sorted(d)}")
    return Scenario(**kw)


def scenario_to_dict(s: Scenario) -> dict:
    loc = s.localization
    return {
        "version": SCHEMA_VERSION,
        "name": s.name,
        "seed": s.seed,
        "dt": s.dt,
        "duration": s.duration,
        "controller": s.controller,
        "plant": _params_to(s.plant),
        "nominal": _params_to(s.nominal),
        "limits": None if s.limits is None else list(s.limits),
        "gains": {
            "nfc": {"K1": np.diag(s.nfc_gains.K1).tolist(), "K2": np.diag(s.nfc_gains.K2).tolist()},
            "pid": {k: asdict(v) for k, v in asdict_shallow(s.pid_gains).items()},
        },
        "path": {
            "boundary": [list(v) for v in s.path.boundary],
            "depth": s.path.depth,
            "margin": s.path.margin,
            "speed": s.path.speed,
            "yaw_rate": s.path.yaw_rate,
            "smooth": s.path.smooth,
            "start": None if s.path.start is None else list(s.path.start),
        },
        "tank": {"length": s.tank[0], "width": s.tank[1], "height": s.tank[2]},
        "localization": {
            "enabled": loc.enabled,
            "tag_map_file": loc.tag_map_file,
            "camera_offset": list(loc.camera_offset),
            "fov": loc.fov,
            "range": loc.range,
            "tag_rate": loc.tag_rate,
            "imu_rate": loc.imu_rate,
            "tag_noise": asdict(loc.tag_noise),
            "imu": {"bias": list(loc.imu.bias), "sigma": list(loc.imu.sigma)},
            "ekf": {
                "process_pose": list(loc.process.pose),
                "process_velocity": list(loc.process.velocity),
                "measurement_sigma": list(loc.measurement.sigma),
            },
        },
        "disturbance": {
            "constant": list(s.disturbance.constant),
            "amplitude": list(s.disturbance.amplitude),
            "frequency": s.disturbance.frequency,
            "phase": s.disturbance.phase,
            "onset": s.disturbance.onset,
        },
        "initial_state": None if s.initial_state is None else list(s.initial_state),
    }


def asdict_shallow(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    return scenario_from_dict(data, base_dir=path.parent)


def dump_scenario(s: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(s), sort_keys=False)
