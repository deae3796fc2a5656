"""4-DoF (surge, sway, heave, yaw) ROV model and its RK4 integration.

Body frame equation of motion::

    M nu_dot + C(nu) nu + D(nu) nu + g + tau_d = tau
    eta_dot = J(psi) nu

with ``eta = [x, y, z, psi]`` in the world frame and ``nu = [u, v, w, r]`` in
the body frame.  ``tau`` is the commanded wrench, ``tau_d`` the disturbance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .se3 import PlanarPose, wrap_angle

BODY = "body"
WORLD = "world"

# Default actuator limits: +-40 N on each force axis, +-10 N m in yaw.
DEFAULT_LIMITS = (40.0, 40.0, 40.0, 10.0)


class IntegrationDiverged(RuntimeError):
    """Raised when the state becomes non-finite; carries the last good state."""

    def __init__(self, message: str, last_state: VehicleState):
        super().__init__(message)
        self.last_state = last_state


@dataclass(frozen=True)
class BodyVelocity:
    u: float = 0.0
    v: float = 0.0
    w: float = 0.0
    r: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.u, self.v, self.w, self.r)):
            raise ValueError("non-finite body velocity")

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v, self.w, self.r])

    @classmethod
    def from_array(cls, a) -> BodyVelocity:
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class VehicleState:
    eta: PlanarPose = field(default_factory=PlanarPose)
    nu: BodyVelocity = field(default_factory=BodyVelocity)

    def as_array(self) -> np.ndarray:
        return np.concatenate((self.eta.as_array(), self.nu.as_array()))

    @classmethod
    def from_array(cls, x) -> VehicleState:
        return cls(PlanarPose.from_array(x[:4]), BodyVelocity.from_array(x[4:8]))


@dataclass(frozen=True)
class ModelParams:
    m11: float = 25.2
    m22: float = 25.2
    m33: float = 25.2
    m44: float = 0.402
    c_m11: float = 12.5
    c_m22: float = 12.5
    d_l1: float = 5.5
    d_l2: float = 7.0
    d_l3: float = 8.0
    d_l4: float = 1.0
    d_n1: float = 0.0
    d_n2: float = 0.0
    d_n3: float = 0.0
    d_n4: float = 0.0
    buoyancy_minus_weight: float = 0.0
    tau_d: tuple = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "tau_d", tuple(float(v) for v in self.tau_d))
        if len(self.tau_d) != 4:
            raise ValueError("tau_d must have 4 components")
        if min(self.m11, self.m22, self.m33, self.m44) <= 0:
            raise ValueError("mass matrix diagonal must be positive")
        if min(self.d_l1, self.d_l2, self.d_l3, self.d_l4, self.d_n1, self.d_n2, self.d_n3, self.d_n4) < 0:
            raise ValueError("damping coefficients must be non-negative")

    @property
    def mass_diag(self) -> np.ndarray:
        return np.array([self.m11, self.m22, self.m33, self.m44])

    @property
    def g_vector(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.buoyancy_minus_weight, 0.0])

    def scaled(self, **factors: float) -> ModelParams:
        """Copy with selected fields multiplied, e.g. ``scaled(m11=1.2)``."""
        return replace(self, **{k: getattr(self, k) * f for k, f in factors.items()})

    def with_disturbance(self, tau_d) -> ModelParams:
        return replace(self, tau_d=tuple(tau_d))


@dataclass(frozen=True)
class ControlWrench:
    fx: float = 0.0
    fy: float = 0.0
    fz: float = 0.0
    mz: float = 0.0
    frame: str = BODY

    def __post_init__(self):
        if self.frame not in (BODY, WORLD):
            raise ValueError(f"unknown frame {self.frame!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.fz, self.mz])

    @classmethod
    def from_array(cls, a, frame: str = BODY) -> ControlWrench:
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]), frame)

    def to_body(self, psi: float) -> ControlWrench:
        if self.frame == BODY:
            return self
        # tau_body = J(psi)^T tau_world
        return ControlWrench.from_array(transform_J(psi).T @ self.as_array(), BODY)

    def to_world(self, psi: float) -> ControlWrench:
        if self.frame == WORLD:
            return self
        return ControlWrench.from_array(transform_J(psi) @ self.as_array(), WORLD)


def saturate(tau: ControlWrench, limits=DEFAULT_LIMITS) -> tuple[ControlWrench, bool]:
    """Clamp each component to +-limit; returns the clamped wrench and whether any clipped."""
    if limits is None:
        return tau, False
    a = tau.as_array()
    lim = np.asarray(limits, dtype=float)
    clipped = np.clip(a, -lim, lim)
    return ControlWrench.from_array(clipped, tau.frame), bool(np.any(clipped != a))


def mass_matrix(p: ModelParams) -> np.ndarray:
    return np.diag(p.mass_diag)


def coriolis_matrix(p: ModelParams, nu: BodyVelocity) -> np.ndarray:
    C = np.zeros((4, 4))
    C[0, 3] = -p.c_m22 * nu.v
    C[1, 3] = p.c_m11 * nu.u
    C[3, 0] = p.c_m22 * nu.v
    C[3, 1] = -p.c_m11 * nu.u
    return C


def damping_matrix(p: ModelParams, nu: BodyVelocity) -> np.ndarray:
    return np.diag(
        [
            p.d_l1 + p.d_n1 * abs(nu.u),
            p.d_l2 + p.d_n2 * abs(nu.v),
            p.d_l3 + p.d_n3 * abs(nu.w),
            p.d_l4 + p.d_n4 * abs(nu.r),
        ]
    )


def transform_J(psi: float) -> np.ndarray:
    """Body-to-world velocity transform."""
    c, s = math.cos(psi), math.sin(psi)
    return np.array(
        [[c, -s, 0.0, 0.0], [s, c, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
    )


def transform_J_dot(psi: float, r: float) -> np.ndarray:
    """Time derivative of J: dJ/dpsi * r."""
    c, s = math.cos(psi), math.sin(psi)
    Jd = np.zeros((4, 4))
    Jd[0, 0], Jd[0, 1] = -s * r, -c * r
    Jd[1, 0], Jd[1, 1] = c * r, -s * r
    return Jd


def _accel(p: ModelParams, u, v, w, r, t0, t1, t2, t3, d0, d1, d2, d3):
    # Scalar expansion of M^-1 (tau - C nu - D nu - g - tau_d) for the diagonal M.
    cu = -p.c_m22 * v * r
    cv = p.c_m11 * u * r
    cr = p.c_m22 * v * u - p.c_m11 * u * v
    return (
        (t0 - cu - (p.d_l1 + p.d_n1 * abs(u)) * u - d0) / p.m11,
        (t1 - cv - (p.d_l2 + p.d_n2 * abs(v)) * v - d1) / p.m22,
        (t2 - (p.d_l3 + p.d_n3 * abs(w)) * w - p.buoyancy_minus_weight - d2) / p.m33,
        (t3 - cr - (p.d_l4 + p.d_n4 * abs(r)) * r - d3) / p.m44,
    )


def body_accel(state: VehicleState, p: ModelParams, tau_body: ControlWrench) -> np.ndarray:
    """nu_dot = M^-1 (tau - C(nu) nu - D(nu) nu - g - tau_d)."""
    if tau_body.frame != BODY:
        raise ValueError("body_accel expects a body-frame wrench")
    tau = tau_body.as_array()
    if not np.all(np.isfinite(tau)) or not np.all(np.isfinite(state.as_array())):
        raise ValueError("non-finite input to body_accel")
    n = state.nu
    return np.array(_accel(p, n.u, n.v, n.w, n.r, *tau, *p.tau_d))


@dataclass(frozen=True)
class WorldTerms:
    M_eta: np.ndarray
    C_eta: np.ndarray
    D_eta: np.ndarray
    g_eta: np.ndarray
    tau_e: np.ndarray


def world_dynamics_terms(state: VehicleState, p: ModelParams) -> WorldTerms:
    """World-frame form ``M_eta eta_ddot + (C_eta + D_eta) eta_dot + g_eta + tau_e = tau_eta``."""
    psi, nu = state.eta.psi, state.nu
    J = transform_J(psi)
    Jinv = J.T
    JinvT = J
    M = mass_matrix(p)
    Jdot = transform_J_dot(psi, nu.r)
    return WorldTerms(
        M_eta=JinvT @ M @ Jinv,
        C_eta=JinvT @ (coriolis_matrix(p, nu) - M @ Jinv @ Jdot) @ Jinv,
        D_eta=JinvT @ damping_matrix(p, nu) @ Jinv,
        g_eta=JinvT @ p.g_vector,
        tau_e=JinvT @ np.asarray(p.tau_d),
    )


def _deriv(x, p: ModelParams, tau, tau_d):
    psi, u, v, w, r = x[3], x[4], x[5], x[6], x[7]
    c, s = math.cos(psi), math.sin(psi)
    a = _accel(p, u, v, w, r, tau[0], tau[1], tau[2], tau[3], *tau_d)
    return (c * u - s * v, s * u + c * v, w, r, a[0], a[1], a[2], a[3])


def rk4_step(x, p: ModelParams, tau, dt: float, tau_d=None) -> list[float]:
    """One RK4 step on the raw 8-vector ``[eta, nu]``; ``tau`` is body frame."""
    if tau_d is None:
        tau_d = p.tau_d
    k1 = _deriv(x, p, tau, tau_d)
    x2 = [x[i] + 0.5 * dt * k1[i] for i in range(8)]
    k2 = _deriv(x2, p, tau, tau_d)
    x3 = [x[i] + 0.5 * dt * k2[i] for i in range(8)]
    k3 = _deriv(x3, p, tau, tau_d)
    x4 = [x[i] + dt * k3[i] for i in range(8)]
    k4 = _deriv(x4, p, tau, tau_d)
    h = dt / 6.0
    out = [x[i] + h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(8)]
    out[3] = wrap_angle(out[3])
    return out


def rk4_step_feedback(x, t: float, p: ModelParams, policy, dt: float) -> list[float]:
    """RK4 step with the wrench re-evaluated at every stage.

    ``policy(t, x)`` returns a body-frame wrench; this realizes continuous state
    feedback instead of a zero-order hold over the step.
    """
    td = p.tau_d
    k1 = _deriv(x, p, policy(t, x), td)
    x2 = [x[i] + 0.5 * dt * k1[i] for i in range(8)]
    k2 = _deriv(x2, p, policy(t + 0.5 * dt, x2), td)
    x3 = [x[i] + 0.5 * dt * k2[i] for i in range(8)]
    k3 = _deriv(x3, p, policy(t + 0.5 * dt, x3), td)
    x4 = [x[i] + dt * k3[i] for i in range(8)]
    k4 = _deriv(x4, p, policy(t + dt, x4), td)
    h = dt / 6.0
    out = [x[i] + h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(8)]
    out[3] = wrap_angle(out[3])
    return out


def step(
    state: VehicleState, p: ModelParams, tau: ControlWrench, dt: float, limits=DEFAULT_LIMITS
) -> VehicleState:
    """Advance the state by one RK4 step of length ``dt`` (0 < dt <= 0.05 s).

    ``tau`` may be given in either frame; it is converted to the body frame and
    saturated, then held constant over the step.
    """
    if not 0.0 < dt <= 0.05:
        raise ValueError(f"dt must lie in (0, 0.05], got {dt}")
    tau_b, _ = saturate(tau.to_body(state.eta.psi), limits)
    out = rk4_step(state.as_array().tolist(), p, tau_b.as_array().tolist(), dt)
    if not all(math.isfinite(v) for v in out):
        raise IntegrationDiverged("state became non-finite", state)
    return VehicleState.from_array(out)


def world_accel(eta, eta_dot, p: ModelParams, tau_world) -> np.ndarray:
    """eta_ddot from the world-frame form, used to cross-check the body-frame model."""
    J = transform_J(eta[3])
    nu = BodyVelocity.from_array(J.T @ np.asarray(eta_dot))
    terms = world_dynamics_terms(VehicleState(PlanarPose.from_array(eta), nu), p)
    rhs = (
        np.asarray(tau_world)
        - (terms.C_eta + terms.D_eta) @ np.asarray(eta_dot)
        - terms.g_eta
        - terms.tau_e
    )
    return np.linalg.solve(terms.M_eta, rhs)


def kinetic_energy(p: ModelParams, nu: BodyVelocity) -> float:
    a = nu.as_array()
    return 0.5 * float(a @ (p.mass_diag * a))
