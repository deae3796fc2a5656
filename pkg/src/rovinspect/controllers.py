"""Tracking-error dynamics, the nominal feedback (feedback-linearizing) law and a PID baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    BODY,
    DEFAULT_LIMITS,
    WORLD,
    BodyVelocity,
    ControlWrench,
    ModelParams,
    VehicleState,
    rk4_step,
    saturate,
    transform_J,
    world_dynamics_terms,
)
from .se3 import PlanarPose, wrap_angle

_ZERO4 = (0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ReferencePoint:
    eta_d: PlanarPose
    eta_d_dot: tuple = _ZERO4
    eta_d_ddot: tuple = _ZERO4

    def __post_init__(self):
        object.__setattr__(self, "eta_d_dot", tuple(float(v) for v in self.eta_d_dot))
        object.__setattr__(self, "eta_d_ddot", tuple(float(v) for v in self.eta_d_ddot))
        if not all(math.isfinite(v) for v in self.eta_d_dot + self.eta_d_ddot):
            raise ValueError("non-finite reference derivatives")


@dataclass(frozen=True)
class TrackingError:
    eps: np.ndarray
    eps_dot: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate((self.eps, self.eps_dot))


def tracking_error(state: VehicleState, ref: ReferencePoint) -> TrackingError:
    """eps = eta - eta_d (yaw wrapped), eps_dot = J(psi) nu - eta_d_dot."""
    eps = state.eta.as_array() - ref.eta_d.as_array()
    eps[3] = wrap_angle(eps[3])
    eps_dot = transform_J(state.eta.psi) @ state.nu.as_array() - np.asarray(ref.eta_d_dot)
    return TrackingError(eps, eps_dot)


@dataclass(frozen=True, eq=False)
class NfcGains:
    """Diagonal gain blocks; the feedback is ``K1 @ eps + K2 @ eps_dot``.

    Stabilizing gains are negative definite, e.g. ``K1 = diag(-300, ...)``.
    """

    K1: np.ndarray
    K2: np.ndarray

    def __post_init__(self):
        K1 = np.asarray(self.K1, dtype=float)
        K2 = np.asarray(self.K2, dtype=float)
        K1 = np.diag(K1) if K1.ndim == 1 else K1
        K2 = np.diag(K2) if K2.ndim == 1 else K2
        if K1.shape != (4, 4) or K2.shape != (4, 4):
            raise ValueError("NFC gain blocks must be 4x4")
        object.__setattr__(self, "K1", K1)
        object.__setattr__(self, "K2", K2)

    @property
    def K(self) -> np.ndarray:
        return np.hstack((self.K1, self.K2))

    def __eq__(self, other):
        if not isinstance(other, NfcGains):
            return NotImplemented
        return bool(np.array_equal(self.K1, other.K1) and np.array_equal(self.K2, other.K2))


PAPER_NFC_GAINS = NfcGains(
    K1=[-300.0, -350.0, -1500.0, -250.0],
    K2=[-100.0, -70.0, -300.0, -60.0],
)


@dataclass(frozen=True)
class ErrorSystem:
    A: np.ndarray
    B: np.ndarray
    N: np.ndarray


def error_system_matrices(state: VehicleState, p: ModelParams) -> ErrorSystem:
    """Linear-in-structure error dynamics ``e_dot = A e + B f``."""
    terms = world_dynamics_terms(state, p)
    N = -np.linalg.solve(terms.M_eta, terms.C_eta + terms.D_eta)
    A = np.zeros((8, 8))
    A[:4, 4:] = np.eye(4)
    A[4:, 4:] = N
    B = np.vstack((np.zeros((4, 4)), np.eye(4)))
    return ErrorSystem(A, B, N)


def closed_loop_matrix(gains: NfcGains, state: VehicleState, p: ModelParams) -> np.ndarray:
    es = error_system_matrices(state, p)
    return es.A + es.B @ gains.K


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    eigenvalues: np.ndarray


def verify_stability(gains: NfcGains, p: ModelParams, nu: BodyVelocity = BodyVelocity()) -> StabilityReport:
    """Eigenvalues of the closed-loop error matrix at the operating point ``nu``.

    The result does not depend on heading, so yaw is taken as zero.
    """
    A1 = closed_loop_matrix(gains, VehicleState(PlanarPose(), nu), p)
    eig = np.linalg.eigvals(A1)
    eig = eig[np.lexsort((eig.imag, eig.real))]
    return StabilityReport(bool(np.all(eig.real < 0.0)), eig)


def sampled_loop_matrix(
    gains: NfcGains, p: ModelParams, nu: BodyVelocity = BodyVelocity(), dt: float = 0.01
) -> np.ndarray:
    """Jacobian of the error map ``e_k -> e_k+1`` for NFC held constant over one RK4 step.

    Linearized numerically around steady motion at ``nu`` (heading zero, unsaturated).
    The continuous-time check above says nothing about the sample rate; this one does.
    """
    k1, k2 = np.diag(gains.K1).tolist(), np.diag(gains.K2).tolist()
    eta_d_dot = transform_J(0.0) @ nu.as_array()

    def error_after_step(e):
        eta = e[:4]
        nu_k = transform_J(eta[3]).T @ (eta_d_dot + e[4:])
        x = list(eta) + list(nu_k)
        tau = nfc_body_wrench_fast(x, (0.0, 0.0, 0.0, 0.0), eta_d_dot, _ZERO4, p, k1, k2)
        x1 = rk4_step(x, p, tau, dt)
        eta_d1 = eta_d_dot * dt
        out = np.empty(8)
        out[:4] = np.asarray(x1[:4]) - eta_d1
        out[3] = wrap_angle(out[3])
        out[4:] = transform_J(x1[3]) @ np.asarray(x1[4:]) - eta_d_dot
        return out

    h = 1e-7
    Phi = np.empty((8, 8))
    for j in range(8):
        e = np.zeros(8)
        e[j] = h
        Phi[:, j] = (error_after_step(e) - error_after_step(-e)) / (2.0 * h)
    return Phi


def sampled_spectral_radius(gains: NfcGains, p: ModelParams, nu: BodyVelocity = BodyVelocity(), dt: float = 0.01) -> float:
    """Largest eigenvalue magnitude of the sampled loop; below 1 means the held loop is stable."""
    return float(np.max(np.abs(np.linalg.eigvals(sampled_loop_matrix(gains, p, nu, dt)))))


def nfc_world_wrench(
    state: VehicleState, ref: ReferencePoint, p: ModelParams, gains: NfcGains
) -> np.ndarray:
    """Unsaturated world-frame wrench of the nominal feedback law.

    tau_eta = M_eta (K e + eta_d_ddot) + (C_eta + D_eta) eta_d_dot + g_eta + tau_e
    """
    terms = world_dynamics_terms(state, p)
    err = tracking_error(state, ref)
    v = gains.K1 @ err.eps + gains.K2 @ err.eps_dot + np.asarray(ref.eta_d_ddot)
    return (
        terms.M_eta @ v
        + (terms.C_eta + terms.D_eta) @ np.asarray(ref.eta_d_dot)
        + terms.g_eta
        + terms.tau_e
    )


def nfc_body_wrench_fast(x, eta_d, eta_d_dot, eta_d_ddot, p: ModelParams, k1, k2) -> list[float]:
    """Scalar body-frame evaluation of the NFC law for diagonal gains.

    Uses ``J^T tau_eta = M J^T v + (C + D - M J^T J_dot) J^T eta_d_dot + g + tau_d``
    with ``v = K1 eps + K2 eps_dot + eta_d_ddot``; ``x`` is ``[eta, nu]``.
    """
    psi, u, vv, w, r = x[3], x[4], x[5], x[6], x[7]
    c, s = math.cos(psi), math.sin(psi)
    e0 = x[0] - eta_d[0]
    e1 = x[1] - eta_d[1]
    e2 = x[2] - eta_d[2]
    e3 = wrap_angle(psi - eta_d[3])
    # world velocity J nu
    xd = c * u - s * vv
    yd = s * u + c * vv
    v0 = k1[0] * e0 + k2[0] * (xd - eta_d_dot[0]) + eta_d_ddot[0]
    v1 = k1[1] * e1 + k2[1] * (yd - eta_d_dot[1]) + eta_d_ddot[1]
    v2 = k1[2] * e2 + k2[2] * (w - eta_d_dot[2]) + eta_d_ddot[2]
    v3 = k1[3] * e3 + k2[3] * (r - eta_d_dot[3]) + eta_d_ddot[3]
    # J^T v and J^T eta_d_dot
    a0 = c * v0 + s * v1
    a1 = -s * v0 + c * v1
    b0 = c * eta_d_dot[0] + s * eta_d_dot[1]
    b1 = -s * eta_d_dot[0] + c * eta_d_dot[1]
    b2 = eta_d_dot[2]
    b3 = eta_d_dot[3]
    td = p.tau_d
    return [
        p.m11 * a0 - p.c_m22 * vv * b3 + (p.d_l1 + p.d_n1 * abs(u)) * b0 + p.m11 * r * b1 + td[0],
        p.m22 * a1 + p.c_m11 * u * b3 + (p.d_l2 + p.d_n2 * abs(vv)) * b1 - p.m22 * r * b0 + td[1],
        p.m33 * v2 + (p.d_l3 + p.d_n3 * abs(w)) * b2 + p.buoyancy_minus_weight + td[2],
        p.m44 * v3 + p.c_m22 * vv * b0 - p.c_m11 * u * b1 + (p.d_l4 + p.d_n4 * abs(r)) * b3 + td[3],
    ]


def nfc_wrench(
    state: VehicleState,
    ref: ReferencePoint,
    p: ModelParams,
    gains: NfcGains,
    limits=DEFAULT_LIMITS,
) -> tuple[ControlWrench, bool]:
    """World-frame NFC wrench after body-frame saturation, plus the saturation flag."""
    tau_w = ControlWrench.from_array(nfc_world_wrench(state, ref, p, gains), WORLD)
    tau_b, clipped = saturate(tau_w.to_body(state.eta.psi), limits)
    return tau_b.to_world(state.eta.psi), clipped


@dataclass(frozen=True)
class PidAxisGains:
    kp: float
    ki: float = 0.0
    kd: float = 0.0

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0 or self.kd < 0:
            raise ValueError("PID gains must be non-negative")


@dataclass(frozen=True)
class PidGains:
    lateral: PidAxisGains
    throttle: PidAxisGains
    depth: PidAxisGains
    yaw: PidAxisGains

    def axes(self) -> tuple[PidAxisGains, ...]:
        # wrench order: fx (lateral), fy (throttle), fz (depth), mz (yaw)
        return (self.lateral, self.throttle, self.depth, self.yaw)


PAPER_PID_GAINS = PidGains(
    lateral=PidAxisGains(400.0, 0.0, 50.0),
    throttle=PidAxisGains(350.0, 0.0, 15.0),
    depth=PidAxisGains(500.0, 0.0, 50.0),
    yaw=PidAxisGains(150.0, 0.0, 15.0),
)


@dataclass
class PidMemory:
    integral: list = field(default_factory=lambda: [0.0] * 4)
    derivative: list = field(default_factory=lambda: [0.0] * 4)
    previous: list | None = None


def _body_error_signal(state: VehicleState, ref: ReferencePoint) -> list[float]:
    # Negated tracking error with the horizontal part expressed in the body frame.
    eps = state.eta.as_array() - ref.eta_d.as_array()
    c, s = math.cos(state.eta.psi), math.sin(state.eta.psi)
    ex = c * eps[0] + s * eps[1]
    ey = -s * eps[0] + c * eps[1]
    return [-ex, -ey, -eps[2], -wrap_angle(eps[3])]


def pid_wrench(
    state: VehicleState,
    ref: ReferencePoint,
    gains: PidGains,
    dt: float,
    memory: PidMemory,
    limits=DEFAULT_LIMITS,
    feedforward=_ZERO4,
    filter_tau: float | None = None,
) -> tuple[ControlWrench, bool]:
    """Per-axis PID on the body-frame error; updates ``memory`` in place.

    The derivative is a backward difference low-pass filtered with time
    constant ``filter_tau`` (default ``5 * dt``).  The integrator is frozen
    while the output is saturated in the direction of the error.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    tf = 5.0 * dt if filter_tau is None else filter_tau
    alpha = dt / (tf + dt)
    sig = _body_error_signal(state, ref)
    prev = memory.previous if memory.previous is not None else sig
    lim = limits if limits is not None else (math.inf,) * 4
    out = [0.0] * 4
    clipped = False
    for i, g in enumerate(gains.axes()):
        diff = sig[i] - prev[i]
        if i == 3:
            diff = wrap_angle(diff)
        d = memory.derivative[i] + alpha * (diff / dt - memory.derivative[i])
        memory.derivative[i] = d
        integ = memory.integral[i] + sig[i] * dt if g.ki > 0.0 else 0.0
        u = g.kp * sig[i] + g.ki * integ + g.kd * d + feedforward[i]
        if abs(u) > lim[i]:
            clipped = True
            if u * sig[i] > 0:
                integ = memory.integral[i]
                u = g.kp * sig[i] + g.ki * integ + g.kd * d + feedforward[i]
            u = max(-lim[i], min(lim[i], u))
        memory.integral[i] = integ
        out[i] = u
    memory.previous = sig
    return ControlWrench.from_array(out, BODY), clipped


@dataclass
class Telemetry:
    eps: np.ndarray
    wrench: ControlWrench
    saturated: bool


class NfcController:
    """Nominal feedback controller carrying per-tick telemetry."""

    kind = "nfc"

    def __init__(self, params: ModelParams, gains: NfcGains = PAPER_NFC_GAINS, limits=DEFAULT_LIMITS):
        self.params = params
        self.gains = gains
        self.limits = limits
        self.last: Telemetry | None = None
        diagonal = all(np.count_nonzero(K - np.diag(np.diag(K))) == 0 for K in (gains.K1, gains.K2))
        self._k = (np.diag(gains.K1).tolist(), np.diag(gains.K2).tolist()) if diagonal else None

    def body_wrench(self, x, ref: ReferencePoint) -> list[float]:
        """Unsaturated body-frame wrench for the raw state ``x = [eta, nu]``."""
        if self._k is not None:
            return nfc_body_wrench_fast(
                x, ref.eta_d.as_array(), ref.eta_d_dot, ref.eta_d_ddot, self.params, *self._k
            )
        st = VehicleState.from_array(x)
        tau_w = ControlWrench.from_array(nfc_world_wrench(st, ref, self.params, self.gains), WORLD)
        return tau_w.to_body(st.eta.psi).as_array().tolist()

    def command(self, state: VehicleState, ref: ReferencePoint) -> tuple[ControlWrench, bool]:
        tau = ControlWrench.from_array(self.body_wrench(state.as_array().tolist(), ref), BODY)
        tau_b, clipped = saturate(tau, self.limits)
        eps = state.eta.as_array() - ref.eta_d.as_array()
        eps[3] = wrap_angle(eps[3])
        self.last = Telemetry(eps, tau_b, clipped)
        return tau_b, clipped


class PidController:
    """PID baseline; the throttle (body sway) axis gets a drag feedforward for the cruise speed."""

    kind = "pid"

    def __init__(
        self,
        gains: PidGains = PAPER_PID_GAINS,
        dt: float = 0.01,
        limits=DEFAULT_LIMITS,
        nominal: ModelParams | None = None,
    ):
        self.gains = gains
        self.dt = dt
        self.limits = limits
        self.nominal = nominal or ModelParams()
        self.memory = PidMemory()
        self.last: Telemetry | None = None

    def command(self, state: VehicleState, ref: ReferencePoint) -> tuple[ControlWrench, bool]:
        psi = state.eta.psi
        c, s = math.cos(psi), math.sin(psi)
        vd = ref.eta_d_dot
        sway_d = -s * vd[0] + c * vd[1]
        ff = (0.0, self.nominal.d_l2 * sway_d, 0.0, 0.0)
        tau, clipped = pid_wrench(state, ref, self.gains, self.dt, self.memory, self.limits, ff)
        eps = state.eta.as_array() - ref.eta_d.as_array()
        eps[3] = wrap_angle(eps[3])
        self.last = Telemetry(eps, tau, clipped)
        return tau, clipped
