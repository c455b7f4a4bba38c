"""Backstepping flight control with online adaptation.

Three loops around the lattice plant:

- altitude: backstepping PD-alike law on (e_z, s_z) with an adaptive mass
  estimate, commanding the collective thrust T^d;
- lateral: backstepping on (x, y) errors commanding desired pitch/roll;
- attitude: adaptive backstepping on (e_phi, z_phi) with online inertia and
  static-torque estimates, commanding the body torque tau^c.

All three subtract the thrust-weighted bending terms (gamma_i * xi_i) so rod
flexibility is compensated rather than fought.  Per-agent setpoints are the
structure attitude conjugated into each agent's yawed frame.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .allocation import (
    AllocationProblem,
    AllocationResult,
    Metric,
    MetricParams,
    allocate,
    total_yaw_and_distribute,
)
from .dynamics import ThrustVector, euler_to_rot, rot_z
from .flexibility import GRAVITY, FlexState, static_deflection


def _diag3(value) -> np.ndarray:
    """Accept a scalar, a 3-vector of diagonal entries, or a full 3x3."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.eye(3) * float(arr)
    elif arr.ndim == 1:
        arr = np.diag(arr)
    if arr.shape != (3, 3):
        raise ValueError(f"expected scalar, 3-vector, or 3x3 gain, got {arr.shape}")
    return arr


@dataclass
class PositionGains:
    k_z1: float = 2.0
    k_z2: float = 2.0
    k_x1: float = 0.4
    k_x2: float = 1.6
    k_y1: float = 0.4
    k_y2: float = 1.6
    sigma_m: float = 0.05  # mass-adaptation rate; 0 freezes the estimate
    angle_max: float = 0.22  # rad clamp on desired roll/pitch

    def __post_init__(self):
        for name in ("k_z1", "k_z2", "k_x1", "k_x2", "k_y1", "k_y2"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.sigma_m >= 0.0:  # 0 freezes the mass estimate
            raise ValueError("sigma_m must be non-negative")
        if not self.angle_max > 0.0:
            raise ValueError("angle_max must be strictly positive")


@dataclass
class AttitudeGains:
    k_phi: np.ndarray = 12.0  # accepts scalar / diag vector / 3x3
    k_omega: np.ndarray = 20.0
    lam: np.ndarray = 1e-7  # inertia-adaptation gain Lambda
    sigma_tau: float = 8e-3  # static-torque adaptation rate
    # rate-error dead zone for the inertia update only.  Sensor noise makes
    # E[z*A] < 0 even in perfect hover (A feeds back -z), so without a dead
    # zone the inertia estimate drains to its floor on noise alone.
    j_dead_zone: float = 0.25

    def __post_init__(self):
        self.k_phi = _diag3(self.k_phi)
        self.k_omega = _diag3(self.k_omega)
        self.lam = _diag3(self.lam)
        for name in ("k_phi", "k_omega", "lam"):
            if np.any(np.diag(getattr(self, name)) <= 0.0):
                raise ValueError(f"{name} diagonal must be strictly positive")
        if not self.sigma_tau > 0.0:
            raise ValueError("sigma_tau must be strictly positive")
        if self.j_dead_zone < 0.0:
            raise ValueError("j_dead_zone must be non-negative")


@dataclass
class AdaptiveState:
    m_hat: float
    j_hat: np.ndarray
    tau_s_hat: np.ndarray
    m_floor: float
    j_floor: np.ndarray  # per-axis floor on diag(j_hat)
    j_cap: np.ndarray  # per-axis ceiling on diag(j_hat)
    tau_s_cap: float  # symmetric bound on each tau_s_hat component

    @classmethod
    def initial(cls, mass_props) -> "AdaptiveState":
        """Start from what the controller can know: the declared mass (a
        known payload was weighed, an unknown one isn't in mass_props at
        all) and the parallel-axis inertia guess.

        The projection bounds keep the estimates physically plausible — a
        payload can't cut the inertia below a third of the bare frame or
        triple it, and no credible offset torques the frame harder than
        half its own weight on a half-metre arm."""
        m0 = float(mass_props.total_mass)
        j0 = np.array(mass_props.inertia, dtype=float)
        return cls(
            m_hat=m0,
            j_hat=j0,
            tau_s_hat=np.zeros(3),
            m_floor=0.2 * m0,
            j_floor=0.3 * np.diag(j0).copy(),
            j_cap=3.0 * np.diag(j0).copy(),
            tau_s_cap=0.5 * m0 * 9.80665 * 0.5,
        )

    def copy(self) -> "AdaptiveState":
        return replace(
            self,
            j_hat=self.j_hat.copy(),
            tau_s_hat=self.tau_s_hat.copy(),
            j_floor=self.j_floor.copy(),
            j_cap=self.j_cap.copy(),
        )


@dataclass
class ErrorState:
    e_z: float = 0.0
    ed_z: float = 0.0
    s_z: float = 0.0
    e_x: float = 0.0
    ed_x: float = 0.0
    e_y: float = 0.0
    ed_y: float = 0.0
    e_phi: np.ndarray = field(default_factory=lambda: np.zeros(3))
    z_phi: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega_star: np.ndarray = field(default_factory=lambda: np.zeros(3))


def xi_terms(geometry, delta_thrusts, attitude_deltas, m_hat: float, g: float = GRAVITY):
    """Per-agent bending feed-in terms (xi_x, xi_y, xi_z).

    delta_thrusts are the previous tick's allocated thrusts minus the hover
    share; attitude_deltas the measured (dphi, dtheta, dpsi) away from the
    level hover operating point.
    """
    alphas = np.asarray(geometry.alphas, dtype=float)
    n = alphas.size
    dt_i = np.asarray(delta_thrusts, dtype=float)
    dphi, dtheta, dpsi = (float(v) for v in attitude_deltas)
    sa, ca = np.sin(alphas), np.cos(alphas)
    xi_x = sa * dpsi / n - ca * dt_i / m_hat
    xi_y = -ca * dpsi / n - sa * dt_i / m_hat
    xi_z = (-g * sa * dphi + g * ca * dtheta) / n
    return xi_x, xi_y, xi_z


def altitude_control(
    e_z: float,
    ed_z: float,
    xi_z,
    gamma,
    gains: PositionGains,
    m_hat: float,
    g: float = GRAVITY,
) -> tuple[float, float]:
    """Collective-thrust law: returns (sum of differential thrusts, T^d).

    T^d = m_hat*g + m_hat*(-(K_z1+K_z2) ed_z - (1+K_z1 K_z2) e_z - sum gamma_i xi_i^z).
    With rigid rods (gamma = 0) this is a plain PD law around the hover
    feedforward.
    """
    k1, k2 = gains.k_z1, gains.k_z2
    flex_term = float(np.dot(gamma, xi_z))
    sum_dt = m_hat * (-(k1 + k2) * ed_z - (1.0 + k1 * k2) * e_z - flex_term)
    return sum_dt, m_hat * g + sum_dt


def mass_adaptation_step(
    e_z: float,
    s_z: float,
    xi_z,
    gamma,
    gains: PositionGains,
    m_hat: float,
    dt: float,
    m_floor: float,
    g: float = GRAVITY,
) -> float:
    """One Euler step of the mass-estimate evolution, with projection floor.

    The bracket is the commanded specific thrust g + u (the whole factor the
    estimate multiplies in T^d = m_hat*(g + u)); moving the estimate against
    s_z times it cancels the estimation-error term in d(V_z)/dt exactly, so a
    persistent altitude sag from an unmodeled payload drives m_hat up until
    the feedforward carries the true weight.  Omitting g here leaves a
    sign-indefinite g*s_z term behind and the estimate drifts unstably on
    large setpoint steps.
    """
    k1, k2 = gains.k_z1, gains.k_z2
    bracket = (
        g - k1 * (s_z - k1 * e_z) - e_z - k2 * s_z - float(np.dot(gamma, xi_z))
    )
    m_new = m_hat + dt * (-gains.sigma_m * s_z * bracket)
    return max(m_new, m_floor)


def lateral_control(
    e_x: float,
    ed_x: float,
    e_y: float,
    ed_y: float,
    xi_x,
    xi_y,
    gamma,
    gains: PositionGains,
) -> tuple[float, float]:
    """Desired (theta^d, phi^d) from lateral errors, clamped to angle_max.

    Pitch forward (+theta) accelerates +x, so theta^d opposes e_x; rolling
    +phi accelerates -y, so phi^d carries the opposite overall sign on the
    y-channel (including its bending term).
    """
    gx = float(np.dot(gamma, xi_x))
    gy = float(np.dot(gamma, xi_y))
    theta_d = (
        -(gains.k_x1 + gains.k_x2) * ed_x
        - (1.0 + gains.k_x1 * gains.k_x2) * e_x
        - gx
    )
    phi_d = (
        (gains.k_y1 + gains.k_y2) * ed_y
        + (1.0 + gains.k_y1 * gains.k_y2) * e_y
        + gy
    )
    lim = gains.angle_max
    return float(np.clip(theta_d, -lim, lim)), float(np.clip(phi_d, -lim, lim))


def attitude_errors(
    attitude, desired, omega, gains: AttitudeGains
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(e_phi, omega_star, z_phi) for a step attitude setpoint (Omega^d = 0)."""
    e_phi = np.asarray(attitude, dtype=float) - np.asarray(desired, dtype=float)
    omega_star = -gains.k_phi @ e_phi
    z_phi = np.asarray(omega, dtype=float) - omega_star
    return e_phi, omega_star, z_phi


def attitude_accel(e_phi, z_phi, gains: AttitudeGains) -> np.ndarray:
    """Stabilizing angular acceleration A_phi shared by the control law and
    the inertia adaptation."""
    return -gains.k_phi @ (z_phi - gains.k_phi @ e_phi) - e_phi - gains.k_omega @ z_phi


def attitude_control(
    e_phi, z_phi, omega, adaptive: AdaptiveState, gains: AttitudeGains
) -> np.ndarray:
    """Body torque command tau^c.

    Gyroscopic feedforward uses the inertia *estimate* (the controller has
    no access to the true J) and subtracts the static-torque estimate."""
    omega = np.asarray(omega, dtype=float)
    a_phi = attitude_accel(e_phi, z_phi, gains)
    return (
        np.cross(omega, adaptive.j_hat @ omega)
        + adaptive.j_hat @ a_phi
        - adaptive.tau_s_hat
    )


def attitude_adaptation_step(
    e_phi, z_phi, gains: AttitudeGains, adaptive: AdaptiveState, dt: float
) -> AdaptiveState:
    """Euler step of the inertia / static-torque estimate evolutions.

    The inertia update is the rank-1 outer product Lambda^T z_phi A_phi^T;
    diagonals are projected to stay above the configured floor."""
    a_phi = attitude_accel(e_phi, z_phi, gains)
    z = np.asarray(z_phi, dtype=float)
    z_j = np.where(np.abs(z) > gains.j_dead_zone, z, 0.0)
    j_new = adaptive.j_hat + dt * (gains.lam.T @ np.outer(z_j, a_phi))
    for i in range(3):
        j_new[i, i] = min(max(j_new[i, i], adaptive.j_floor[i]), adaptive.j_cap[i])
    tau_new = adaptive.tau_s_hat + dt * gains.sigma_tau * z
    np.clip(tau_new, -adaptive.tau_s_cap, adaptive.tau_s_cap, out=tau_new)
    return replace(adaptive, j_hat=j_new, tau_s_hat=tau_new)


def euler_zyx_from_rot(r: np.ndarray) -> tuple[float, float, float, bool]:
    """(roll, pitch, yaw, gimbal_flag) from a rotation matrix, ZYX order.

    The flag trips when |pitch| is within 1e-6 of pi/2, where roll and yaw
    are no longer separable; the returned values are still usable."""
    pitch = float(np.arcsin(np.clip(-r[2, 0], -1.0, 1.0)))
    gimbal = abs(abs(pitch) - np.pi / 2) < 1e-6
    roll = float(np.arctan2(r[2, 1], r[2, 2]))
    yaw = float(np.arctan2(r[1, 0], r[0, 0]))
    return roll, pitch, yaw, gimbal


@dataclass
class AgentSetpoint:
    roll: float
    pitch: float
    thrust: float
    moment: float
    gimbal_lock: bool = False


def agent_setpoints(rotation, geometry, thrusts, moments) -> list[AgentSetpoint]:
    """Per-agent (roll, pitch, thrust, moment) setpoints.

    Each agent flies in its own frame, yawed by alpha_i relative to the
    structure; its attitude target is the structure rotation conjugated by
    Rz(alpha_i)."""
    r = np.asarray(rotation, dtype=float)
    out = []
    for alpha, t_i, m_i in zip(geometry.alphas, thrusts, moments):
        rz = rot_z(float(alpha))
        roll, pitch, _, gimbal = euler_zyx_from_rot(rz @ r @ rz.T)
        out.append(AgentSetpoint(roll, pitch, float(t_i), float(m_i), gimbal))
    return out


def altitude_lyapunov(e_z: float, s_z: float) -> float:
    return 0.5 * (e_z * e_z + s_z * s_z)


def attitude_lyapunov(
    e_phi,
    z_phi,
    j_true: np.ndarray,
    tau_s_true,
    adaptive: AdaptiveState,
    gains: AttitudeGains,
) -> float:
    """Composite attitude Lyapunov value, using the plant-truth J and tau^s.

    V = 1/2 e'e + 1/2 z'z + 1/2 tr(E~' J' Lam^-1 E~) + 1/(2 sigma) tau~' J^-1 tau~
    with E~ = I - J^-1 J_hat and tau~ = tau^s - tau_s_hat.
    """
    e_phi = np.asarray(e_phi, dtype=float)
    z_phi = np.asarray(z_phi, dtype=float)
    j_inv = np.linalg.inv(j_true)
    e_tilde = np.eye(3) - j_inv @ adaptive.j_hat
    tau_tilde = np.asarray(tau_s_true, dtype=float) - adaptive.tau_s_hat
    lam_inv = np.linalg.inv(gains.lam)
    v = 0.5 * float(e_phi @ e_phi) + 0.5 * float(z_phi @ z_phi)
    v += 0.5 * float(np.trace(e_tilde.T @ j_true.T @ lam_inv @ e_tilde))
    v += float(tau_tilde @ j_inv @ tau_tilde) / (2.0 * gains.sigma_tau)
    return v


@dataclass
class Measurement:
    position: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray
    omega: np.ndarray


@dataclass
class ControlOutput:
    command: ThrustVector
    setpoints: list[AgentSetpoint]
    tau_c: np.ndarray
    t_d: float
    theta_d: float
    phi_d: float
    status: str
    gamma: np.ndarray
    errors: ErrorState
    allocation: AllocationResult


class FlightController:
    """The full control stack for one lattice vehicle.

    Call outer_tick at the slow (waypoint/position) rate and inner_tick at
    the fast (attitude/allocation) rate.  Holds the adaptive estimates and
    the one-tick-old thrusts that feed the bending terms.
    """

    def __init__(
        self,
        geometry,
        gamma_matrix: np.ndarray,
        beams,
        adaptive: AdaptiveState,
        position_gains: PositionGains | None = None,
        attitude_gains: AttitudeGains | None = None,
        metric: Metric = Metric.FT,
        metric_params: MetricParams | None = None,
        t_max: float = 0.58,
        m_max: float = 0.005,
        compensate_flex: bool = True,
        g: float = GRAVITY,
        tau_frac: float = 0.4,
        headroom: float = 0.92,
        comp_tau: float = 0.35,
    ):
        self.geometry = geometry
        self.gamma_matrix = np.asarray(gamma_matrix, dtype=float)
        self.beams = list(beams)
        self.adaptive = adaptive
        self.position_gains = position_gains or PositionGains()
        self.attitude_gains = attitude_gains or AttitudeGains()
        self.metric = Metric(metric)
        self.metric_params = metric_params or MetricParams()
        self.t_max = float(t_max)
        self.m_max = float(m_max)
        self.compensate_flex = bool(compensate_flex)
        self.g = float(g)
        self.n = len(self.beams)
        # command shaping so the allocator always has a feasible wrench:
        # roll/pitch commands clip at a fraction of what the arms can deliver,
        # and the collective keeps some differential-thrust headroom
        arms = np.abs(self.gamma_matrix[:2]).sum(axis=1) / 2.0
        self.tau_cap = float(tau_frac) * self.t_max * arms
        self.headroom = float(headroom)
        self.target = np.zeros(3)
        self.t_d = adaptive.m_hat * self.g
        self.theta_d = 0.0
        self.phi_d = 0.0
        self.prev_thrusts = np.full(self.n, adaptive.m_hat * self.g / self.n)
        # The bending terms model quasi-static flex forces, so they read a
        # low-passed thrust history.  Feeding them raw per-tick thrusts closes
        # an algebraic loop on structures where one arm owns a torque axis
        # (delta-T -> desired tilt -> torque -> delta-T) that rings at the
        # attitude-loop frequency.
        self.comp_tau = float(comp_tau)
        self.filt_thrusts = self.prev_thrusts.copy()
        self.last_status = "optimal"
        self.t_d_clipped = False
        self.errors = ErrorState()

    def set_target(self, waypoint) -> None:
        self.target = np.asarray(waypoint, dtype=float)

    def set_batteries(self, voltages) -> None:
        self.metric_params.batteries = np.asarray(voltages, dtype=float)

    def gamma_estimate(self, thrusts=None) -> np.ndarray:
        """Static bending angles implied by the given (default: last
        allocated) thrusts."""
        if thrusts is None:
            thrusts = self.prev_thrusts
        out = np.zeros(self.n)
        for i, beam in enumerate(self.beams):
            if beam is not None:
                out[i] = static_deflection(thrusts[i], beam, self.g)[1]
        return out

    def _compensation_gamma(self) -> np.ndarray:
        if not self.compensate_flex:
            return np.zeros(self.n)
        return self.gamma_estimate(self.filt_thrusts)

    def outer_tick(self, meas: Measurement, dt: float) -> None:
        """Position-rate update: collective thrust, desired tilt, mass estimate."""
        gains = self.position_gains
        err = self.errors
        err.e_z = float(meas.position[2] - self.target[2])
        err.ed_z = float(meas.velocity[2])
        err.s_z = err.ed_z + gains.k_z1 * err.e_z
        err.e_x = float(meas.position[0] - self.target[0])
        err.ed_x = float(meas.velocity[0])
        err.e_y = float(meas.position[1] - self.target[1])
        err.ed_y = float(meas.velocity[1])

        alpha = dt / (self.comp_tau + dt)
        self.filt_thrusts += alpha * (self.prev_thrusts - self.filt_thrusts)
        gamma = self._compensation_gamma()
        delta_t = self.filt_thrusts - self.adaptive.m_hat * self.g / self.n
        xi_x, xi_y, xi_z = xi_terms(
            self.geometry, delta_t, meas.attitude, self.adaptive.m_hat, self.g
        )
        _, t_d = altitude_control(
            err.e_z, err.ed_z, xi_z, gamma, gains, self.adaptive.m_hat, self.g
        )
        self.t_d = float(np.clip(t_d, 0.0, self.headroom * self.n * self.t_max))
        if self.t_d == t_d and self.last_status == "optimal" and not self.t_d_clipped:
            # anti-windup: the estimator assumes the commanded collective is
            # actually delivered, so it must hold while the command clips or
            # the allocator is falling back
            self.adaptive.m_hat = mass_adaptation_step(
                err.e_z,
                err.s_z,
                xi_z,
                gamma,
                gains,
                self.adaptive.m_hat,
                dt,
                self.adaptive.m_floor,
                self.g,
            )
        self.theta_d, self.phi_d = lateral_control(
            err.e_x, err.ed_x, err.e_y, err.ed_y, xi_x, xi_y, gamma, gains
        )

    def inner_tick(self, meas: Measurement, dt: float) -> ControlOutput:
        """Attitude-rate update: torque command, adaptation, allocation."""
        gains = self.attitude_gains
        desired = np.array([self.phi_d, self.theta_d, 0.0])
        e_phi, omega_star, z_phi = attitude_errors(
            meas.attitude, desired, meas.omega, gains
        )
        err = self.errors
        err.e_phi, err.omega_star, err.z_phi = e_phi, omega_star, z_phi

        tau_c = attitude_control(e_phi, z_phi, meas.omega, self.adaptive, gains)
        # clamp only the feedback part: the gyroscopic/static-torque
        # feedforward (itself bounded via tau_s_cap) must keep flowing or a
        # payload whose standing torque exceeds the clamp can never trim out
        omega = np.asarray(meas.omega, dtype=float)
        tau_ff = np.cross(omega, self.adaptive.j_hat @ omega) - self.adaptive.tau_s_hat
        raw_xy = tau_c[:2].copy()
        for ax in (0, 1):
            fb = tau_c[ax] - tau_ff[ax]
            tau_c[ax] = tau_ff[ax] + float(np.clip(fb, -self.tau_cap[ax], self.tau_cap[ax]))

        # tilt feedforward: T_d is a vertical-force demand, but the rotors
        # push along the (tilted) body axis, so the collective is divided by
        # the attitude projection.  Re-clamped to the same headroom; a clip
        # here freezes the mass estimate just like a clip of T_d itself.
        c_tilt = max(
            math.cos(float(meas.attitude[0])) * math.cos(float(meas.attitude[1])),
            0.5,
        )
        t_alloc = self.t_d / c_tilt
        t_cap = self.headroom * self.n * self.t_max
        self.t_d_clipped = t_alloc > t_cap
        t_alloc = min(t_alloc, t_cap)

        problem = AllocationProblem(
            gamma=self.gamma_matrix,
            rhs=np.array([tau_c[0], tau_c[1], t_alloc]),
            t_max=self.t_max,
            metric=self.metric,
            params=self.metric_params,
        )
        result = allocate(problem)
        thrusts = result.thrusts

        # adapt only while the loop runs in its linear regime: a clipped
        # command or a fallback allocation breaks the delivered-torque
        # assumption behind the update laws
        if result.status == "optimal" and np.array_equal(raw_xy, tau_c[:2]):
            self.adaptive = attitude_adaptation_step(
                e_phi, z_phi, gains, self.adaptive, dt
            )

        # yaw coupling correction always uses the physical bending estimate;
        # compensate_flex only switches the position-law terms on and off
        flex = FlexState(gamma=self.gamma_estimate(), delta_z=np.zeros(self.n))
        moments = total_yaw_and_distribute(
            float(tau_c[2]), thrusts, self.geometry, flex, self.m_max
        )
        self.prev_thrusts = thrusts.copy()
        self.last_status = result.status

        rotation = euler_to_rot(*meas.attitude)
        setpoints = agent_setpoints(rotation, self.geometry, thrusts, moments)
        return ControlOutput(
            command=ThrustVector(thrust=thrusts, moment=moments),
            setpoints=setpoints,
            tau_c=tau_c,
            t_d=self.t_d,
            theta_d=self.theta_d,
            phi_d=self.phi_d,
            status=result.status,
            gamma=self.gamma_estimate(),
            errors=err,
            allocation=result,
        )
