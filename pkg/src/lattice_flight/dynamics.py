"""Structure flight dynamics with flexibility-projected thrusts.

Translation: x_ddot = -g e3 + (1/m) R(phi,theta,psi) Psi T
Rotation:    J W_dot = -W x (J W) + Xi T + Psi M + tau_s
with R = Rz(psi) Ry(theta) Rx(phi) and the angular rate treated as the
Euler-angle rate vector (the model is only flown near hover).  Psi and Xi
project each agent's thrust through its rod bending angle gamma_i.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteState, SingularInertia
from .flexibility import GRAVITY, FlexState


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rot(phi, theta, psi):
    return rot_z(psi) @ rot_y(theta) @ rot_x(phi)


@dataclass
class FlightState:
    position: np.ndarray  # (3,) inertial, m
    velocity: np.ndarray  # (3,) inertial, m/s
    attitude: np.ndarray  # (3,) [phi, theta, psi], rad
    omega: np.ndarray  # (3,) Euler-angle rates, rad/s
    flex: FlexState

    @staticmethod
    def at_rest(n):
        return FlightState(
            np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3), FlexState.rigid(n)
        )

    def copy(self):
        return FlightState(
            self.position.copy(),
            self.velocity.copy(),
            self.attitude.copy(),
            self.omega.copy(),
            FlexState(self.flex.gamma.copy(), self.flex.delta_z.copy()),
        )


@dataclass
class ThrustVector:
    thrust: np.ndarray  # (n,) N
    moment: np.ndarray  # (n,) N m

    @staticmethod
    def zero(n):
        return ThrustVector(np.zeros(n), np.zeros(n))


@dataclass
class PlantParams:
    """Simulation-truth constants for one structure."""

    geometry: object
    mass: float  # total flying mass incl. any payload
    inertia: np.ndarray  # (3,3) about C_s incl. any payload
    beams: list  # BeamParams per agent, None for rigid seats
    payload_mass: float = 0.0  # unknown-payload portion torquing about C_s
    payload_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    flex_filter_tau: float = 0.0  # first-order lag on gamma; 0 = static
    g: float = GRAVITY

    def __post_init__(self):
        self._beam_lengths = np.array(
            [0.0 if b is None else b.length for b in self.beams]
        )
        self._flex_coeff = np.array(
            [
                0.0 if b is None else b.length ** 2 / (2.0 * b.stiffness)
                for b in self.beams
            ]
        )
        self._tip_weight = np.array(
            [0.0 if b is None else b.tip_mass * self.g for b in self.beams]
        )

    def static_gamma(self, thrusts):
        return (np.asarray(thrusts) - self._tip_weight) * self._flex_coeff

    def flex_state(self, gamma):
        return FlexState(gamma, 2.0 * self._beam_lengths / 3.0 * gamma)

    def gravity_torque(self, rotation):
        """Torque of the unknown payload about C_s at the given attitude."""
        if self.payload_mass == 0.0:
            return np.zeros(3)
        weight_body = rotation.T @ np.array([0.0, 0.0, -self.payload_mass * self.g])
        return np.cross(self.payload_offset, weight_body)


def psi_matrix(geometry, flex):
    """3 x n thrust direction matrix; column i tilts by gamma_i about alpha_i."""
    sg, cg = np.sin(flex.gamma), np.cos(flex.gamma)
    sa, ca = np.sin(geometry.alphas), np.cos(geometry.alphas)
    return np.vstack([-sg * ca, -sg * sa, cg])


def xi_matrix(geometry, flex):
    """3 x n thrust-to-torque matrix including bending offsets."""
    sg, cg = np.sin(flex.gamma), np.cos(flex.gamma)
    sa, ca = np.sin(geometry.alphas), np.cos(geometry.alphas)
    dz = flex.delta_z
    sx = geometry.displacements[:, 0]
    sy = geometry.displacements[:, 1]
    return np.vstack(
        [
            dz * sg * sa + sy * cg,
            -dz * sg * ca - sx * cg,
            sy * sg * ca - sx * sg * sa,
        ]
    )


def simplified_psi(n):
    """Assumption used by the attitude loop: thrust lines are vertical."""
    m = np.zeros((3, n))
    m[2, :] = 1.0
    return m


def translational_accel(state, thrusts, geometry, mass_props, g=GRAVITY):
    rotation = euler_to_rot(*state.attitude)
    psi = psi_matrix(geometry, state.flex)
    acc = rotation @ (psi @ np.asarray(thrusts)) / mass_props.total_mass
    acc[2] -= g
    return acc


def rotational_accel(
    state,
    command,
    geometry,
    mass_props,
    static_torque=None,
    use_simplified_psi=False,
):
    """Solve J W_dot = -W x (J W) + Xi T + Psi M + tau_s for W_dot."""
    if static_torque is None:
        static_torque = mass_props.static_torque
    xi = xi_matrix(geometry, state.flex)
    if use_simplified_psi:
        psi = simplified_psi(geometry.n)
    else:
        psi = psi_matrix(geometry, state.flex)
    omega = state.omega
    torque = (
        -np.cross(omega, mass_props.inertia @ omega)
        + xi @ command.thrust
        + psi @ command.moment
        + static_torque
    )
    try:
        return np.linalg.solve(mass_props.inertia, torque)
    except np.linalg.LinAlgError:
        raise SingularInertia("inertia matrix is singular")


def _wrap_angles(a):
    wrapped = np.mod(a + math.pi, 2.0 * math.pi) - math.pi
    # keep the boundary at +pi rather than -pi
    wrapped[wrapped == -math.pi] = math.pi
    return wrapped


def step(state, command, dt, plant):
    """One RK4 step of the coupled translational/rotational dynamics.

    The command is held constant over the step.  Rod bending follows the
    static model, optionally low-pass filtered with plant.flex_filter_tau to
    stand in for unmodelled vibration dynamics.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    geometry = plant.geometry
    thrust = np.asarray(command.thrust, dtype=float)
    moment = np.asarray(command.moment, dtype=float)
    gamma_static = plant.static_gamma(thrust)
    filtered = plant.flex_filter_tau > 0.0
    inertia = plant.inertia
    inv_mass = 1.0 / plant.mass

    def deriv(y):
        att = y[6:9]
        omega = y[9:12]
        gamma = y[12:] if filtered else gamma_static
        flex = plant.flex_state(gamma)
        rotation = euler_to_rot(*att)
        psi = psi_matrix(geometry, flex)
        xi = xi_matrix(geometry, flex)
        acc = rotation @ (psi @ thrust) * inv_mass
        acc = acc - np.array([0.0, 0.0, plant.g])
        torque = (
            -np.cross(omega, inertia @ omega)
            + xi @ thrust
            + psi @ moment
            + plant.gravity_torque(rotation)
        )
        try:
            omega_dot = np.linalg.solve(inertia, torque)
        except np.linalg.LinAlgError:
            raise SingularInertia("inertia matrix is singular")
        out = np.empty_like(y)
        out[0:3] = y[3:6]
        out[3:6] = acc
        out[6:9] = omega
        out[9:12] = omega_dot
        if filtered:
            out[12:] = (gamma_static - y[12:]) / plant.flex_filter_tau
        return out

    y0 = np.concatenate(
        [
            state.position,
            state.velocity,
            state.attitude,
            state.omega,
            state.flex.gamma if filtered else np.zeros(0),
        ]
    )
    k1 = deriv(y0)
    k2 = deriv(y0 + 0.5 * dt * k1)
    k3 = deriv(y0 + 0.5 * dt * k2)
    k4 = deriv(y0 + dt * k3)
    y1 = y0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    if not np.all(np.isfinite(y1)):
        raise NonFiniteState("state left the finite range")

    gamma = y1[12:] if filtered else gamma_static
    return FlightState(
        position=y1[0:3],
        velocity=y1[3:6],
        attitude=_wrap_angles(y1[6:9]),
        omega=y1[9:12],
        flex=plant.flex_state(gamma.copy()),
    )


@dataclass(frozen=True)
class LinearizedModel:
    a_omega: np.ndarray  # (3,3) accel sensitivity to attitude
    b_omega: np.ndarray  # (3,n) accel sensitivity to thrusts
    a_omega_small: np.ndarray  # small-gamma variants
    b_omega_small: np.ndarray


def linearize(geometry, flex, mass_props, g=GRAVITY):
    """Hover linearization of the translational dynamics.

    Valid around level attitude with equal thrust shares T_i = m g / n;
    a_omega maps attitude perturbations and b_omega thrust perturbations to
    acceleration.  The small-angle variants replace sin/cos of gamma by
    gamma/1.
    """
    n = geometry.n
    m = mass_props.total_mass
    sa, ca = np.sin(geometry.alphas), np.cos(geometry.alphas)
    sg, cg = np.sin(flex.gamma), np.cos(flex.gamma)

    mean_cg = np.sum(cg) / n
    mean_s = np.sum(sa * sg) / n
    mean_c = np.sum(ca * sg) / n
    a_omega = g * np.array(
        [
            [0.0, mean_cg, mean_s],
            [-mean_cg, 0.0, -mean_c],
            [-mean_s, mean_c, 0.0],
        ]
    )
    b_omega = np.vstack([-ca * sg / m, -sa * sg / m, cg / m])

    gam = flex.gamma
    mean_s1 = np.sum(sa * gam) / n
    mean_c1 = np.sum(ca * gam) / n
    a_small = g * np.array(
        [
            [0.0, 1.0, mean_s1],
            [-1.0, 0.0, -mean_c1],
            [-mean_s1, mean_c1, 0.0],
        ]
    )
    b_small = np.vstack([-ca * gam / m, -sa * gam / m, np.full(n, 1.0 / m)])
    return LinearizedModel(a_omega, b_omega, a_small, b_small)
