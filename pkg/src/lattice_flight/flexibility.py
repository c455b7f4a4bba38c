"""Static bending of the connecting rods under copter thrust.

Each rod is a clamped-free cantilever (clamped at the polygon, free at the
copter) loaded at the tip by the copter's net force T - m*g.  Only the static
solution is modelled; the controller consumes the tip angle gamma_i and tip
elevation delta_i^z, which obey delta/gamma = 2*l/3 for any load.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDimension

GRAVITY = 9.81


@dataclass(frozen=True)
class BeamParams:
    """Cantilever description: geometry, stiffness and tip mass."""

    length: float
    section_inertia: float
    youngs_modulus: float
    tip_mass: float

    def __post_init__(self):
        for name in ("length", "section_inertia", "youngs_modulus", "tip_mass"):
            v = getattr(self, name)
            if not (v > 0.0) or not math.isfinite(v):
                raise NonPositiveDimension(f"beam {name} must be positive, got {v}")

    @property
    def stiffness(self):
        """Flexural rigidity E*I."""
        return self.youngs_modulus * self.section_inertia


@dataclass(frozen=True)
class FlexState:
    """Per-agent bending angle (rad) and tip elevation (m)."""

    gamma: np.ndarray
    delta_z: np.ndarray

    @staticmethod
    def rigid(n):
        return FlexState(np.zeros(n), np.zeros(n))


def section_inertia_circular(diameter):
    """Second moment of area of a solid circular section, pi*d^4/64."""
    if not (diameter > 0.0):
        raise NonPositiveDimension(f"diameter must be positive, got {diameter}")
    return math.pi * diameter ** 4 / 64.0


def static_deflection(thrust, beam, g=GRAVITY):
    """Tip elevation and bending angle for a tip load of thrust - m*g.

    Returns (delta_z, gamma).  A negative net load sags the rod (both values
    negative); zero net load leaves it straight.
    """
    net = thrust - beam.tip_mass * g
    ei = beam.stiffness
    l = beam.length
    delta_z = net * l ** 3 / (3.0 * ei)
    gamma = net * l ** 2 / (2.0 * ei)
    return delta_z, gamma


def beam_shape(thrust, beam, x, g=GRAVITY):
    """Static transverse deflection z(x) along the rod, clamp at x=0.

    z(x) = (T - m g) x^2 (3 l - x) / (6 E I); the tip value z(l) equals the
    delta_z of static_deflection and the tip slope equals gamma.
    """
    net = thrust - beam.tip_mass * g
    x = np.asarray(x, dtype=float)
    if np.any(x < -1e-12) or np.any(x > beam.length + 1e-12):
        raise ValueError("shape requested outside the rod span [0, l]")
    return net * x ** 2 * (3.0 * beam.length - x) / (6.0 * beam.stiffness)


def flex_from_thrusts(thrusts, beams, g=GRAVITY):
    """Evaluate the static model for every agent.

    beams is a sequence with one BeamParams per agent, or None for agents
    mounted rigidly (e.g. sitting on top of a polygon), which stay at zero.
    """
    thrusts = np.asarray(thrusts, dtype=float)
    n = len(beams)
    gamma = np.zeros(n)
    delta = np.zeros(n)
    for i, beam in enumerate(beams):
        if beam is None:
            continue
        delta[i], gamma[i] = static_deflection(thrusts[i], beam, g)
    return FlexState(gamma, delta)
