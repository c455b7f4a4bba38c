"""Shared fixtures: bundled scenario paths and small hand-built structures."""

import numpy as np
import pytest

from lattice_flight.config import parse_structure_text
from lattice_flight.harness import scenario_suite
from lattice_flight.structure import (
    mass_properties,
    resolve_structure_frame,
    validate_spec,
)

QUAD_TEXT = """
[polygon] faces=4 mass=0.007 circumradius=0.03

[rod] length=0.14 mass=0.0035 diameter=0.005 youngs_modulus=2.3e9
[rod] length=0.14 mass=0.0035 diameter=0.005 youngs_modulus=2.3e9
[rod] length=0.14 mass=0.0035 diameter=0.005 youngs_modulus=2.3e9
[rod] length=0.14 mass=0.0035 diameter=0.005 youngs_modulus=2.3e9

[copter] mass=0.037 rod=0 polygon=0 slot=0
[copter] mass=0.037 rod=1 polygon=0 slot=1
[copter] mass=0.037 rod=2 polygon=0 slot=2
[copter] mass=0.037 rod=3 polygon=0 slot=3
"""

T_COPTER_TEXT = """
[polygon] faces=4 mass=0.007 circumradius=0.03

[rod] length=0.14 mass=0.0035 diameter=0.005 youngs_modulus=2.3e9
[rod] length=0.14 mass=0.0035 diameter=0.005 youngs_modulus=2.3e9
[rod] length=0.14 mass=0.0035 diameter=0.005 youngs_modulus=2.3e9

[copter] mass=0.037 rod=0 polygon=0 slot=0
[copter] mass=0.037 rod=1 polygon=0 slot=1
[copter] mass=0.037 rod=2 polygon=0 slot=2
"""

# agent radius on the quad: hub circumradius + rod length
QUAD_R = 0.03 + 0.14


def build(text):
    spec = validate_spec(parse_structure_text(text, "<test>"))
    geometry = resolve_structure_frame(spec)
    return spec, geometry


@pytest.fixture(scope="session")
def quad():
    spec, geometry = build(QUAD_TEXT)
    return spec, geometry, mass_properties(spec, geometry)


@pytest.fixture(scope="session")
def t_copter():
    spec, geometry = build(T_COPTER_TEXT)
    return spec, geometry, mass_properties(spec, geometry)


@pytest.fixture(scope="session")
def suite_paths():
    return scenario_suite()


def random_feasible_problem(rng, n, t_max=0.6):
    """Random allocation instance guaranteed feasible: the rhs is the wrench
    of a thrust vector drawn strictly inside the box."""
    from lattice_flight.allocation import AllocationProblem

    xs = rng.uniform(-0.3, 0.3, size=n)
    ys = rng.uniform(-0.3, 0.3, size=n)
    gamma = np.vstack([ys, -xs, np.ones(n)])
    t_inside = rng.uniform(0.05 * t_max, 0.95 * t_max, size=n)
    return AllocationProblem(gamma=gamma, rhs=gamma @ t_inside, t_max=t_max)
