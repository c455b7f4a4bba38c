"""Lattice description, validation, kinematics and mass properties.

A lattice is a tree of regular polygons connected by rods, with copters on
the free rod ends (or sitting on top of a polygon).  Conventions:

- Polygon slots are numbered 0..faces-1 and point at angles j*2*pi/faces in
  the polygon's own frame.  The root polygon's frame is the base frame C_0.
- A child polygon's frame points slot 0 back along its incoming rod, so the
  rod occupies slot 0 on the child and the declared slot on the parent.
- A copter's x-axis points outward along its rod (away from its polygon).
- The structure frame C_s sits at the mass centroid of copters, polygons and
  rods (payload included only when declared known), with x_s through the
  copter farthest from the centroid, ties broken by lowest copter index.
- The payload offset in PayloadSpec is expressed in base (C_0) coordinates
  relative to the hardware centroid; resolved geometry re-expresses it in
  the structure frame.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DegenerateFrame,
    DisconnectedGraph,
    NonPositiveDimension,
    RowSumViolation,
)
from .flexibility import GRAVITY, BeamParams, section_inertia_circular


@dataclass(frozen=True)
class RodSpec:
    length: float
    mass: float
    diameter: float
    youngs_modulus: float

    @property
    def linear_density(self):
        return self.mass / self.length


@dataclass(frozen=True)
class PolygonSpec:
    faces: int
    mass: float
    circumradius: float
    # set for non-root polygons only
    parent: int | None = None
    slot: int | None = None
    rod: int | None = None


@dataclass(frozen=True)
class CopterSpec:
    mass: float
    # rod mount
    rod: int | None = None
    polygon: int | None = None
    slot: int | None = None
    # top mount
    top_of: int | None = None
    z_offset: float = 0.0

    @property
    def is_top_mounted(self):
        return self.top_of is not None


@dataclass(frozen=True)
class PayloadSpec:
    mass: float = 0.0
    offset: tuple = (0.0, 0.0, 0.0)
    known: bool = True

    def offset_vector(self):
        return np.asarray(self.offset, dtype=float)


@dataclass(frozen=True)
class StructureSpec:
    copters: tuple
    polygons: tuple
    rods: tuple
    interconnection: np.ndarray
    payload: PayloadSpec = PayloadSpec()

    @property
    def n(self):
        return len(self.copters)

    @property
    def p(self):
        return len(self.polygons)


@dataclass(frozen=True)
class Kinematics:
    """Homogeneous transforms of every copter and polygon relative to C_0."""

    copters: np.ndarray  # (n, 4, 4)
    polygons: np.ndarray  # (p, 4, 4)


@dataclass(frozen=True)
class StructureGeometry:
    """Per-agent pose relative to the structure frame C_s."""

    alphas: np.ndarray  # (n,) yaw of each agent frame w.r.t. x_s
    displacements: np.ndarray  # (n, 3) [^sc_x, ^sc_y, ^sc_z]
    transforms: np.ndarray  # (n, 4, 4) homogeneous ^sA_i
    com: np.ndarray  # (3,) C_s origin in C_0 coordinates
    xs_agent: int
    frame_yaw: float  # rotation from C_0 to x_s about z
    payload_mass: float
    payload_offset: np.ndarray  # (3,) in structure frame, from hardware centroid
    payload_known: bool
    # mass items in structure-frame coordinates, used by mass_properties:
    # ("point", mass, position) and ("bar", mass, end_a, end_b)
    mass_items: tuple = field(repr=False, default=())

    @property
    def n(self):
        return len(self.alphas)


@dataclass(frozen=True)
class MassProperties:
    total_mass: float
    inertia: np.ndarray  # (3, 3) about C_s in structure axes
    static_torque: np.ndarray  # (3,) gravity torque about C_s at hover attitude
    payload_offset: np.ndarray  # (3,) structure frame


def _hrot_z(a):
    c, s = math.cos(a), math.sin(a)
    m = np.eye(4)
    m[0, 0] = c
    m[0, 1] = -s
    m[1, 0] = s
    m[1, 1] = c
    return m


def _htrans(x, y=0.0, z=0.0):
    m = np.eye(4)
    m[:3, 3] = (x, y, z)
    return m


def _wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def interconnection_from_mounts(copters, polygons):
    """Build the p x (n+p) interconnection matrix implied by the mounts.

    Rod-mounted copter columns carry a single 1 in their polygon's row;
    top-mounted copters have no rod and stay zero.  A polygon-polygon rod is
    recorded symmetrically in both polygons' rows.
    """
    n, p = len(copters), len(polygons)
    mat = np.zeros((p, n + p), dtype=int)
    for i, c in enumerate(copters):
        if not c.is_top_mounted:
            mat[c.polygon, i] = 1
    for q, poly in enumerate(polygons):
        if poly.parent is not None:
            mat[poly.parent, n + q] = 1
            mat[q, n + poly.parent] = 1
    return mat


def _check_positive(cond, what):
    if not cond:
        raise NonPositiveDimension(what)


def validate_spec(spec):
    """Check all StructureSpec invariants; returns the spec unchanged.

    Raises NonPositiveDimension, RowSumViolation, DisconnectedGraph or
    ConfigError (for malformed mount declarations).
    """
    n, p = spec.n, spec.p
    if n < 1:
        raise ConfigError("a lattice needs at least one copter")
    if p < 1:
        raise ConfigError("a lattice needs at least one polygon")

    for k, rod in enumerate(spec.rods):
        _check_positive(rod.length > 0, f"rod {k}: length must be positive")
        _check_positive(rod.mass > 0, f"rod {k}: mass must be positive")
        _check_positive(rod.diameter > 0, f"rod {k}: diameter must be positive")
        _check_positive(rod.youngs_modulus > 0, f"rod {k}: youngs_modulus must be positive")
    for k, poly in enumerate(spec.polygons):
        if poly.faces < 3 or int(poly.faces) != poly.faces:
            raise ConfigError(f"polygon {k}: faces must be an integer >= 3")
        _check_positive(poly.mass > 0, f"polygon {k}: mass must be positive")
        _check_positive(poly.circumradius > 0, f"polygon {k}: circumradius must be positive")
    for i, c in enumerate(spec.copters):
        _check_positive(c.mass > 0, f"copter {i}: mass must be positive")
    _check_positive(spec.payload.mass >= 0, "payload mass must be non-negative")

    # Mount well-formedness
    rod_users = {}
    occupied = {}  # (polygon, slot) -> description

    def claim_rod(k, who):
        if k < 0 or k >= len(spec.rods):
            raise ConfigError(f"{who}: rod index {k} out of range")
        if k in rod_users:
            raise ConfigError(f"{who}: rod {k} already used by {rod_users[k]}")
        rod_users[k] = who

    def claim_slot(poly, slot, who):
        faces = spec.polygons[poly].faces
        if slot < 0 or slot >= faces:
            raise ConfigError(f"{who}: slot {slot} outside [0, {faces})")
        if (poly, slot) in occupied:
            raise ConfigError(
                f"{who}: slot {slot} of polygon {poly} already holds {occupied[(poly, slot)]}"
            )
        occupied[(poly, slot)] = who

    roots = [q for q, poly in enumerate(spec.polygons) if poly.parent is None]
    if len(roots) != 1:
        raise DisconnectedGraph(
            f"expected exactly one root polygon, found {len(roots)}"
        )
    for q, poly in enumerate(spec.polygons):
        if poly.parent is None:
            continue
        if poly.parent < 0 or poly.parent >= p:
            raise ConfigError(f"polygon {q}: parent {poly.parent} out of range")
        if poly.slot is None or poly.rod is None:
            raise ConfigError(f"polygon {q}: child polygons need slot= and rod=")
        claim_rod(poly.rod, f"polygon {q}")
        claim_slot(poly.parent, poly.slot, f"polygon {q}")
        claim_slot(q, 0, f"polygon {q} incoming rod")

    # parent chains must reach the root without revisits
    for q in range(p):
        seen = set()
        cur = q
        while spec.polygons[cur].parent is not None:
            if cur in seen:
                raise DisconnectedGraph(f"polygon parent cycle through {q}")
            seen.add(cur)
            cur = spec.polygons[cur].parent
        if cur != roots[0]:
            raise DisconnectedGraph(f"polygon {q} does not reach the root")

    for i, c in enumerate(spec.copters):
        if c.is_top_mounted:
            if c.rod is not None or c.polygon is not None or c.slot is not None:
                raise ConfigError(f"copter {i}: top mount excludes rod/polygon/slot")
            if c.top_of < 0 or c.top_of >= p:
                raise ConfigError(f"copter {i}: top_of {c.top_of} out of range")
            _check_positive(c.z_offset > 0, f"copter {i}: z_offset must be positive")
        else:
            if c.rod is None or c.polygon is None or c.slot is None:
                raise ConfigError(f"copter {i}: rod mount needs rod=, polygon= and slot=")
            if c.polygon < 0 or c.polygon >= p:
                raise ConfigError(f"copter {i}: polygon {c.polygon} out of range")
            claim_rod(c.rod, f"copter {i}")
            claim_slot(c.polygon, c.slot, f"copter {i}")
    for k in range(len(spec.rods)):
        if k not in rod_users:
            raise ConfigError(f"rod {k} is not used by any mount")

    # Interconnection matrix: one incoming rod entry per mounted element.
    mat = np.asarray(spec.interconnection)
    if mat.shape != (p, n + p):
        raise RowSumViolation(
            f"interconnection must be {p}x{n + p}, got {mat.shape}"
        )
    if not np.isin(mat, (0, 1)).all():
        raise RowSumViolation("interconnection entries must be 0 or 1")
    zero_rows = np.flatnonzero(mat.sum(axis=1) == 0)
    if zero_rows.size:
        raise RowSumViolation(f"interconnection row {zero_rows[0]} is all zeros")
    expected = interconnection_from_mounts(spec.copters, spec.polygons)
    for i, c in enumerate(spec.copters):
        col = mat[:, i]
        if c.is_top_mounted:
            if col.any():
                raise RowSumViolation(
                    f"copter {i} is top-mounted but interconnection column {i} is nonzero"
                )
        elif col.sum() != 1:
            raise RowSumViolation(
                f"copter {i} column must contain exactly one rod entry, sums to {col.sum()}"
            )
    if not np.array_equal(mat, expected):
        raise RowSumViolation("interconnection does not match the declared mounts")

    return spec


def _polygon_order(spec):
    """Polygons sorted parents-first (the tree is already validated)."""
    order = []
    placed = set()
    pending = list(range(spec.p))
    while pending:
        progressed = False
        for q in list(pending):
            parent = spec.polygons[q].parent
            if parent is None or parent in placed:
                order.append(q)
                placed.add(q)
                pending.remove(q)
                progressed = True
        if not progressed:  # unreachable after validation
            raise DisconnectedGraph("polygon tree cannot be ordered")
    return order


def forward_kinematics(spec):
    """Pose of every copter and polygon relative to the base frame C_0."""
    poly_t = np.zeros((spec.p, 4, 4))
    for q in _polygon_order(spec):
        poly = spec.polygons[q]
        if poly.parent is None:
            poly_t[q] = np.eye(4)
            continue
        parent = spec.polygons[poly.parent]
        theta = 2.0 * math.pi * poly.slot / parent.faces
        span = parent.circumradius + spec.rods[poly.rod].length + poly.circumradius
        poly_t[q] = (
            poly_t[poly.parent]
            @ _hrot_z(theta)
            @ _htrans(span)
            @ _hrot_z(math.pi)
        )

    copter_t = np.zeros((spec.n, 4, 4))
    for i, c in enumerate(spec.copters):
        if c.is_top_mounted:
            copter_t[i] = poly_t[c.top_of] @ _htrans(0.0, 0.0, c.z_offset)
        else:
            poly = spec.polygons[c.polygon]
            theta = 2.0 * math.pi * c.slot / poly.faces
            reach = poly.circumradius + spec.rods[c.rod].length
            copter_t[i] = poly_t[c.polygon] @ _hrot_z(theta) @ _htrans(reach)
    return Kinematics(copter_t, poly_t)


def _rod_segments(spec, kin):
    """Endpoints (base frame) and mass of every rod, aligned with spec.rods."""
    segments = [None] * len(spec.rods)

    def vertex(poly_idx, slot, reach):
        poly = spec.polygons[poly_idx]
        theta = 2.0 * math.pi * slot / poly.faces
        point = kin.polygons[poly_idx] @ _hrot_z(theta) @ np.array([reach, 0.0, 0.0, 1.0])
        return point[:3]

    for i, c in enumerate(spec.copters):
        if c.is_top_mounted:
            continue
        poly = spec.polygons[c.polygon]
        a = vertex(c.polygon, c.slot, poly.circumradius)
        b = kin.copters[i][:3, 3]
        segments[c.rod] = (a, b, spec.rods[c.rod].mass)
    for q, poly in enumerate(spec.polygons):
        if poly.parent is None:
            continue
        parent = spec.polygons[poly.parent]
        a = vertex(poly.parent, poly.slot, parent.circumradius)
        b = vertex(poly.parent, poly.slot, parent.circumradius + spec.rods[poly.rod].length)
        segments[poly.rod] = (a, b, spec.rods[poly.rod].mass)
    return segments


def resolve_structure_frame(spec, kinematics=None, payload=None):
    """Locate C_s and express every agent's pose in it.

    The centroid covers copters, polygons and rods (uniform bars); the
    payload is folded in only when declared known, so an unknown payload
    leaves C_s at the hardware centroid for the controller to adapt around.
    """
    if kinematics is None:
        kinematics = forward_kinematics(spec)
    if payload is None:
        payload = spec.payload

    points = []  # (mass, position)
    for i, c in enumerate(spec.copters):
        points.append((c.mass, kinematics.copters[i][:3, 3]))
    for q, poly in enumerate(spec.polygons):
        points.append((poly.mass, kinematics.polygons[q][:3, 3]))
    segments = [s for s in _rod_segments(spec, kinematics) if s is not None]
    for a, b, m in segments:
        points.append((m, 0.5 * (a + b)))

    hw_mass = sum(m for m, _ in points)
    hw_com = sum(m * pos for m, pos in points) / hw_mass

    offset = payload.offset_vector()
    if payload.known and payload.mass > 0:
        com = (hw_mass * hw_com + payload.mass * (hw_com + offset)) / (
            hw_mass + payload.mass
        )
    else:
        com = hw_com

    planar = kinematics.copters[:, :2, 3] - com[:2]
    dists = np.hypot(planar[:, 0], planar[:, 1])
    xs_agent = int(np.argmax(dists))  # argmax returns the lowest index on ties
    if dists[xs_agent] < 1e-12:
        raise DegenerateFrame("all copters coincide with the structure centroid")
    frame_yaw = math.atan2(planar[xs_agent, 1], planar[xs_agent, 0])

    c, s = math.cos(-frame_yaw), math.sin(-frame_yaw)
    to_s = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    n = spec.n
    alphas = np.zeros(n)
    displacements = np.zeros((n, 3))
    transforms = np.zeros((n, 4, 4))
    for i in range(n):
        rot = kinematics.copters[i][:3, :3]
        heading = math.atan2(rot[1, 0], rot[0, 0])
        alphas[i] = _wrap_angle(heading - frame_yaw)
        displacements[i] = to_s @ (kinematics.copters[i][:3, 3] - com)
        transforms[i] = _hrot_z(alphas[i])
        transforms[i][:3, 3] = displacements[i]

    items = []
    for m, pos in points[: spec.n + spec.p]:  # rods enter as bars below
        items.append(("point", m, to_s @ (pos - com)))
    for a, b, m in segments:
        items.append(("bar", m, to_s @ (a - com), to_s @ (b - com)))
    if payload.known and payload.mass > 0:
        items.append(("point", payload.mass, to_s @ (hw_com + offset - com)))

    return StructureGeometry(
        alphas=alphas,
        displacements=displacements,
        transforms=transforms,
        com=com,
        xs_agent=xs_agent,
        frame_yaw=frame_yaw,
        payload_mass=payload.mass,
        payload_offset=to_s @ offset,
        payload_known=payload.known,
        mass_items=tuple(items),
    )


def _point_inertia(mass, r):
    return mass * (float(r @ r) * np.eye(3) - np.outer(r, r))


def _bar_inertia(mass, a, b):
    """Uniform slender bar between a and b, about the frame origin."""
    center = 0.5 * (a + b)
    axis = b - a
    length = float(np.linalg.norm(axis))
    about_center = np.zeros((3, 3))
    if length > 0:
        t = axis / length
        about_center = mass * length ** 2 / 12.0 * (np.eye(3) - np.outer(t, t))
    return about_center + _point_inertia(mass, center)


def mass_properties(spec, geometry, g=GRAVITY):
    """Mass, inertia about C_s and static torque as the controller sees them.

    A known payload is included in the mass and inertia (it is part of C_s);
    an unknown one instead shows up as the static torque r_p x (m_p * g)
    evaluated at hover attitude, which the attitude loop must estimate.
    """
    total = 0.0
    inertia = np.zeros((3, 3))
    for item in geometry.mass_items:
        if item[0] == "point":
            _, m, r = item
            total += m
            inertia += _point_inertia(m, r)
        else:
            _, m, a, b = item
            total += m
            inertia += _bar_inertia(m, a, b)

    if geometry.payload_known or geometry.payload_mass == 0:
        static_torque = np.zeros(3)
    else:
        weight = np.array([0.0, 0.0, -geometry.payload_mass * g])
        static_torque = np.cross(geometry.payload_offset, weight)
    return MassProperties(
        total_mass=total,
        inertia=inertia,
        static_torque=static_torque,
        payload_offset=geometry.payload_offset.copy(),
    )


def plant_mass_properties(spec, geometry, g=GRAVITY):
    """Simulation-truth variant: an unknown payload still flies with us.

    Returns MassProperties with the payload mass and parallel-axis inertia
    always folded in, and the hover-attitude static torque it exerts about
    C_s (zero when the payload was known, since C_s then contains it).
    """
    base = mass_properties(spec, geometry, g)
    if geometry.payload_known or geometry.payload_mass == 0:
        return base
    m_p = geometry.payload_mass
    return MassProperties(
        total_mass=base.total_mass + m_p,
        inertia=base.inertia + _point_inertia(m_p, geometry.payload_offset),
        static_torque=base.static_torque,
        payload_offset=base.payload_offset,
    )


def agent_beams(spec):
    """BeamParams per agent; None for top-mounted (rigidly seated) copters."""
    beams = []
    for c in spec.copters:
        if c.is_top_mounted:
            beams.append(None)
            continue
        rod = spec.rods[c.rod]
        beams.append(
            BeamParams(
                length=rod.length,
                section_inertia=section_inertia_circular(rod.diameter),
                youngs_modulus=rod.youngs_modulus,
                tip_mass=c.mass,
            )
        )
    return beams
