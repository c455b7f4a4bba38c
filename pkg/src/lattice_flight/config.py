"""Structure description files.

UTF-8 text, '#' comments, repeated bracketed sections.  Keys may sit on the
section line itself or on following lines:

    [polygon] faces=4 mass=0.007 circumradius=0.03
    [rod] length=0.14 mass=0.0035 diameter=0.005 youngs_modulus=2.3e9
    [copter]
    mass = 0.037
    rod = 0
    polygon = 0
    slot = 0
    [copter] mass=0.037 top_of=0 z_offset=0.06
    [interconnect]
    row = 1 1 0 0 0
    [payload] mass=0.05 offset=0.02 -0.01 0.0 known=false

Polygons, rods and copters are numbered by order of appearance; child
polygons reference their parent with parent=/slot=/rod= keys.  The
[interconnect] section is optional; when omitted, the matrix implied by the
mounts is used, and when present it must agree with them.  All parse errors
report the offending line number.
"""

from pathlib import Path

import numpy as np

from .errors import ConfigError
from .structure import (
    CopterSpec,
    PayloadSpec,
    PolygonSpec,
    RodSpec,
    StructureSpec,
    interconnection_from_mounts,
)


class Section:
    """One bracketed section: ordered (key, raw value, line) entries."""

    def __init__(self, name, line, path=None):
        self.name = name
        self.line = line
        self.path = path
        self.entries = []

    def _fail(self, message, line=None):
        raise ConfigError(message, path=self.path, line=self.line if line is None else line)

    def add(self, key, value, line):
        self.entries.append((key, value, line))

    def keys(self):
        return [k for k, _, _ in self.entries]

    def get_all(self, key):
        return [(v, ln) for k, v, ln in self.entries if k == key]

    def get_raw(self, key, default=None, required=False):
        hits = self.get_all(key)
        if not hits:
            if required:
                self._fail(f"[{self.name}] missing required key '{key}'")
            return default, self.line
        if len(hits) > 1:
            self._fail(f"[{self.name}] key '{key}' given twice", line=hits[1][1])
        return hits[0]

    def has(self, key):
        return bool(self.get_all(key))

    def get_float(self, key, default=None, required=False):
        raw, line = self.get_raw(key, default=default, required=required)
        if raw is default and not isinstance(raw, str):
            return raw
        try:
            return float(raw)
        except ValueError:
            self._fail(f"[{self.name}] {key}: expected a number, got '{raw}'", line=line)

    def get_int(self, key, default=None, required=False):
        raw, line = self.get_raw(key, default=default, required=required)
        if raw is default and not isinstance(raw, str):
            return raw
        try:
            return int(raw)
        except ValueError:
            self._fail(f"[{self.name}] {key}: expected an integer, got '{raw}'", line=line)

    def get_bool(self, key, default=None, required=False):
        raw, line = self.get_raw(key, default=default, required=required)
        if raw is default and not isinstance(raw, str):
            return raw
        lowered = raw.strip().lower()
        if lowered in ("true", "yes", "1"):
            return True
        if lowered in ("false", "no", "0"):
            return False
        self._fail(f"[{self.name}] {key}: expected true|false, got '{raw}'", line=line)

    def get_floats(self, key, count=None, default=None, required=False):
        raw, line = self.get_raw(key, default=default, required=required)
        if raw is default and not isinstance(raw, str):
            return raw
        try:
            values = [float(tok) for tok in raw.split()]
        except ValueError:
            self._fail(f"[{self.name}] {key}: expected numbers, got '{raw}'", line=line)
        if count is not None and len(values) != count:
            self._fail(
                f"[{self.name}] {key}: expected {count} numbers, got {len(values)}",
                line=line,
            )
        return values

    def reject_unknown(self, allowed):
        for key, _, line in self.entries:
            if key not in allowed:
                self._fail(f"[{self.name}] unknown key '{key}'", line=line)


def iter_sections(text, path=None):
    """Split config text into Section objects, preserving line numbers."""
    sections = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            end = line.find("]")
            if end < 0:
                raise ConfigError("unterminated section header", path=path, line=lineno)
            name = line[1:end].strip()
            if not name:
                raise ConfigError("empty section name", path=path, line=lineno)
            current = Section(name, lineno, path)
            sections.append(current)
            line = line[end + 1 :].strip()
            if not line:
                continue
            # inline key=value pairs after the bracket
            for key, value in _split_pairs(line, path, lineno):
                current.add(key, value, lineno)
            continue
        if current is None:
            raise ConfigError(f"data before any section: '{line}'", path=path, line=lineno)
        if "=" not in line:
            raise ConfigError(f"expected key=value, got '{line}'", path=path, line=lineno)
        key, value = line.split("=", 1)
        current.add(key.strip(), value.strip(), lineno)
    return sections


def _split_pairs(chunk, path, lineno):
    """Inline 'a=1 b=2 offset=0.1 -0.2 0.0' -> [(a,1), (b,2), (offset, ...)].

    A token containing '=' starts a new pair; bare tokens extend the value of
    the previous key (so vector values work inline too).
    """
    pairs = []
    for token in chunk.split():
        if "=" in token:
            key, value = token.split("=", 1)
            if not key:
                raise ConfigError(f"malformed pair '{token}'", path=path, line=lineno)
            pairs.append([key.strip(), value.strip()])
        else:
            if not pairs:
                raise ConfigError(f"stray token '{token}'", path=path, line=lineno)
            pairs[-1][1] = (pairs[-1][1] + " " + token).strip()
    return [(k, v) for k, v in pairs]


_POLYGON_KEYS = {"faces", "mass", "circumradius", "parent", "slot", "rod"}
_ROD_KEYS = {"length", "mass", "diameter", "youngs_modulus"}
_COPTER_KEYS = {"mass", "rod", "polygon", "slot", "top_of", "z_offset"}
_PAYLOAD_KEYS = {"mass", "offset", "known"}


def parse_structure_text(text, path=None):
    """Parse a structure description; returns an unvalidated StructureSpec."""
    polygons = []
    rods = []
    copters = []
    payload = PayloadSpec()
    interconnect_rows = []
    payload_seen = False
    interconnect_seen = False

    for section in iter_sections(text, path):
        name = section.name.lower()
        if name == "polygon":
            section.reject_unknown(_POLYGON_KEYS)
            polygons.append(
                PolygonSpec(
                    faces=section.get_int("faces", required=True),
                    mass=section.get_float("mass", required=True),
                    circumradius=section.get_float("circumradius", required=True),
                    parent=section.get_int("parent"),
                    slot=section.get_int("slot"),
                    rod=section.get_int("rod"),
                )
            )
        elif name == "rod":
            section.reject_unknown(_ROD_KEYS)
            rods.append(
                RodSpec(
                    length=section.get_float("length", required=True),
                    mass=section.get_float("mass", required=True),
                    diameter=section.get_float("diameter", required=True),
                    youngs_modulus=section.get_float("youngs_modulus", required=True),
                )
            )
        elif name == "copter":
            section.reject_unknown(_COPTER_KEYS)
            top = section.has("top_of")
            if top:
                copters.append(
                    CopterSpec(
                        mass=section.get_float("mass", required=True),
                        top_of=section.get_int("top_of"),
                        z_offset=section.get_float("z_offset", default=0.0),
                    )
                )
            else:
                copters.append(
                    CopterSpec(
                        mass=section.get_float("mass", required=True),
                        rod=section.get_int("rod", required=True),
                        polygon=section.get_int("polygon", required=True),
                        slot=section.get_int("slot", required=True),
                    )
                )
        elif name == "interconnect":
            if interconnect_seen:
                raise ConfigError(
                    "only one [interconnect] section allowed",
                    path=path,
                    line=section.line,
                )
            interconnect_seen = True
            section.reject_unknown({"row"})
            for raw, line in section.get_all("row"):
                try:
                    row = [int(tok) for tok in raw.split()]
                except ValueError:
                    raise ConfigError(
                        f"interconnect row: expected integers, got '{raw}'",
                        path=path,
                        line=line,
                    )
                interconnect_rows.append((row, line))
        elif name == "payload":
            if payload_seen:
                raise ConfigError(
                    "only one [payload] section allowed", path=path, line=section.line
                )
            payload_seen = True
            section.reject_unknown(_PAYLOAD_KEYS)
            offset = section.get_floats("offset", count=3, default=[0.0, 0.0, 0.0])
            payload = PayloadSpec(
                mass=section.get_float("mass", required=True),
                offset=tuple(offset),
                known=section.get_bool("known", default=True),
            )
        else:
            raise ConfigError(
                f"unknown section [{section.name}]", path=path, line=section.line
            )

    n, p = len(copters), len(polygons)
    # referential checks here so they carry line numbers via section context
    if interconnect_rows:
        width = n + p
        for row, line in interconnect_rows:
            if len(row) != width:
                raise ConfigError(
                    f"interconnect row has {len(row)} entries, expected {width}",
                    path=path,
                    line=line,
                )
        if len(interconnect_rows) != p:
            raise ConfigError(
                f"expected {p} interconnect rows, got {len(interconnect_rows)}",
                path=path,
                line=interconnect_rows[0][1],
            )
        matrix = np.array([row for row, _ in interconnect_rows], dtype=int)
    else:
        matrix = interconnection_from_mounts(copters, polygons)

    return StructureSpec(
        copters=tuple(copters),
        polygons=tuple(polygons),
        rods=tuple(rods),
        interconnection=matrix,
        payload=payload,
    )


def parse_structure_file(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read structure file: {exc}", path=str(path))
    return parse_structure_text(text, path=str(path))
