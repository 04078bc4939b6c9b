"""Bit-exact reader/writer for Gaussian-splat checkpoint PLY files.

Only the binary little-endian 1.0 flavor with the 62-property vertex layout
used by splat checkpoints is accepted. Values round-trip bit-exactly as
float32; the normal columns are parsed and discarded on read and written as
zeros.
"""

from __future__ import annotations

import numpy as np

from .scene import GaussianScene


class PlyError(Exception):
    """Base class for PLY reader/writer failures."""


class PlyParseError(PlyError):
    """Malformed header. Carries the byte offset of the offending line."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class PlySchemaError(PlyError):
    """Header parsed but the vertex layout is not the expected one."""


class PlyTruncationError(PlyError):
    """Body shorter or longer than the header declares."""

    def __init__(self, expected, actual):
        super().__init__(f"body length mismatch: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


REQUIRED_PROPERTIES = tuple(
    ["x", "y", "z", "nx", "ny", "nz"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(45)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)

_FLOAT_TYPES = {"float", "float32"}
_SCALAR_SIZES = {
    "char": 1, "int8": 1, "uchar": 1, "uint8": 1,
    "short": 2, "int16": 2, "ushort": 2, "uint16": 2,
    "int": 4, "int32": 4, "uint": 4, "uint32": 4,
    "float": 4, "float32": 4,
    "double": 8, "float64": 8,
}


def _split_lines(data: bytes):
    """Yield (offset, line) for each LF-terminated header line."""
    pos = 0
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise PlyParseError("header not terminated by end_header", pos)
        yield pos, data[pos:nl]
        pos = nl + 1


def _parse_header(data: bytes):
    lines = _split_lines(data)
    offset, line = next(lines)
    if line != b"ply":
        raise PlyParseError("missing 'ply' magic line", offset)
    fmt = None
    vertex_count = None
    properties = []  # (type, name)
    in_vertex = False
    for offset, raw in lines:
        try:
            line = raw.decode("ascii")
        except UnicodeDecodeError:
            raise PlyParseError("non-ASCII header line", offset) from None
        tokens = line.split(" ")
        keyword = tokens[0]
        if keyword == "comment":
            continue
        if keyword == "format":
            if tokens[1:] != ["binary_little_endian", "1.0"]:
                raise PlyParseError(f"unsupported format {line!r}", offset)
            fmt = "binary_little_endian_1_0"
        elif keyword == "element":
            if len(tokens) != 3 or tokens[1] != "vertex":
                raise PlySchemaError(f"unsupported element {line!r}")
            if vertex_count is not None:
                raise PlySchemaError("multiple vertex elements")
            try:
                vertex_count = int(tokens[2])
            except ValueError:
                raise PlyParseError(f"bad vertex count {tokens[2]!r}", offset) from None
            if vertex_count < 0:
                raise PlyParseError(f"negative vertex count {vertex_count}", offset)
            in_vertex = True
        elif keyword == "property":
            if not in_vertex:
                raise PlyParseError("property before element", offset)
            if len(tokens) != 3:
                raise PlyParseError(f"bad property line {line!r}", offset)
            properties.append((tokens[1], tokens[2]))
        elif keyword == "end_header":
            body_offset = offset + len(raw) + 1
            if fmt is None:
                raise PlyParseError("missing format line", offset)
            if vertex_count is None:
                raise PlySchemaError("missing vertex element")
            return vertex_count, properties, body_offset
        else:
            raise PlyParseError(f"unknown header keyword {keyword!r}", offset)


def _check_schema(properties, lenient):
    """Validate property order; return total record byte width."""
    names = [name for _, name in properties]
    for i, required in enumerate(REQUIRED_PROPERTIES):
        if i >= len(names) or names[i] != required:
            raise PlySchemaError(f"missing or misplaced property {required!r}")
        ptype = properties[i][0]
        if ptype not in _FLOAT_TYPES:
            raise PlySchemaError(f"property {required!r} must be float32, got {ptype!r}")
    extras = properties[len(REQUIRED_PROPERTIES):]
    if extras and not lenient:
        raise PlySchemaError(f"unexpected extra property {extras[0][1]!r}")
    width = 4 * len(REQUIRED_PROPERTIES)
    for ptype, name in extras:
        if ptype not in _SCALAR_SIZES:
            raise PlySchemaError(f"extra property {name!r} has unsupported type {ptype!r}")
        width += _SCALAR_SIZES[ptype]
    return width


def read_scene(data: bytes, lenient: bool = False) -> GaussianScene:
    """Parse checkpoint PLY bytes into a GaussianScene.

    With lenient=True, extra trailing properties after the 62 required ones
    are skipped instead of rejected.
    """
    count, properties, body_offset = _parse_header(data)
    width = _check_schema(properties, lenient)
    expected = count * width
    actual = len(data) - body_offset
    if actual != expected:
        raise PlyTruncationError(expected, actual)
    body = np.frombuffer(data, dtype=np.uint8, offset=body_offset, count=expected)
    records = body.reshape(count, width)[:, : 4 * len(REQUIRED_PROPERTIES)]
    values = np.ascontiguousarray(records).view("<f4").reshape(count, len(REQUIRED_PROPERTIES))
    return GaussianScene(
        positions=values[:, 0:3],
        rotations=values[:, 58:62],
        log_scales=values[:, 55:58],
        opacity_logits=values[:, 54],
        sh_dc=values[:, 6:9],
        sh_rest=values[:, 9:54],
    )


def write_scene(scene: GaussianScene) -> bytes:
    """Serialize a scene to canonical checkpoint PLY bytes."""
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {scene.count}"]
    header += [f"property float {name}" for name in REQUIRED_PROPERTIES]
    header.append("end_header")
    header_bytes = ("\n".join(header) + "\n").encode("ascii")
    body = np.empty((scene.count, len(REQUIRED_PROPERTIES)), dtype="<f4")
    body[:, 0:3] = scene.positions
    body[:, 3:6] = 0.0  # normals
    body[:, 6:9] = scene.sh_dc
    body[:, 9:54] = scene.sh_rest
    body[:, 54] = scene.opacity_logits
    body[:, 55:58] = scene.log_scales
    body[:, 58:62] = scene.rotations
    return header_bytes + body.tobytes()
