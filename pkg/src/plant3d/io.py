"""PLY / XYZ point-cloud reading and writing.

Only vertex positions are read. Any other vertex property (colour, normals,
confidence, ...) and any other element (faces, edges) is parsed just far
enough to be skipped.
"""

import logging
import os
import struct
from pathlib import Path

import numpy as np

from .errors import EmptyCloudError, NotFoundError, ParseError

logger = logging.getLogger(__name__)

# PLY scalar type name -> struct format character
_PLY_TYPES = {
    "char": "b", "int8": "b",
    "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h",
    "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i",
    "uint": "I", "uint32": "I",
    "float": "f", "float32": "f",
    "double": "d", "float64": "d",
}


class _Element:
    def __init__(self, name, count):
        self.name = name
        self.count = count
        # (name, scalar type) or (name, (count type, item type)) for lists
        self.properties = []

    @property
    def has_lists(self):
        return any(isinstance(t, tuple) for _, t in self.properties)


def _parse_header(fh):
    first = fh.readline()
    if first.strip() != b"ply":
        raise ParseError("missing 'ply' magic", line=1)
    fmt = None
    elements = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise ParseError("unexpected end of file inside header", line=lineno)
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise ParseError("non-ascii header line", line=lineno) from None
        if not line or line.startswith(("comment", "obj_info")):
            continue
        parts = line.split()
        key = parts[0]
        if key == "format":
            if len(parts) != 3 or parts[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unsupported format {line!r}", line=lineno)
            fmt = parts[1]
        elif key == "element":
            if len(parts) != 3:
                raise ParseError(f"malformed element line {line!r}", line=lineno)
            try:
                count = int(parts[2])
            except ValueError:
                raise ParseError(f"bad element count {parts[2]!r}", line=lineno) from None
            elements.append(_Element(parts[1], count))
        elif key == "property":
            if not elements:
                raise ParseError("property before any element", line=lineno)
            if len(parts) == 5 and parts[1] == "list":
                if parts[2] not in _PLY_TYPES or parts[3] not in _PLY_TYPES:
                    raise ParseError(f"unknown list type in {line!r}", line=lineno)
                elements[-1].properties.append((parts[4], (parts[2], parts[3])))
            elif len(parts) == 3:
                if parts[1] not in _PLY_TYPES:
                    raise ParseError(f"unknown property type {parts[1]!r}", line=lineno)
                elements[-1].properties.append((parts[2], parts[1]))
            else:
                raise ParseError(f"malformed property line {line!r}", line=lineno)
        elif key == "end_header":
            break
        else:
            raise ParseError(f"unexpected header keyword {key!r}", line=lineno)
    if fmt is None:
        raise ParseError("header has no format line", line=lineno)
    return fmt, elements, lineno


def _vertex_xyz_columns(element):
    names = [name for name, _ in element.properties]
    cols = []
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise ParseError(f"vertex element lacks property {axis!r}")
        ptype = element.properties[names.index(axis)][1]
        if ptype not in ("float", "float32", "double", "float64"):
            raise ParseError(f"vertex property {axis!r} must be float32/float64, got {ptype!r}")
        cols.append(names.index(axis))
    return cols


def _read_ascii_body(fh, elements, header_lines):
    lineno = header_lines
    result = None
    for element in elements:
        if element.name == "vertex":
            cols = _vertex_xyz_columns(element)
            out = np.empty((element.count, 3))
            for row in range(element.count):
                raw = fh.readline()
                lineno += 1
                if not raw:
                    raise ParseError("unexpected end of file in vertex data", line=lineno)
                parts = raw.split()
                if len(parts) < len(element.properties):
                    raise ParseError("too few values in vertex row", line=lineno)
                try:
                    out[row] = [float(parts[c]) for c in cols]
                except ValueError:
                    raise ParseError("non-numeric vertex coordinate", line=lineno) from None
            result = out
        else:
            for _ in range(element.count):
                if not fh.readline():
                    raise ParseError(f"unexpected end of file in element {element.name!r}",
                                     line=lineno + 1)
                lineno += 1
    return result


def _skip_binary_rows(fh, element):
    if not element.has_lists:
        size = sum(struct.calcsize("<" + _PLY_TYPES[t]) for _, t in element.properties)
        fh.seek(size * element.count, os.SEEK_CUR)
        return
    for _ in range(element.count):
        for _, ptype in element.properties:
            if isinstance(ptype, tuple):
                cfmt = "<" + _PLY_TYPES[ptype[0]]
                buf = fh.read(struct.calcsize(cfmt))
                if len(buf) != struct.calcsize(cfmt):
                    raise ParseError(f"truncated list in element {element.name!r}")
                (n,) = struct.unpack(cfmt, buf)
                fh.seek(n * struct.calcsize("<" + _PLY_TYPES[ptype[1]]), os.SEEK_CUR)
            else:
                fh.seek(struct.calcsize("<" + _PLY_TYPES[ptype]), os.SEEK_CUR)


def _read_binary_body(fh, elements):
    result = None
    for element in elements:
        if element.name != "vertex":
            _skip_binary_rows(fh, element)
            continue
        if element.has_lists:
            raise ParseError("list properties on vertex element are not supported")
        cols = _vertex_xyz_columns(element)
        dtype = np.dtype([(f"p{i}", "<" + _PLY_TYPES[t])
                          for i, (_, t) in enumerate(element.properties)])
        nbytes = dtype.itemsize * element.count
        buf = fh.read(nbytes)
        if len(buf) != nbytes:
            raise ParseError(f"truncated binary vertex data: expected {nbytes} bytes, got {len(buf)}")
        rows = np.frombuffer(buf, dtype=dtype, count=element.count)
        result = np.stack([rows[f"p{c}"].astype(np.float64) for c in cols], axis=1)
    return result


def read_ply(path):
    """Read vertex positions from an ASCII or binary little-endian PLY file."""
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _parse_header(fh)
        if not any(e.name == "vertex" for e in elements):
            raise ParseError("PLY file has no vertex element")
        if fmt == "ascii":
            pts = _read_ascii_body(fh, elements, header_lines)
        else:
            pts = _read_binary_body(fh, elements)
    return pts


def read_xyz(path):
    """Read whitespace-separated ``x y z`` rows; ``#`` lines are comments."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 3:
                raise ParseError(f"expected 3 values, got {len(parts)}", line=lineno)
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise ParseError("non-numeric coordinate", line=lineno) from None
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3)


def read_points(path, format="auto"):
    """Dispatch to the PLY or XYZ reader and validate the result.

    Raises:
        NotFoundError: ``path`` does not exist.
        ParseError: malformed header or row.
        EmptyCloudError: the file holds zero points.
    """
    path = Path(path)
    if not path.is_file():
        raise NotFoundError(f"no such cloud file: {path}")
    if format == "auto":
        format = "ply" if path.suffix.lower() == ".ply" else "xyz"
    if format == "ply":
        pts = read_ply(path)
    elif format == "xyz":
        pts = read_xyz(path)
    else:
        raise ValueError(f"unknown cloud format {format!r}")
    if pts is None or len(pts) == 0:
        raise EmptyCloudError(f"{path} contains no points")
    if not np.all(np.isfinite(pts)):
        bad = int(np.argmax(~np.all(np.isfinite(pts), axis=1)))
        raise ParseError(f"non-finite coordinate in vertex {bad}")
    logger.debug("read %d points from %s", len(pts), path)
    return pts


def write_ply(path, points, binary=False):
    points = np.asarray(points, dtype=np.float64)
    header = (
        "ply\n"
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
        f"element vertex {len(points)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(points.astype("<f8").tobytes())
        else:
            for x, y, z in points.tolist():
                fh.write(f"{x!r} {y!r} {z!r}\n".encode("ascii"))


def write_xyz(path, points):
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in np.asarray(points, dtype=np.float64).tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")
