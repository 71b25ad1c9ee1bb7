"""Minimal PLY reader/writer for labeled point clouds.

Only ``ascii`` and ``binary_little_endian`` payloads are supported. Only the
``vertex`` element is decoded; elements declared after it are ignored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import PlyFormatError

logger = logging.getLogger(__name__)

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_CANONICAL_NAMES = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
                    "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}


@dataclass(frozen=True)
class PlyElement:
    name: str
    count: int
    properties: tuple  # of (name, numpy dtype code)
    has_list: bool = False


@dataclass(frozen=True)
class PlyHeader:
    fmt: str
    elements: tuple
    header_size: int  # bytes, including the end_header newline


def parse_header(raw: bytes) -> PlyHeader:
    if not raw.startswith(b"ply"):
        raise PlyFormatError("not a PLY file (missing 'ply' magic)")
    end = raw.find(b"end_header")
    if end < 0:
        raise PlyFormatError("PLY header has no end_header line")
    nl = raw.find(b"\n", end)
    if nl < 0:
        raise PlyFormatError("PLY header not terminated by newline")
    text = raw[:nl].decode("ascii", errors="replace")
    fmt = None
    elements: list[PlyElement] = []
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.strip().split()
        if not parts or parts[0] in ("ply", "comment", "obj_info", "end_header"):
            continue
        if parts[0] == "format":
            if len(parts) < 2:
                raise PlyFormatError(f"header line {lineno}: malformed format line")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise PlyFormatError(f"header line {lineno}: malformed element line")
            if current is not None:
                elements.append(current)
            current = PlyElement(parts[1], int(parts[2]), ())
        elif parts[0] == "property":
            if current is None:
                raise PlyFormatError(f"header line {lineno}: property before element")
            if len(parts) >= 2 and parts[1] == "list":
                current = PlyElement(current.name, current.count,
                                     current.properties + ((parts[-1], "list"),), True)
                continue
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise PlyFormatError(f"header line {lineno}: unsupported property '{line.strip()}'")
            current = PlyElement(current.name, current.count,
                                 current.properties + ((parts[2], _PLY_TYPES[parts[1]]),),
                                 current.has_list)
        else:
            raise PlyFormatError(f"header line {lineno}: unknown keyword '{parts[0]}'")
    if current is not None:
        elements.append(current)
    if fmt is None:
        raise PlyFormatError("PLY header has no format line")
    if fmt == "binary_big_endian":
        raise PlyFormatError("binary_big_endian PLY is not supported; convert to "
                             "binary_little_endian or ascii")
    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyFormatError(f"unknown PLY format '{fmt}'")
    return PlyHeader(fmt, tuple(elements), nl + 1)


def read_vertices(path) -> tuple[PlyHeader, np.ndarray]:
    """Return the header and a structured array holding the vertex element."""
    raw = Path(path).read_bytes()
    header = parse_header(raw)
    offset = header.header_size
    ascii_lines = None
    line_pos = 0
    if header.fmt == "ascii":
        ascii_lines = raw[offset:].decode("ascii").split("\n")
    for element in header.elements:
        if element.has_list:
            if element.name == "vertex":
                raise PlyFormatError("list properties on the vertex element are not supported")
            if element.count:
                # A list element preceding the vertices cannot be skipped cheaply.
                raise PlyFormatError(f"element '{element.name}' with list properties "
                                     "must come after the vertex element")
            continue
        dtype = np.dtype([(name, "<" + code) for name, code in element.properties])
        if header.fmt == "ascii":
            rows = []
            while len(rows) < element.count:
                if line_pos >= len(ascii_lines):
                    raise OSError(f"{path}: truncated ascii payload in element '{element.name}'")
                line = ascii_lines[line_pos].strip()
                line_pos += 1
                if line:
                    rows.append(line.split())
            data = np.empty(element.count, dtype=dtype)
            for j, (name, code) in enumerate(element.properties):
                try:
                    col = [row[j] for row in rows]
                except IndexError:
                    raise PlyFormatError(f"{path}: ascii row shorter than the "
                                         f"'{element.name}' property list") from None
                data[name] = np.array(col, dtype=np.float64 if code[0] == "f" else np.int64)
        else:
            nbytes = dtype.itemsize * element.count
            if offset + nbytes > len(raw):
                raise OSError(f"{path}: truncated binary payload: element '{element.name}' "
                              f"needs {nbytes} bytes, {len(raw) - offset} available")
            data = np.frombuffer(raw, dtype=dtype, count=element.count, offset=offset).copy()
            offset += nbytes
        if element.name == "vertex":
            return header, data
    raise PlyFormatError(f"{path}: no vertex element")


def write_ply(path, columns: dict, binary: bool = True, comments=()) -> None:
    """Write a single-element (vertex) PLY in canonical form.

    ``columns`` maps property name to a 1-D array; property order follows the
    dict order and the PLY type follows each array's dtype.
    """
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    n = len(arrays[0]) if arrays else 0
    for name, arr in zip(names, arrays):
        if arr.ndim != 1 or len(arr) != n:
            raise ValueError(f"column '{name}' must be 1-D with length {n}")
    codes = []
    for name, arr in zip(names, arrays):
        code = arr.dtype.str[1:]
        if code == "i8":
            code = "i4"
        if code not in _CANONICAL_NAMES:
            raise PlyFormatError(f"column '{name}' has unsupported dtype {arr.dtype}")
        codes.append(code)
    lines = ["ply", "format binary_little_endian 1.0" if binary else "format ascii 1.0"]
    lines += [f"comment {c}" for c in comments]
    lines.append(f"element vertex {n}")
    lines += [f"property {_CANONICAL_NAMES[c]} {name}" for name, c in zip(names, codes)]
    lines.append("end_header")
    head = ("\n".join(lines) + "\n").encode("ascii")
    dtype = np.dtype([(name, "<" + c) for name, c in zip(names, codes)])
    data = np.empty(n, dtype=dtype)
    for name, arr in zip(names, arrays):
        data[name] = arr
    if binary:
        body = data.tobytes()
    else:
        out = []
        for row in data:
            out.append(" ".join(_fmt_ascii(row[name], c) for name, c in zip(names, codes)))
        body = ("\n".join(out) + ("\n" if out else "")).encode("ascii")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(head + body)


def _fmt_ascii(value, code):
    if code[0] == "f":
        # shortest repr that round-trips at the stored precision
        return repr(float(value)) if code == "f8" else str(np.float32(value))
    return str(int(value))
