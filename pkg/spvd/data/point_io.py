""" Reading and writing point clouds as XYZ text and PLY.

Supported PLY subset: `format ascii 1.0` or `format binary_little_endian 1.0`, an element
`vertex` with float x, y, z properties and an optional integer `part` property. Other vertex
properties are skipped on read; other elements (faces, edges) are skipped, list properties
included. Coordinates are returned as float32.

Parse errors carry the 1-based line number for header and ASCII content and the byte offset
for binary payloads.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from spvd.errors import ParseError
from spvd.spvd_types import PointCloud

PathLike = Union[str, Path]

FLOAT_TYPES = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8"}
INT_TYPES = {
    "char": "<i1",
    "int8": "<i1",
    "uchar": "<u1",
    "uint8": "<u1",
    "short": "<i2",
    "int16": "<i2",
    "ushort": "<u2",
    "uint16": "<u2",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
}
FORMATS = ("ascii", "binary_little_endian")


@dataclass
class PlyProperty:
    name: str
    dtype: str
    count_dtype: Optional[str] = None

    @property
    def is_list(self) -> bool:
        return self.count_dtype is not None


@dataclass
class PlyElement:
    name: str
    count: int
    properties: list[PlyProperty]

    def property_names(self) -> list[str]:
        return [p.name for p in self.properties]


@dataclass
class PlyHeader:
    format: str
    elements: list[PlyElement]
    # Byte offset and line number of the first line after end_header.
    body_offset: int
    body_line: int

    def vertex(self) -> PlyElement:
        for element in self.elements:
            if element.name == "vertex":
                return element
        raise KeyError("vertex")


def load_xyz(path: PathLike) -> PointCloud:
    """Load a cloud stored as one "x y z" triple per line.

    Blank lines are skipped.

    Raises:
        ParseError: If a line does not hold exactly three numbers.
    """

    points = []
    with open(path, "r") as f:
        for number, line in enumerate(f, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 3:
                raise ParseError(
                    str(path), f"expected 3 values, found {len(fields)}", line=number
                )
            try:
                points.append([float(v) for v in fields])
            except ValueError:
                raise ParseError(str(path), f"not a number: {line.strip()}", line=number)
    if not points:
        raise ParseError(str(path), "no points found")
    return PointCloud(np.asarray(points, dtype=np.float32), name=Path(path).stem)


def save_xyz(cloud: PointCloud, path: PathLike) -> None:
    np.savetxt(path, np.asarray(cloud.points, dtype=np.float32), fmt="%.9g")


def parse_ply_header(path: str, raw: bytes) -> PlyHeader:
    """Parse the header of a PLY file held in `raw`.

    Raises:
        ParseError: For a missing magic line, an unsupported format, unknown property types,
            or a header without `end_header`.
    """

    end = raw.find(b"end_header")
    if end < 0:
        raise ParseError(path, "header has no end_header line", line=1)
    newline = raw.find(b"\n", end)
    if newline < 0:
        raise ParseError(path, "header has no end_header line", line=1)
    try:
        lines = raw[:newline].decode("ascii").split("\n")
    except UnicodeDecodeError:
        raise ParseError(path, "header is not ASCII", line=1)

    if lines[0].strip() != "ply":
        raise ParseError(path, "missing 'ply' magic line", line=1)

    fmt: Optional[str] = None
    elements: list[PlyElement] = []
    for number, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if not fields or fields[0] in ("comment", "obj_info"):
            continue
        keyword = fields[0]
        if keyword == "format":
            if len(fields) != 3 or fields[1] not in FORMATS or fields[2] != "1.0":
                raise ParseError(path, f"unsupported format: {line.strip()}", line=number)
            fmt = fields[1]
        elif keyword == "element":
            if len(fields) != 3 or not fields[2].isdigit():
                raise ParseError(path, f"malformed element line: {line.strip()}", line=number)
            elements.append(PlyElement(fields[1], int(fields[2]), []))
        elif keyword == "property":
            if not elements:
                raise ParseError(path, "property declared before any element", line=number)
            elements[-1].properties.append(_parse_property(path, fields, number))
        elif keyword == "end_header":
            break
        else:
            raise ParseError(path, f"unknown header keyword {keyword}", line=number)

    if fmt is None:
        raise ParseError(path, "header declares no format", line=len(lines))
    return PlyHeader(fmt, elements, newline + 1, len(lines) + 1)


def _parse_property(path: str, fields: list[str], number: int) -> PlyProperty:
    types = {**FLOAT_TYPES, **INT_TYPES}
    if len(fields) == 5 and fields[1] == "list":
        if fields[2] not in INT_TYPES or fields[3] not in types:
            raise ParseError(path, f"unknown list property types {fields[2:4]}", line=number)
        return PlyProperty(fields[4], types[fields[3]], INT_TYPES[fields[2]])
    if len(fields) != 3 or fields[1] not in types:
        raise ParseError(path, f"malformed property line: {' '.join(fields)}", line=number)
    return PlyProperty(fields[2], types[fields[1]])


def _check_vertex(path: str, header: PlyHeader) -> PlyElement:
    try:
        vertex = header.vertex()
    except KeyError:
        raise ParseError(path, "no vertex element", line=header.body_line - 1)
    if any(p.is_list for p in vertex.properties):
        raise ParseError(
            path, "vertex list properties are not supported", line=header.body_line - 1
        )
    props = {p.name: p for p in vertex.properties}
    for axis in ("x", "y", "z"):
        prop = props.get(axis)
        if prop is None:
            raise ParseError(path, f"vertex has no {axis} property", line=header.body_line - 1)
        if prop.dtype not in FLOAT_TYPES.values():
            raise ParseError(
                path, f"vertex property {axis} is not a float", line=header.body_line - 1
            )
    part = props.get("part")
    if part is not None and part.dtype not in INT_TYPES.values():
        raise ParseError(
            path, "vertex property part is not an integer", line=header.body_line - 1
        )
    return vertex


def _read_ascii(path: str, raw: bytes, header: PlyHeader) -> dict[str, np.ndarray]:
    lines = raw[header.body_offset :].decode("ascii", errors="replace").split("\n")
    cursor = 0
    columns: dict[str, np.ndarray] = {}
    for element in header.elements:
        if element.name != "vertex":
            # Skip one line per row; list properties keep a row on one line.
            for _ in range(element.count):
                while cursor < len(lines) and not lines[cursor].strip():
                    cursor += 1
                if cursor >= len(lines):
                    raise ParseError(
                        path,
                        f"truncated {element.name} data",
                        line=header.body_line + cursor,
                    )
                cursor += 1
            continue
        rows = np.empty((element.count, len(element.properties)), dtype=np.float64)
        for row in range(element.count):
            while cursor < len(lines) and not lines[cursor].strip():
                cursor += 1
            number = header.body_line + cursor
            if cursor >= len(lines):
                raise ParseError(path, f"truncated vertex data at row {row}", line=number)
            fields = lines[cursor].split()
            if len(fields) != len(element.properties):
                raise ParseError(
                    path,
                    f"expected {len(element.properties)} values, found {len(fields)}",
                    line=number,
                )
            try:
                rows[row] = [float(v) for v in fields]
            except ValueError:
                raise ParseError(path, f"not a number: {lines[cursor].strip()}", line=number)
            cursor += 1
        for index, prop in enumerate(element.properties):
            columns[prop.name] = rows[:, index]
    return columns


def _read_binary(path: str, raw: bytes, header: PlyHeader) -> dict[str, np.ndarray]:
    offset = header.body_offset
    columns: dict[str, np.ndarray] = {}
    for element in header.elements:
        if any(p.is_list for p in element.properties):
            offset = _skip_list_element(path, raw, element, offset)
            continue
        dtype = np.dtype([(f"{i}_{p.name}", p.dtype) for i, p in enumerate(element.properties)])
        size = dtype.itemsize * element.count
        if offset + size > len(raw):
            raise ParseError(
                path, f"truncated {element.name} payload", offset=min(offset + size, len(raw))
            )
        if element.name == "vertex":
            table = np.frombuffer(raw, dtype=dtype, count=element.count, offset=offset)
            for field, prop in zip(dtype.names or (), element.properties):
                columns[prop.name] = table[field]
        offset += size
    return columns


def _skip_list_element(path: str, raw: bytes, element: PlyElement, offset: int) -> int:
    for _ in range(element.count):
        for prop in element.properties:
            if not prop.is_list:
                offset += np.dtype(prop.dtype).itemsize
                continue
            count_type = np.dtype(prop.count_dtype)
            if offset + count_type.itemsize > len(raw):
                raise ParseError(path, f"truncated {element.name} payload", offset=len(raw))
            count = int(np.frombuffer(raw, dtype=count_type, count=1, offset=offset)[0])
            offset += count_type.itemsize + count * np.dtype(prop.dtype).itemsize
    if offset > len(raw):
        raise ParseError(path, f"truncated {element.name} payload", offset=len(raw))
    return offset


def load_ply(path: PathLike) -> PointCloud:
    """Load the vertices of a PLY file.

    Parameters
    ----------
    path : str or Path
        File to read.

    Returns
    -------
    PointCloud
        float32 points, and part ids when the vertex element has a `part` property.

    Raises
    ------
    ParseError
        For a malformed header, non-float coordinates, or a truncated payload.
    """

    with open(path, "rb") as f:
        raw = f.read()
    name = str(path)
    header = parse_ply_header(name, raw)
    vertex = _check_vertex(name, header)
    if header.format == "ascii":
        columns = _read_ascii(name, raw, header)
    else:
        columns = _read_binary(name, raw, header)

    points = np.stack([columns["x"], columns["y"], columns["z"]], axis=1).astype(np.float32)
    part_ids = None
    if "part" in columns:
        part_ids = np.asarray(columns["part"]).astype(np.int64)
    logging.debug(f"Loaded {vertex.count} vertices from {name} ({header.format})")
    return PointCloud(points, part_ids=part_ids, name=Path(path).stem)


def save_ply(cloud: PointCloud, path: PathLike, binary: bool = False) -> None:
    """Write a cloud as PLY with float x, y, z and, when present, an int `part` property.

    ASCII values are written with 9 significant digits, which round-trips float32 exactly.
    """

    points = np.asarray(cloud.points, dtype=np.float32)
    has_parts = cloud.part_ids is not None
    header = [
        "ply",
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if has_parts:
        header.append("property int part")
    header.append("end_header")

    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
            if has_parts:
                fields.append(("part", "<i4"))
            table = np.empty(len(points), dtype=np.dtype(fields))
            table["x"], table["y"], table["z"] = points[:, 0], points[:, 1], points[:, 2]
            if has_parts:
                table["part"] = cloud.part_ids
            f.write(table.tobytes())
        else:
            for i, p in enumerate(points):
                line = f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}"
                if has_parts:
                    line += f" {int(cloud.part_ids[i])}"  # type: ignore[index]
                f.write((line + "\n").encode("ascii"))
    logging.debug(f"Wrote {len(points)} points to {path}")


def load_cloud(path: PathLike) -> PointCloud:
    """Load a `.ply` or `.xyz` file by suffix."""

    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return load_ply(path)
    if suffix in (".xyz", ".txt"):
        return load_xyz(path)
    raise ParseError(str(path), f"unsupported file type {suffix}")


def load_directory(directory: PathLike) -> list[PointCloud]:
    """Load every `.ply`/`.xyz` file of a directory, sorted by file name."""

    files = sorted(
        p for p in Path(directory).iterdir() if p.suffix.lower() in (".ply", ".xyz")
    )
    return [load_cloud(p) for p in files]
