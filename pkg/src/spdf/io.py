"""CSV and ASCII PLY point-cloud files.

CSV files carry a header row; columns are ``x,y,z`` optionally followed by
``nx,ny,nz``, ``s1,s2,s3`` (saliencies), ``label`` (0 Surface, 1 Curve,
2 Junction) and ``confidence``. Headerless CSVs are read as ``x,y,z[,nx,ny,nz]``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import PointCloud

FORMATS = ("csv_xyz", "ply_ascii")

_VECTOR_CHANNELS = {"normal": ("nx", "ny", "nz"), "saliency": ("s1", "s2", "s3")}
_SCALAR_CHANNELS = ("label", "confidence")


class CloudParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


def guess_format(path: str | Path) -> str:
    return "ply_ascii" if str(path).lower().endswith(".ply") else "csv_xyz"


def _columns(cloud: PointCloud) -> tuple[list[str], list[np.ndarray], list[str]]:
    names = ["x", "y", "z"]
    cols = [cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]]
    kinds = ["float"] * 3
    for channel, sub in _VECTOR_CHANNELS.items():
        if channel in cloud.channels:
            values = cloud.channels[channel]
            names += list(sub)
            cols += [values[:, d] for d in range(3)]
            kinds += ["float"] * 3
    for channel in _SCALAR_CHANNELS:
        if channel in cloud.channels:
            names.append(channel)
            cols.append(cloud.channels[channel])
            kinds.append("int" if channel == "label" else "float")
    return names, cols, kinds


def _fmt(value, kind: str) -> str:
    return str(int(value)) if kind == "int" else repr(float(value))


def save_cloud(cloud: PointCloud, path: str | Path, fmt: str | None = None) -> None:
    fmt = fmt or guess_format(path)
    names, cols, kinds = _columns(cloud)
    rows = (
        ",".join(_fmt(col[i], kind) for col, kind in zip(cols, kinds)) for i in range(len(cloud))
    )
    with open(path, "w", newline="\n") as fh:
        if fmt == "csv_xyz":
            fh.write(",".join(names) + "\n")
            for row in rows:
                fh.write(row + "\n")
        elif fmt == "ply_ascii":
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {len(cloud)}\n")
            for name, kind in zip(names, kinds):
                fh.write(f"property {'uchar' if kind == 'int' else 'double'} {name}\n")
            fh.write("end_header\n")
            for row in rows:
                fh.write(row.replace(",", " ") + "\n")
        else:
            raise ValueError(f"unknown format {fmt!r}")


def _assemble(names: list[str], data: np.ndarray) -> PointCloud:
    col = {name: i for i, name in enumerate(names)}
    points = data[:, [col["x"], col["y"], col["z"]]] if len(data) else np.zeros((0, 3))
    channels = {}
    for channel, sub in _VECTOR_CHANNELS.items():
        if all(s in col for s in sub):
            channels[channel] = data[:, [col[s] for s in sub]]
    if "normal" in channels:
        normals = channels["normal"]
        norms = np.linalg.norm(normals, axis=1, keepdims=True)
        off = np.abs(norms[:, 0] - 1.0) > 1e-12
        normals[off] /= norms[off]
    if "label" in col:
        channels["label"] = data[:, col["label"]].astype(np.int8)
    if "confidence" in col:
        channels["confidence"] = data[:, col["confidence"]]
    return PointCloud(points, channels)


def _parse_rows(lines, start_line: int, width: int, sep: str | None, path) -> np.ndarray:
    out = np.empty((len(lines), width))
    for i, line in enumerate(lines):
        parts = line.split(sep) if sep else line.split()
        if len(parts) != width:
            raise CloudParseError(path, start_line + i, f"expected {width} values, got {len(parts)}")
        try:
            out[i] = [float(p) for p in parts]
        except ValueError as err:
            raise CloudParseError(path, start_line + i, str(err)) from None
    return out


def _load_csv(path) -> PointCloud:
    with open(path) as fh:
        lines = [line.strip() for line in fh]
    while lines and not lines[-1]:
        lines.pop()
    if not lines:
        return PointCloud(np.zeros((0, 3)))
    first = [p.strip() for p in lines[0].split(",")]
    try:
        [float(p) for p in first]
        header = None
    except ValueError:
        header = first
    if header is None:
        width = len(first)
        if width not in (3, 6):
            raise CloudParseError(path, 1, f"headerless CSV needs 3 or 6 columns, got {width}")
        names = ["x", "y", "z", "nx", "ny", "nz"][:width]
        data = _parse_rows(lines, 1, width, ",", path)
    else:
        names = header
        if not {"x", "y", "z"} <= set(names):
            raise CloudParseError(path, 1, "header must name x, y and z columns")
        data = _parse_rows(lines[1:], 2, len(names), ",", path)
    return _assemble(names, data)


def _load_ply(path) -> PointCloud:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise CloudParseError(path, 1, "missing 'ply' magic")
    names: list[str] = []
    n_vertex = None
    in_vertex = False
    end = None
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise CloudParseError(path, lineno, "only ASCII PLY is supported")
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise CloudParseError(path, lineno, "malformed element line")
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                n_vertex = int(tokens[2])
            elif n_vertex is None:
                raise CloudParseError(path, lineno, "vertex element must come first")
        elif tokens[0] == "property":
            if tokens[1] == "list":
                if in_vertex:
                    raise CloudParseError(path, lineno, "list properties on vertices are not supported")
                continue
            if len(tokens) != 3:
                raise CloudParseError(path, lineno, "malformed property line")
            if in_vertex:
                names.append(tokens[2])
        elif tokens[0] == "end_header":
            end = lineno
            break
        else:
            raise CloudParseError(path, lineno, f"unexpected header keyword {tokens[0]!r}")
    if end is None:
        raise CloudParseError(path, len(lines), "missing end_header")
    if n_vertex is None:
        raise CloudParseError(path, end, "no vertex element")
    if not {"x", "y", "z"} <= set(names):
        raise CloudParseError(path, end, "vertex element needs x, y and z properties")
    body = lines[end : end + n_vertex]
    if len(body) < n_vertex:
        raise CloudParseError(path, len(lines), f"expected {n_vertex} vertices, found {len(body)}")
    data = _parse_rows(body, end + 1, len(names), None, path)
    # unknown properties are parsed and dropped by _assemble
    return _assemble(names, data)


def load_cloud(path: str | Path, fmt: str | None = None) -> PointCloud:
    fmt = fmt or guess_format(path)
    if fmt == "csv_xyz":
        return _load_csv(path)
    if fmt == "ply_ascii":
        return _load_ply(path)
    raise ValueError(f"unknown format {fmt!r}")
