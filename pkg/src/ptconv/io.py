"""Readers and writers: OFF/OBJ meshes, PLY with vertex scalars, signals.

Signal binary layout (little-endian)::

    magic   4 bytes  b"PTSG"
    n       uint64   vertex count
    q       uint64   channel count
    values  n*q      float64, row-major (vertex-major)
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .mesh import ParseError, TriangleMesh

__all__ = [
    "load_mesh",
    "save_mesh",
    "save_ply",
    "save_frame_glyphs",
    "load_signal",
    "save_signal",
    "SIGNAL_MAGIC",
]

SIGNAL_MAGIC = b"PTSG"


def _format_of(path: Path, format: str | None) -> str:
    fmt = (format or path.suffix.lstrip(".")).upper()
    if fmt not in {"OFF", "OBJ"}:
        raise ParseError(f"unsupported mesh format {fmt!r} (expected OFF or OBJ)")
    return fmt


def _fan(poly: list[int]) -> list[list[int]]:
    return [[poly[0], poly[k], poly[k + 1]] for k in range(1, len(poly) - 1)]


def _read_off(text: str):
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.append(line.split())
    if not tokens or not tokens[0][0].upper().endswith("OFF"):
        raise ParseError("missing OFF header")
    head = tokens[0][1:] if len(tokens[0]) > 1 else None
    rows = tokens[1:]
    if head is None:
        if not rows:
            raise ParseError("missing OFF counts line")
        head, rows = rows[0], rows[1:]
    try:
        nv, nf = int(head[0]), int(head[1])
        verts = [[float(x) for x in r[:3]] for r in rows[:nv]]
        faces = []
        for r in rows[nv:nv + nf]:
            k = int(r[0])
            poly = [int(x) for x in r[1:1 + k]]
            if len(poly) != k or k < 3:
                raise ParseError(f"malformed face record {' '.join(r)!r}")
            faces.extend(_fan(poly))
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed OFF: {exc}") from None
    if len(verts) != nv or any(len(v) != 3 for v in verts):
        raise ParseError("OFF vertex section truncated")
    if len(faces) < nf:
        raise ParseError("OFF face section truncated")
    return verts, faces


def _read_obj(text: str):
    verts, faces = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
                if len(verts[-1]) != 3:
                    raise ValueError("vertex needs 3 coordinates")
            elif parts[0] == "f":
                poly = []
                for tok in parts[1:]:
                    idx = int(tok.split("/")[0])
                    poly.append(idx - 1 if idx > 0 else len(verts) + idx)
                if len(poly) < 3:
                    raise ValueError("face needs at least 3 vertices")
                faces.extend(_fan(poly))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
    return verts, faces


def load_mesh(path, format: str | None = None) -> TriangleMesh:
    """Read an OFF or OBJ file (vertex and face records only)."""
    path = Path(path)
    fmt = _format_of(path, format)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    verts, faces = _read_off(text) if fmt == "OFF" else _read_obj(text)
    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_mesh(mesh: TriangleMesh, path, format: str | None = None) -> None:
    """Write OFF or OBJ; coordinates use ``repr`` so they round-trip exactly."""
    path = Path(path)
    fmt = _format_of(path, format)
    lines = []
    if fmt == "OFF":
        lines.append("OFF")
        lines.append(f"{mesh.n_vertices} {mesh.n_faces} 0")
        lines += [" ".join(repr(float(x)) for x in v) for v in mesh.vertices]
        lines += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
    else:
        lines += ["v " + " ".join(repr(float(x)) for x in v) for v in mesh.vertices]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    path.write_text("\n".join(lines) + "\n")


def save_ply(mesh: TriangleMesh, path, scalars: dict[str, np.ndarray] | None = None) -> None:
    """ASCII PLY with optional per-vertex float properties (e.g. distance, response)."""
    scalars = scalars or {}
    cols = []
    for name, values in scalars.items():
        values = np.asarray(values, dtype=np.float64).ravel()
        if len(values) != mesh.n_vertices:
            raise ValueError(f"scalar {name!r} has {len(values)} values, mesh has {mesh.n_vertices} vertices")
        cols.append(values)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {mesh.n_vertices}",
        "property double x",
        "property double y",
        "property double z",
    ]
    header += [f"property double {name}" for name in scalars]
    header += [f"element face {mesh.n_faces}", "property list uchar int vertex_indices", "end_header"]
    data = np.column_stack([mesh.vertices] + cols) if cols else mesh.vertices
    body = [" ".join(repr(float(x)) for x in row) for row in data]
    body += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(header + body) + "\n")


def save_frame_glyphs(points: np.ndarray, b1: np.ndarray, b2: np.ndarray, path, scale: float) -> None:
    """Write frame axes as PLY line segments (debug visualisation)."""
    pts = np.concatenate([points, points + scale * b1, points + scale * b2])
    n = len(points)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property double x",
        "property double y",
        "property double z",
        f"element edge {2 * n}",
        "property int vertex1",
        "property int vertex2",
        "end_header",
    ]
    body = [" ".join(repr(float(x)) for x in p) for p in pts]
    body += [f"{i} {i + n}" for i in range(n)]
    body += [f"{i} {i + 2 * n}" for i in range(n)]
    Path(path).write_text("\n".join(header + body) + "\n")


def save_signal(values: np.ndarray, path, names: list[str] | None = None) -> None:
    """Store an n x q signal as CSV (``.csv``) or the binary block (anything else)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    path = Path(path)
    if path.suffix.lower() == ".csv":
        names = names or [f"c{i}" for i in range(values.shape[1])]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex", *names])
            for i, row in enumerate(values):
                w.writerow([i, *(repr(float(x)) for x in row)])
    else:
        n, q = values.shape
        with path.open("wb") as fh:
            fh.write(SIGNAL_MAGIC + struct.pack("<QQ", n, q))
            fh.write(values.astype("<f8").tobytes(order="C"))


def load_signal(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        body = rows[1:]
        ids = np.array([int(r[0]) for r in body])
        vals = np.array([[float(x) for x in r[1:]] for r in body])
        out = np.empty_like(vals)
        out[ids] = vals
        return out
    raw = path.read_bytes()
    if raw[:4] != SIGNAL_MAGIC:
        raise ParseError(f"{path}: bad signal magic {raw[:4]!r}")
    n, q = struct.unpack("<QQ", raw[4:20])
    data = np.frombuffer(raw, dtype="<f8", offset=20)
    if data.size != n * q:
        raise ParseError(f"{path}: expected {n * q} values, found {data.size}")
    return data.reshape(n, q).astype(np.float64)
