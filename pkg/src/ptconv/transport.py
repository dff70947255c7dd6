"""Field-aligned frames, edge transition matrices, transport and log maps.

Every face gets an orthonormal frame (b1, b2, n) with b1 along the geodesic
field's gradient.  Transport along the field's integral curves then amounts to
keeping a tangent vector's coefficients in this frame field; the transition
R_st = F_s F_t^T between adjacent faces is the discrete connection.  Vertex
frames (where kernels are anchored) come from averaging incident face frames.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .geodesic import GeodesicField, _run
from .mesh import TriangleMesh

__all__ = [
    "FrameError",
    "FrameField",
    "TransitionSet",
    "TangentCoords",
    "build_frames",
    "transitions",
    "transport_vector",
    "to_ambient",
    "log_map",
    "log_map_pairs",
    "compose_transitions",
]


class FrameError(ValueError):
    def __init__(self, face: int):
        self.face = face
        super().__init__(f"zero-norm field direction on face {face} after singular fill-in")


class TangentCoords(NamedTuple):
    """Coefficients of a tangent vector in a vertex frame."""

    a1: float
    a2: float
    fallback: bool = False

    @property
    def norm(self) -> float:
        return float(np.hypot(self.a1, self.a2))


@dataclass(frozen=True, eq=False)
class FrameField:
    mesh: TriangleMesh
    face_b1: np.ndarray
    face_b2: np.ndarray
    face_normal: np.ndarray
    vertex_b1: np.ndarray
    vertex_b2: np.ndarray
    vertex_normal: np.ndarray

    def face_frame(self, s: int) -> np.ndarray:
        """3x3 matrix with columns (b1, b2, n) of face ``s``."""
        return np.column_stack([self.face_b1[s], self.face_b2[s], self.face_normal[s]])

    def vertex_frame(self, x: int) -> np.ndarray:
        return np.column_stack([self.vertex_b1[x], self.vertex_b2[x], self.vertex_normal[x]])

    @property
    def face_frames(self) -> np.ndarray:
        return np.stack([self.face_b1, self.face_b2, self.face_normal], axis=2)

    @property
    def vertex_frames(self) -> np.ndarray:
        return np.stack([self.vertex_b1, self.vertex_b2, self.vertex_normal], axis=2)


@dataclass(frozen=True, eq=False)
class TransitionSet:
    """R[k] maps frame of face pairs[k, 1] onto frame of face pairs[k, 0]."""

    pairs: np.ndarray
    R: np.ndarray
    _index: dict = field(repr=False, default_factory=dict)

    def get(self, s: int, t: int) -> np.ndarray:
        if not self._index:
            for k, (a, b) in enumerate(self.pairs):
                self._index[(int(a), int(b))] = k
        k = self._index.get((s, t))
        if k is not None:
            return self.R[k]
        k = self._index.get((t, s))
        if k is None:
            raise KeyError(f"faces {s} and {t} do not share an interior edge")
        return self.R[k].T


def _polar(a: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(a)
    r = u @ vt
    flip = np.linalg.det(r) < 0
    if flip.any():
        u[flip, :, -1] *= -1
        r[flip] = u[flip] @ vt[flip]
    return r


def build_frames(mesh: TriangleMesh, field: GeodesicField) -> FrameField:
    n = mesh.face_normals
    g = field.face_gradient
    g = g - np.einsum("ij,ij->i", g, n)[:, None] * n
    norm = np.linalg.norm(g, axis=1)
    bad = np.flatnonzero(norm < 1e-12)
    if bad.size:
        raise FrameError(int(bad[0]))
    b1 = g / norm[:, None]
    b2 = np.cross(n, b1)

    frames = np.stack([b1, b2, n], axis=2)
    acc = np.zeros((mesh.n_vertices, 3, 3))
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], mesh.corner_angles[:, k, None, None] * frames)
    vf = _polar(acc)
    return FrameField(
        mesh=mesh,
        face_b1=b1,
        face_b2=b2,
        face_normal=n.copy(),
        vertex_b1=np.ascontiguousarray(vf[:, :, 0]),
        vertex_b2=np.ascontiguousarray(vf[:, :, 1]),
        vertex_normal=np.ascontiguousarray(vf[:, :, 2]),
    )


def transitions(frames: FrameField) -> TransitionSet:
    """R_st with R_st F_t = F_s for every interior edge (s, t)."""
    pairs = frames.mesh.interior_edge_faces
    F = frames.face_frames
    R = F[pairs[:, 0]] @ np.transpose(F[pairs[:, 1]], (0, 2, 1))
    return TransitionSet(pairs=pairs.copy(), R=R)


def compose_transitions(trans: TransitionSet, loop) -> np.ndarray:
    """Product R_{f0 f1} R_{f1 f2} ... R_{fk f0} around a closed face path."""
    loop = list(loop)
    out = np.eye(3)
    for s, t in zip(loop, loop[1:] + loop[:1]):
        out = out @ trans.get(s, t)
    return out


def transport_vector(frames: FrameField, v, x: int) -> TangentCoords:
    """Move tangent coordinates from the anchor to vertex ``x``.

    In the field-aligned frame field transport preserves coefficients, so the
    same (a1, a2) are returned, now read in the frame at ``x``.
    """
    if not 0 <= x < frames.mesh.n_vertices:
        raise IndexError(f"vertex {x} out of range")
    a1, a2 = float(v[0]), float(v[1])
    return TangentCoords(a1, a2)


def to_ambient(frames: FrameField, x: int, v) -> np.ndarray:
    """3D tangent vector a1 b1(x) + a2 b2(x)."""
    return v[0] * frames.vertex_b1[x] + v[1] * frames.vertex_b2[x]


def _path_direction(mesh: TriangleMesh, x: int, y: int) -> np.ndarray:
    _, pred = csgraph.dijkstra(mesh.adjacency, indices=x, return_predecessors=True)
    step = y
    while pred[step] != x:
        step = pred[step]
        if step < 0:
            raise ValueError(f"vertex {y} unreachable from {x}")
    return mesh.vertices[step] - mesh.vertices[x]


def _fallback_coords(mesh: TriangleMesh, frames: FrameField, x: int, y: int):
    """Direction of the first edge on the shortest edge path, else b1 itself."""
    c1, c2 = _coords(frames, np.array([x]), _path_direction(mesh, x, y)[None])
    c1, c2 = float(c1[0]), float(c2[0])
    r = float(np.hypot(c1, c2))
    if r <= 1e-12 * mesh.mean_edge_length:
        return 1.0, 0.0, 1.0
    return c1, c2, r


def _coords(frames: FrameField, x: np.ndarray, d3: np.ndarray):
    c1 = np.einsum("ij,ij->i", d3, frames.vertex_b1[x])
    c2 = np.einsum("ij,ij->i", d3, frames.vertex_b2[x])
    return c1, c2


def log_map(mesh: TriangleMesh, frames: FrameField, x: int, y: int, distance: float | None = None) -> TangentCoords:
    """Tangent coordinates at ``x`` pointing to ``y``.

    The angle comes from projecting y - x onto the tangent plane at ``x``; the
    length is the geodesic distance (fast marching from ``x`` unless given).
    If y - x is (numerically) normal to the tangent plane, the first edge of
    the shortest edge path supplies the direction instead, or b1 when that
    degenerates as well; ``fallback`` is then set.
    """
    if x == y:
        return TangentCoords(0.0, 0.0)
    if distance is None:
        dist, _ = _run(mesh, [x])
        distance = float(dist[y])
    d3 = (mesh.vertices[y] - mesh.vertices[x])[None]
    c1, c2 = (float(c[0]) for c in _coords(frames, np.array([x]), d3))
    r = float(np.hypot(c1, c2))
    fallback = r <= 1e-12 * float(np.linalg.norm(d3))
    if fallback:
        c1, c2, r = _fallback_coords(mesh, frames, x, y)
    return TangentCoords(distance * c1 / r, distance * c2 / r, fallback)


def log_map_pairs(mesh: TriangleMesh, frames: FrameField, local: sparse.csr_matrix):
    """Vectorised log map over every stored (x, y) entry of ``local``.

    ``local`` is a CSR matrix of geodesic distances (row x, column y), as from
    :func:`ptconv.geodesic.local_distances`.  Returns (a1, a2, fallback) arrays
    aligned with ``local.data``.
    """
    coo = local.tocoo()
    x, y, dist = coo.row, coo.col, coo.data
    d3 = mesh.vertices[y] - mesh.vertices[x]
    c1, c2 = _coords(frames, x, d3)
    r = np.hypot(c1, c2)
    same = x == y
    fallback = ~same & (r <= 1e-12 * np.linalg.norm(d3, axis=1))
    for k in np.flatnonzero(fallback):
        c1[k], c2[k], r[k] = _fallback_coords(mesh, frames, int(x[k]), int(y[k]))
    scale = np.divide(dist, r, out=np.zeros_like(dist), where=~same)
    return c1 * scale, c2 * scale, fallback
