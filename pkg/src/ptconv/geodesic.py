"""Geodesic distance fields by fast marching, and the vector fields they induce.

The per-face gradient of the distance steers parallel transport: frames are
aligned with it, so its singularities (sources, cut locus) are where transported
kernels become unreliable.  Several fields with different sources can be combined
so that each filter uses a field that is regular where it matters.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse

from . import _march
from .mesh import TriangleMesh

__all__ = [
    "GeodesicField",
    "VectorFieldSet",
    "UnreachableError",
    "fast_marching",
    "detect_singularities",
    "build_field_set",
    "local_distances",
    "vertex_face_csr",
    "transport_across_edges",
    "DEFAULT_ANGLE_THRESHOLD",
]

DEFAULT_ANGLE_THRESHOLD = np.pi / 6
# raw interpolant gradients shorter than this are treated as vanishing
NEAR_ZERO_GRADIENT = 1e-3
# relative slack so vertices exactly on a disc boundary stay inside
RADIUS_SLACK = 1e-9


class UnreachableError(RuntimeError):
    """Fast marching could not reach part of the mesh (disconnected component)."""

    def __init__(self, unreached):
        self.unreached = np.asarray(unreached)
        head = self.unreached[:10].tolist()
        more = "" if len(self.unreached) <= 10 else f" ... ({len(self.unreached)} total)"
        super().__init__(f"infinite distance at vertices {head}{more}")


@dataclass(frozen=True, eq=False)
class GeodesicField:
    mesh: TriangleMesh
    sources: np.ndarray
    distance: np.ndarray
    face_gradient: np.ndarray
    singular_faces: np.ndarray
    accept_order: np.ndarray = field(repr=False)
    raw_gradient: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class VectorFieldSet:
    """Fields plus the field index used by each filter."""

    fields: list[GeodesicField]
    assignment: np.ndarray

    @property
    def n_filters(self) -> int:
        return len(self.assignment)

    def filters_of(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)


def vertex_face_csr(mesh: TriangleMesh) -> tuple[np.ndarray, np.ndarray]:
    inc = mesh.vertex_face_incidence
    return inc.indptr.astype(np.int64), inc.indices.astype(np.int64)


UPDATES = {"planar": _march.PLANAR, "point": _march.POINT}


def _update_code(update: str) -> int:
    try:
        return UPDATES[update]
    except KeyError:
        raise ValueError(f"update must be one of {sorted(UPDATES)}, got {update!r}") from None


def _run(mesh, sources, max_dist=np.inf, update="point"):
    ptr, idx = vertex_face_csr(mesh)
    dist = np.full(mesh.n_vertices, np.inf)
    state = np.zeros(mesh.n_vertices, dtype=np.int8)
    order, _ = _march.march(
        mesh.vertices,
        mesh.faces,
        ptr,
        idx,
        np.asarray(sources, dtype=np.int64),
        float(max_dist),
        dist,
        state,
        np.zeros(mesh.n_vertices, dtype=np.int64),
        _update_code(update),
    )
    return dist, order


def _interpolant_gradient(mesh: TriangleMesh, values: np.ndarray) -> np.ndarray:
    p = mesh.vertices[mesh.faces]
    n = mesh.face_normals
    two_area = 2.0 * mesh.face_areas[:, None]
    g = np.zeros((mesh.n_faces, 3))
    for k in range(3):
        opposite = p[:, (k + 2) % 3] - p[:, (k + 1) % 3]
        g += values[mesh.faces[:, k], None] * np.cross(n, opposite) / two_area
    return g


def _face_adjacency(mesh: TriangleMesh) -> sparse.csr_matrix:
    pairs = mesh.interior_edge_faces
    m = mesh.n_faces
    data = np.ones(2 * len(pairs))
    return sparse.csr_matrix(
        (data, (np.r_[pairs[:, 0], pairs[:, 1]], np.r_[pairs[:, 1], pairs[:, 0]])), shape=(m, m)
    )


def _fill_singular(mesh: TriangleMesh, grad: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Area-weighted neighbour averaging, repeated until nothing more can be filled."""
    grad = grad.copy()
    grad[~known] = 0.0
    adj = _face_adjacency(mesh)
    normals = mesh.face_normals
    area = mesh.face_areas
    known = known.copy()
    while not known.all():
        acc = adj @ (grad * (area * known)[:, None])
        acc -= np.einsum("ij,ij->i", acc, normals)[:, None] * normals
        norm = np.linalg.norm(acc, axis=1)
        newly = ~known & (norm > 1e-12)
        if not newly.any():
            break
        grad[newly] = acc[newly] / norm[newly, None]
        known |= newly
    return grad


def fast_marching(mesh: TriangleMesh, sources, update: str = "point") -> GeodesicField:
    """Geodesic distance from a set of source vertices (unit-speed Eikonal).

    Faces containing a source, or whose interpolated gradient nearly vanishes,
    are flagged singular; their direction is filled in from the neighbours.
    ``update`` selects the two-point triangle update, ``"point"`` (virtual point
    source, default) or ``"planar"`` (plane-wave fit).
    """
    sources = np.unique(np.atleast_1d(np.asarray(sources, dtype=np.int64)))
    if sources.size == 0:
        raise ValueError("at least one source vertex is required")
    if sources.min() < 0 or sources.max() >= mesh.n_vertices:
        raise IndexError(f"source index out of range [0, {mesh.n_vertices})")
    dist, order = _run(mesh, sources, update=update)
    unreached = np.flatnonzero(~np.isfinite(dist))
    if unreached.size:
        raise UnreachableError(unreached)

    raw = _interpolant_gradient(mesh, dist)
    raw_norm = np.linalg.norm(raw, axis=1)
    is_source = np.zeros(mesh.n_vertices, dtype=bool)
    is_source[sources] = True
    singular = is_source[mesh.faces].any(axis=1) | (raw_norm < NEAR_ZERO_GRADIENT)
    unit = np.zeros_like(raw)
    ok = ~singular
    unit[ok] = raw[ok] / raw_norm[ok, None]
    grad = _fill_singular(mesh, unit, ok)

    return GeodesicField(
        mesh=mesh,
        sources=sources,
        distance=dist,
        face_gradient=grad,
        singular_faces=np.flatnonzero(singular),
        accept_order=order,
        raw_gradient=raw,
    )


def transport_across_edges(mesh: TriangleMesh, vectors: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Rotate tangent vectors of face ``t`` into face ``s`` about their shared edge.

    ``pairs`` holds (s, t) rows of edge-adjacent faces; the result is the
    unfolding of ``vectors[t]`` into the plane of ``s``.
    """
    s, t = pairs[:, 0], pairs[:, 1]
    fs, ft = mesh.faces[s], mesh.faces[t]
    in_t = (fs[:, :, None] == ft[:, None, :]).any(axis=2)
    shared = fs[in_t].reshape(-1, 2)
    e = mesh.vertices[shared[:, 1]] - mesh.vertices[shared[:, 0]]
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    ns, nt = mesh.face_normals[s], mesh.face_normals[t]
    v = vectors[t]
    along = np.einsum("ij,ij->i", v, e)
    across = np.einsum("ij,ij->i", v, np.cross(e, nt))
    return along[:, None] * e + across[:, None] * np.cross(e, ns)


def detect_singularities(field: GeodesicField, angle_threshold: float = DEFAULT_ANGLE_THRESHOLD) -> np.ndarray:
    """Faces whose direction jumps by more than ``angle_threshold`` across an edge.

    Source faces are always included.  The neighbour's direction is compared after
    unfolding it into the face's plane.
    """
    mesh = field.mesh
    pairs = mesh.interior_edge_faces
    g = field.face_gradient
    moved = transport_across_edges(mesh, g, pairs)
    cos = np.einsum("ij,ij->i", g[pairs[:, 0]], moved)
    norms = np.linalg.norm(g[pairs[:, 0]], axis=1) * np.linalg.norm(moved, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        angle = np.arccos(np.clip(cos / norms, -1.0, 1.0))
    jump = (angle > angle_threshold) | (norms == 0)
    flagged = np.zeros(mesh.n_faces, dtype=bool)
    flagged[pairs[jump, 0]] = True
    flagged[pairs[jump, 1]] = True
    is_source = np.zeros(mesh.n_vertices, dtype=bool)
    is_source[field.sources] = True
    flagged |= is_source[mesh.faces].any(axis=1)
    return np.flatnonzero(flagged)


def build_field_set(
    mesh: TriangleMesh,
    source_list: Sequence,
    filters: int,
    assignment: str | Sequence[int] = "round-robin",
) -> VectorFieldSet:
    """One field per source set; filters partitioned across fields.

    ``assignment`` is ``"round-robin"`` (filter f uses field f mod k) or an
    explicit per-filter list of field indices.
    """
    if len(source_list) == 0:
        raise ValueError("at least one source set is required")
    if filters < 1:
        raise ValueError("filters must be positive")
    k = len(source_list)
    if isinstance(assignment, str):
        if assignment != "round-robin":
            raise ValueError(f"unknown assignment {assignment!r}")
        assign = np.arange(filters) % k
    else:
        assign = np.asarray(assignment, dtype=np.int64)
        if assign.shape != (filters,):
            raise ValueError(f"explicit assignment needs {filters} entries, got {assign.shape}")
        missing = assign[(assign < 0) | (assign >= k)]
        if missing.size:
            raise IndexError(f"assignment references missing field {int(missing[0])} (have {k})")
    fields = [fast_marching(mesh, s) for s in source_list]
    return VectorFieldSet(fields=fields, assignment=assign)


def local_distances(mesh: TriangleMesh, radius: float, update: str = "point") -> sparse.csr_matrix:
    """Truncated fast marching from every vertex, kept where D <= radius.

    A relative slack of 1e-9 keeps vertices sitting exactly on the circle.

    Row x holds D_x(y) for the disc around x; the diagonal is stored explicitly
    (as an explicit zero in the structure).
    """
    ptr, idx = vertex_face_csr(mesh)
    rows, cols, vals = _march.local_balls(
        mesh.vertices, mesh.faces, ptr, idx, float(radius) * (1 + RADIUS_SLACK), _update_code(update)
    )
    n = mesh.n_vertices
    m = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    m.sort_indices()
    return m
