"""Triangle meshes, lumped mass matrices and synthetic surfaces.

A :class:`TriangleMesh` is validated on construction (index range, degenerate
faces, edge-manifoldness, consistent orientation) and treated as immutable
afterwards; derived quantities are computed lazily and cached.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import sparse

__all__ = [
    "MeshError",
    "ParseError",
    "IndexRangeError",
    "DegenerateFaceError",
    "NonManifoldError",
    "OrientationError",
    "ResolutionError",
    "TriangleMesh",
    "MassMatrix",
    "SurfaceSpec",
    "mass_matrix",
    "generate_surface",
    "icosphere",
    "icosahedron",
    "HEIGHT_FUNCTIONS",
]

DEGENERATE_AREA_RTOL = 1e-12


class MeshError(ValueError):
    """Base class for invalid mesh input. ``code`` identifies the failure."""

    code = "mesh"


class ParseError(MeshError):
    code = "parse"


class IndexRangeError(MeshError):
    code = "index_range"


class DegenerateFaceError(MeshError):
    code = "degenerate_face"


class NonManifoldError(MeshError):
    code = "non_manifold_edge"


class OrientationError(MeshError):
    code = "inconsistent_orientation"


class ResolutionError(MeshError):
    code = "resolution"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class TriangleMesh:
    """Validated, immutable triangle mesh.

    Parameters
    ----------
    vertices : (n, 3) array_like
        Vertex positions.
    faces : (m, 3) array_like of int
        Counter-clockwise vertex triples.
    uv : (n, 2) array_like, optional
        Parameter coordinates per vertex (set by :func:`generate_surface`),
        used to sample images onto the surface.
    grid_shape : (n_v, n_u), optional
        Row/column counts when the mesh comes from a regular parameter grid.
    """

    def __init__(self, vertices, faces, uv=None, grid_shape=None):
        v = np.array(vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ParseError(f"vertices must have shape (n, 3), got {v.shape}")
        f = np.array(faces)
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ParseError(f"faces must have shape (m, 3), got {f.shape}")
        if not np.issubdtype(f.dtype, np.integer):
            if not np.all(np.equal(np.mod(f, 1), 0)):
                raise ParseError("face indices must be integers")
        f = f.astype(np.int64)
        if not np.all(np.isfinite(v)):
            raise ParseError("vertex coordinates must be finite")
        n = len(v)
        bad = np.flatnonzero((f < 0).any(axis=1) | (f >= n).any(axis=1))
        if bad.size:
            raise IndexRangeError(
                f"face {bad[0]} references vertex outside [0, {n}): {f[bad[0]].tolist()}"
            )
        self.vertices = _frozen(v)
        self.faces = _frozen(f)
        self.uv = None if uv is None else _frozen(np.array(uv, dtype=np.float64))
        if self.uv is not None and self.uv.shape != (n, 2):
            raise ParseError(f"uv must have shape ({n}, 2)")
        self.grid_shape = None if grid_shape is None else tuple(int(s) for s in grid_shape)
        self._validate()

    def __repr__(self):
        return (
            f"TriangleMesh(n_vertices={self.n_vertices}, n_faces={self.n_faces}, "
            f"boundary_edges={len(self.boundary_edges)})"
        )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    # ------------------------------------------------------------------
    # validation and connectivity
    def _validate(self):
        f = self.faces
        if len(f) == 0:
            raise ParseError("mesh has no faces")
        repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 2] == f[:, 0])
        area = self.face_areas
        tiny = area <= DEGENERATE_AREA_RTOL * area.mean()
        bad = np.flatnonzero(repeated | tiny)
        if bad.size:
            raise DegenerateFaceError(f"face {bad[0]} is degenerate (area {area[bad[0]]:.3e})")

        counts = np.bincount(self._edge_inverse, minlength=len(self.edges))
        if counts.max() > 2:
            e = int(np.argmax(counts))
            raise NonManifoldError(
                f"edge {self.edges[e].tolist()} bounds {counts[e]} faces"
            )
        # a directed half-edge used twice means two neighbours disagree on orientation
        he = self._half_edges
        directed = he[:, 0] * self.n_vertices + he[:, 1]
        uniq, cnt = np.unique(directed, return_counts=True)
        if (cnt > 1).any():
            key = uniq[np.argmax(cnt > 1)]
            a, b = divmod(int(key), self.n_vertices)
            raise OrientationError(f"edge ({a}, {b}) traversed in the same direction by two faces")

    @cached_property
    def _half_edges(self) -> np.ndarray:
        return self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)

    @cached_property
    def _edge_data(self):
        he = self._half_edges
        lo = he.min(axis=1)
        hi = he.max(axis=1)
        keys = lo * self.n_vertices + hi
        uniq, inverse = np.unique(keys, return_inverse=True)
        edges = np.stack(np.divmod(uniq, self.n_vertices), axis=1)
        return edges, inverse

    @property
    def edges(self) -> np.ndarray:
        """(E, 2) undirected edges, sorted vertex pairs."""
        return self._edge_data[0]

    @property
    def _edge_inverse(self) -> np.ndarray:
        return self._edge_data[1]

    @cached_property
    def edge_faces(self) -> np.ndarray:
        """(E, 2) incident faces per edge; the second entry is -1 on the boundary."""
        ef = np.full((len(self.edges), 2), -1, dtype=np.int64)
        face_of_he = np.repeat(np.arange(self.n_faces), 3)
        order = np.argsort(self._edge_inverse, kind="stable")
        inv = self._edge_inverse[order]
        first = np.ones(len(inv), dtype=bool)
        first[1:] = inv[1:] != inv[:-1]
        ef[inv[first], 0] = face_of_he[order[first]]
        ef[inv[~first], 1] = face_of_he[order[~first]]
        return _frozen(ef)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return _frozen(self.edges[self.edge_faces[:, 1] < 0])

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return _frozen(np.unique(self.boundary_edges))

    @cached_property
    def interior_edge_faces(self) -> np.ndarray:
        """(k, 2) pairs (s, t) of faces sharing an interior edge."""
        ef = self.edge_faces
        return _frozen(ef[ef[:, 1] >= 0])

    @cached_property
    def face_neighbors(self) -> list[np.ndarray]:
        """Edge-adjacent faces of each face."""
        pairs = self.interior_edge_faces
        adj = sparse.coo_matrix(
            (np.ones(2 * len(pairs)), (np.r_[pairs[:, 0], pairs[:, 1]], np.r_[pairs[:, 1], pairs[:, 0]])),
            shape=(self.n_faces, self.n_faces),
        ).tocsr()
        return [adj.indices[adj.indptr[i]:adj.indptr[i + 1]] for i in range(self.n_faces)]

    @cached_property
    def vertex_face_incidence(self) -> sparse.csr_matrix:
        """(n, m) incidence matrix, 1 where the vertex is a corner of the face."""
        m = self.n_faces
        rows = self.faces.ravel()
        cols = np.repeat(np.arange(m), 3)
        return sparse.csr_matrix((np.ones(3 * m), (rows, cols)), shape=(self.n_vertices, m))

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric vertex adjacency weighted by edge length."""
        e = self.edges
        w = self.edge_lengths
        n = self.n_vertices
        a = sparse.coo_matrix((np.r_[w, w], (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))
        return a.tocsr()

    # ------------------------------------------------------------------
    # geometry
    @cached_property
    def _face_cross(self) -> np.ndarray:
        p = self.vertices[self.faces]
        return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    @cached_property
    def face_areas(self) -> np.ndarray:
        return _frozen(0.5 * np.linalg.norm(self._face_cross, axis=1))

    @cached_property
    def face_normals(self) -> np.ndarray:
        c = self._face_cross
        return _frozen(c / np.linalg.norm(c, axis=1, keepdims=True))

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return _frozen(np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1))

    @property
    def mean_edge_length(self) -> float:
        return float(self.edge_lengths.mean())

    @property
    def surface_area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def corner_angles(self) -> np.ndarray:
        """(m, 3) interior angle at each face corner."""
        p = self.vertices[self.faces]
        out = np.empty((self.n_faces, 3))
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            out[:, k] = np.arccos(np.clip(cos, -1.0, 1.0))
        return _frozen(out)

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        """Angle-weighted average of incident face normals."""
        acc = np.zeros((self.n_vertices, 3))
        for k in range(3):
            np.add.at(acc, self.faces[:, k], self.corner_angles[:, k, None] * self.face_normals)
        return _frozen(acc / np.linalg.norm(acc, axis=1, keepdims=True))

    @cached_property
    def angle_defects(self) -> np.ndarray:
        """Discrete Gaussian curvature 2*pi - sum of corner angles (pi on the boundary)."""
        total = np.bincount(self.faces.ravel(), weights=self.corner_angles.ravel(), minlength=self.n_vertices)
        full = np.full(self.n_vertices, 2 * np.pi)
        full[self.boundary_vertices] = np.pi
        return _frozen(full - total)

    def nearest_vertex_uv(self, u: float, v: float) -> int:
        """Vertex whose parameter coordinates are closest to (u, v)."""
        if self.uv is None:
            raise ValueError("mesh carries no parameter coordinates")
        d = np.sum((self.uv - np.array([u, v])) ** 2, axis=1)
        return int(np.argmin(d))


@dataclass(frozen=True)
class MassMatrix:
    """Lumped (diagonal) mass matrix: one third of incident face areas per vertex."""

    weights: np.ndarray

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def as_sparse(self) -> sparse.dia_matrix:
        return sparse.diags(self.weights)

    def __len__(self):
        return len(self.weights)


def mass_matrix(mesh: TriangleMesh) -> MassMatrix:
    w = np.bincount(
        mesh.faces.ravel(),
        weights=np.repeat(mesh.face_areas / 3.0, 3),
        minlength=mesh.n_vertices,
    )
    return MassMatrix(_frozen(w))


# ----------------------------------------------------------------------
# parametric surfaces over the unit square


def _flat(u, v):
    return np.zeros_like(u)


def _gaussian_bump(u, v, height=0.3, center=(0.5, 0.5), sigma=0.25):
    cu, cv = center
    return height * np.exp(-((u - cu) ** 2 + (v - cv) ** 2) / sigma**2)


def _bumps(u, v, bumps=()):
    z = np.zeros_like(u)
    for b in bumps:
        z = z + _gaussian_bump(u, v, **b)
    return z


def _saddle(u, v, amplitude=0.3):
    return amplitude * ((u - 0.5) ** 2 - (v - 0.5) ** 2) * 4.0


def _wave(u, v, amplitude=0.1, freq_u=1.0, freq_v=1.0):
    return amplitude * np.sin(2 * np.pi * freq_u * u) * np.sin(2 * np.pi * freq_v * v)


HEIGHT_FUNCTIONS: dict[str, Callable] = {
    "flat": _flat,
    "gaussian_bump": _gaussian_bump,
    "bumps": _bumps,
    "saddle": _saddle,
    "wave": _wave,
}


@dataclass(frozen=True)
class SurfaceSpec:
    """Graph surface z = f(u, v) over [0, 1]^2 sampled on an n_u x n_v grid.

    ``extent`` scales the embedded surface (x, y, z) = extent * (u, v, f(u, v));
    with extent = n - 1 neighbouring grid vertices sit one length unit apart.
    The shipped height functions are stand-in bump families, not reconstructions
    of any particular published surface.
    """

    function: str = "flat"
    params: dict = field(default_factory=dict)
    resolution: tuple[int, int] = (28, 28)
    extent: float = 1.0

    @classmethod
    def from_dict(cls, d: dict) -> "SurfaceSpec":
        unknown = set(d) - {"function", "params", "resolution", "extent"}
        if unknown:
            raise ValueError(f"unknown surface spec keys: {sorted(unknown)}")
        res = d.get("resolution", (28, 28))
        if isinstance(res, int):
            res = (res, res)
        return cls(
            function=d.get("function", "flat"),
            params=dict(d.get("params", {})),
            resolution=(int(res[0]), int(res[1])),
            extent=float(d.get("extent", 1.0)),
        )

    @classmethod
    def from_json(cls, path) -> "SurfaceSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "function": self.function,
            "params": self.params,
            "resolution": list(self.resolution),
            "extent": self.extent,
        }


def generate_surface(spec: SurfaceSpec) -> TriangleMesh:
    """Triangulate a graph surface on a regular grid.

    Vertex (i, j) (column i along u, row j along v) gets index j * n_u + i.
    Each grid cell is split along its (i, j) -> (i+1, j+1) diagonal.
    """
    n_u, n_v = spec.resolution
    if n_u < 2 or n_v < 2:
        raise ResolutionError(f"resolution must be at least 2x2, got {n_u}x{n_v}")
    try:
        fn = HEIGHT_FUNCTIONS[spec.function]
    except KeyError:
        raise ValueError(
            f"unknown height function {spec.function!r}; choose from {sorted(HEIGHT_FUNCTIONS)}"
        ) from None
    u, v = np.meshgrid(np.linspace(0.0, 1.0, n_u), np.linspace(0.0, 1.0, n_v))
    u, v = u.ravel(), v.ravel()
    z = fn(u, v, **spec.params)
    verts = spec.extent * np.stack([u, v, z], axis=1)

    i, j = np.meshgrid(np.arange(n_u - 1), np.arange(n_v - 1))
    a = (j * n_u + i).ravel()
    b = a + 1
    c = a + n_u + 1
    d = a + n_u
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return TriangleMesh(verts, faces, uv=np.stack([u, v], 1), grid_shape=(n_v, n_u))


# ----------------------------------------------------------------------
# spheres


def icosahedron() -> tuple[np.ndarray, np.ndarray]:
    """Unit-circumradius icosahedron (12 vertices, 20 outward-oriented faces)."""
    t = (1.0 + 5**0.5) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleMesh:
    """Loop-style midpoint subdivision of the icosahedron projected to a sphere.

    Vertex counts are 10 * 4**k + 2 (subdivisions=5 gives 10242).
    """
    v, f = icosahedron()
    for _ in range(subdivisions):
        n = len(v)
        he = f[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        keys = he.min(1) * n + he.max(1)
        uniq, inv = np.unique(keys, return_inverse=True)
        a, b = np.divmod(uniq, n)
        mid = v[a] + v[b]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        v = np.concatenate([v, mid])
        m = (inv + n).reshape(-1, 3)  # midpoints of edges (0-1, 1-2, 2-0)
        f = np.concatenate(
            [
                np.stack([f[:, 0], m[:, 0], m[:, 2]], 1),
                np.stack([f[:, 1], m[:, 1], m[:, 0]], 1),
                np.stack([f[:, 2], m[:, 2], m[:, 1]], 1),
                m,
            ]
        )
    return TriangleMesh(radius * v, f)
