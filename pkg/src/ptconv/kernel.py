"""Polar-grid kernel templates and their transported sparse kernel matrices.

A template lives on a polar grid in the anchor's tangent plane: radial nodes at
bin centres (i + 1/2) * delta / n_r, angular nodes at 2*pi*j / n_theta.  A point
(r, phi) of the disc spreads unit mass bilinearly over the (at most) four
surrounding nodes (clamped in r, periodic in phi), so any kernel built from the
template is linear in its weights and dK/dw_b is the fixed basis matrix B_b.

Matrix orientation: ``stencil[x, y]`` is the kernel transported to x evaluated
at y.  The kernel matrix K of the PTC formula K^T M F is its transpose (column
x holds the kernel at x).
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import io as spio
from scipy import sparse

from .geodesic import RADIUS_SLACK, GeodesicField, local_distances
from .mesh import TriangleMesh, mass_matrix
from .transport import FrameField, log_map_pairs

__all__ = [
    "KernelTemplate",
    "KernelBasis",
    "KernelMatrix",
    "EmptyNeighborhoodError",
    "CoverageWarning",
    "polar_weights",
    "build_basis",
    "assemble",
    "edge_detector_template",
    "gaussian_template",
    "save_template",
    "load_template",
    "export_matrix_market",
    "default_radius",
]


class EmptyNeighborhoodError(ValueError):
    def __init__(self, vertices):
        self.vertices = np.asarray(vertices)
        super().__init__(
            f"{len(self.vertices)} vertices have no neighbour within the kernel radius: "
            f"{self.vertices[:10].tolist()}"
        )


class CoverageWarning(UserWarning):
    pass


def default_radius(mesh: TriangleMesh) -> float:
    """Three mean edge lengths."""
    return 3.0 * mesh.mean_edge_length


@dataclass
class KernelTemplate:
    anchor: int
    radius: float
    n_r: int
    n_theta: int
    weights: np.ndarray = None

    def __post_init__(self):
        if self.n_r < 1 or self.n_theta < 1:
            raise ValueError("n_r and n_theta must be >= 1")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.weights is None:
            self.weights = np.zeros((self.n_r, self.n_theta))
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(self.n_r, self.n_theta)
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("template weights must be finite")

    @property
    def n_bins(self) -> int:
        return self.n_r * self.n_theta

    @property
    def radial_nodes(self) -> np.ndarray:
        return (np.arange(self.n_r) + 0.5) * self.radius / self.n_r

    @property
    def angular_nodes(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n_theta) / self.n_theta

    def bin_areas(self) -> np.ndarray:
        """(n_r, n_theta) area of each annular sector."""
        edges = np.arange(self.n_r + 1) * self.radius / self.n_r
        ring = np.pi * (edges[1:] ** 2 - edges[:-1] ** 2) / self.n_theta
        return np.repeat(ring[:, None], self.n_theta, axis=1)

    def evaluate(self, r, phi) -> np.ndarray:
        """Template value at polar coordinates (zero outside the disc)."""
        r = np.atleast_1d(np.asarray(r, dtype=np.float64))
        phi = np.broadcast_to(np.asarray(phi, dtype=np.float64), r.shape)
        rows, bins, w = polar_weights(r, phi, self.radius, self.n_r, self.n_theta)
        out = np.zeros(len(r))
        np.add.at(out, rows, w * self.weights.ravel()[bins])
        return out

    def to_dict(self) -> dict:
        return {
            "anchor": int(self.anchor),
            "radius": float(self.radius),
            "n_r": int(self.n_r),
            "n_theta": int(self.n_theta),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelTemplate":
        return cls(d["anchor"], d["radius"], d["n_r"], d["n_theta"], np.array(d["weights"]))


def save_template(template: KernelTemplate, path) -> None:
    Path(path).write_text(json.dumps(template.to_dict(), indent=2))


def load_template(path) -> KernelTemplate:
    return KernelTemplate.from_dict(json.loads(Path(path).read_text()))


def polar_weights(r, phi, radius, n_r, n_theta, tol=RADIUS_SLACK):
    """Bilinear polar-grid weights.

    Returns COO triplets (point index, bin index, weight) with bin index
    i * n_theta + j.  Points beyond ``radius`` get no entries; r == 0 spreads
    evenly over the innermost ring.
    """
    r = np.asarray(r, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    inside = r <= radius * (1 + tol)
    idx = np.flatnonzero(inside)
    r, phi = r[idx], phi[idx]

    t = r * n_r / radius - 0.5
    i0 = np.clip(np.floor(t), 0, n_r - 1).astype(np.int64)
    fr = np.clip(t - i0, 0.0, 1.0)
    i1 = np.minimum(i0 + 1, n_r - 1)

    s = np.mod(phi, 2 * np.pi) * n_theta / (2 * np.pi)
    j0 = np.floor(s).astype(np.int64) % n_theta
    fa = s - np.floor(s)
    j1 = (j0 + 1) % n_theta

    rows = np.repeat(idx, 4)
    bins = np.stack([i0 * n_theta + j0, i0 * n_theta + j1, i1 * n_theta + j0, i1 * n_theta + j1], 1).ravel()
    w = np.stack([(1 - fr) * (1 - fa), (1 - fr) * fa, fr * (1 - fa), fr * fa], 1).ravel()

    centre = np.flatnonzero(r == 0.0)
    if centre.size:
        keep = np.ones(len(rows), dtype=bool)
        keep[(centre[:, None] * 4 + np.arange(4)).ravel()] = False
        rows, bins, w = rows[keep], bins[keep], w[keep]
        rows = np.r_[rows, np.repeat(idx[centre], n_theta)]
        bins = np.r_[bins, np.tile(np.arange(n_theta), len(centre))]
        w = np.r_[w, np.full(len(centre) * n_theta, 1.0 / n_theta)]
    nz = w != 0.0
    return rows[nz], bins[nz], w[nz]


@dataclass(eq=False)
class KernelBasis:
    """Per-neighbour polar coordinates in the transported frame, plus interpolation.

    ``indptr``/``indices`` give the neighbourhood I_x of each vertex (CSR, row x);
    ``r``/``phi`` hold the pulled-back polar coordinates of each stored pair.
    """

    mesh: TriangleMesh
    anchor: int
    radius: float
    n_r: int
    n_theta: int
    coverage: float
    indptr: np.ndarray
    indices: np.ndarray
    r: np.ndarray
    phi: np.ndarray
    fallback: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_vertices(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_bins(self) -> int:
        return self.n_r * self.n_theta

    @property
    def nnz(self) -> int:
        return len(self.indices)

    @property
    def rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_vertices), np.diff(self.indptr))

    def neighborhood(self, x: int) -> np.ndarray:
        return self.indices[self.indptr[x]:self.indptr[x + 1]]

    def _key(self, scale, angle):
        return (float(scale), float(np.mod(angle, 2 * np.pi)))

    def interpolation(self, scale: float = 1.0, angle: float = 0.0) -> sparse.csr_matrix:
        """W with W[l, b] = weight of bin b for stored pair l under (scale, angle)."""
        if scale == 0:
            raise ValueError("scale must be nonzero")
        key = self._key(scale, angle)
        if key not in self._cache:
            reach = self.radius / abs(scale)
            if reach > self.coverage * (1 + 1e-12):
                clipped = 1.0 - (self.coverage / reach) ** 2
                warnings.warn(
                    f"scaled kernel reaches {reach:.4g} beyond basis coverage {self.coverage:.4g}; "
                    f"{clipped:.1%} of its disc is truncated",
                    CoverageWarning,
                    stacklevel=3,
                )
            phi = self.phi + angle + (np.pi if scale < 0 else 0.0)
            rows, bins, w = polar_weights(abs(scale) * self.r, phi, self.radius, self.n_r, self.n_theta)
            W = sparse.csr_matrix((w, (rows, bins)), shape=(self.nnz, self.n_bins))
            W.sum_duplicates()
            self._cache[key] = W
        return self._cache[key]

    def bin_matrix(self, b: int, scale: float = 1.0, angle: float = 0.0) -> sparse.csr_matrix:
        """B_b as an n x n stencil (row x = destination vertex)."""
        col = self.interpolation(scale, angle)[:, b].toarray().ravel()
        return sparse.csr_matrix((col, self.indices, self.indptr), shape=(self.n_vertices,) * 2)

    def stacked(self, scale: float = 1.0, angle: float = 0.0) -> sparse.csr_matrix:
        """All B_b stacked vertically: (n_bins * n) x n, block b holds B_b."""
        key = ("stack",) + self._key(scale, angle)
        if key not in self._cache:
            W = self.interpolation(scale, angle).tocoo()
            n = self.n_vertices
            rows = self.rows[W.row]
            cols = self.indices[W.row]
            S = sparse.csr_matrix((W.data, (W.col * n + rows, cols)), shape=(self.n_bins * n, n))
            self._cache[key] = S
        return self._cache[key]


def build_basis(
    mesh: TriangleMesh,
    frames: FrameField,
    field: GeodesicField | None = None,
    anchor: int | None = None,
    radius: float | None = None,
    n_r: int = 3,
    n_theta: int = 8,
    coverage: float | None = None,
    local: sparse.csr_matrix | None = None,
) -> KernelBasis:
    """Transport the polar grid to every vertex.

    For each x and each y with d(x, y) <= coverage, the log map at x gives
    tangent coordinates in x's field-aligned frame; transport back to the anchor
    keeps them unchanged.  ``local`` may carry precomputed disc distances
    (they do not depend on the field, only on mesh and radius).
    """
    radius = default_radius(mesh) if radius is None else float(radius)
    coverage = radius if coverage is None else float(coverage)
    if anchor is None:
        anchor = int(field.sources[0]) if field is not None else 0
    if local is None:
        local = local_distances(mesh, coverage)
    else:
        local = local.tocsr().copy()
        keep = local.data <= coverage * (1 + RADIUS_SLACK)
        if not keep.all():
            coo = local.tocoo()
            local = sparse.csr_matrix(
                (coo.data[keep], (coo.row[keep], coo.col[keep])), shape=local.shape
            )
        local.sort_indices()
    counts = np.diff(local.indptr)
    lonely = np.flatnonzero(counts <= 1)
    if lonely.size:
        raise EmptyNeighborhoodError(lonely)
    a1, a2, fallback = log_map_pairs(mesh, frames, local)
    return KernelBasis(
        mesh=mesh,
        anchor=int(anchor),
        radius=radius,
        n_r=int(n_r),
        n_theta=int(n_theta),
        coverage=coverage,
        indptr=local.indptr.copy(),
        indices=local.indices.copy(),
        r=np.hypot(a1, a2),
        phi=np.arctan2(a2, a1),
        fallback=fallback,
    )


@dataclass(eq=False)
class KernelMatrix:
    stencil: sparse.csr_matrix
    scale: float
    angle: float
    normalization: np.ndarray | None = None

    @property
    def matrix(self) -> sparse.csr_matrix:
        """K with the kernel at vertex i in column i."""
        return self.stencil.T.tocsr()


def assemble(
    basis: KernelBasis,
    template: KernelTemplate,
    scale: float = 1.0,
    angle: float = 0.0,
    normalize: bool = False,
) -> KernelMatrix:
    """K = sum_b w_b B_b under dilation/reflection ``scale`` and rotation ``angle``.

    The transform acts on lookup coordinates, (r, phi) -> (|s| r, phi + angle),
    plus a half turn when s < 0.  With ``normalize`` every transported kernel is
    divided by C_x so that sum_y |k(x, y)| M[y] matches the anchor's value.
    """
    if (template.n_r, template.n_theta) != (basis.n_r, basis.n_theta):
        raise ValueError("template grid does not match basis grid")
    if scale == 0:
        raise ValueError("scale must be nonzero")
    W = basis.interpolation(scale, angle)
    values = W @ template.weights.ravel()
    n = basis.n_vertices
    stencil = sparse.csr_matrix((values, basis.indices.copy(), basis.indptr.copy()), shape=(n, n))
    C = None
    if normalize:
        M = mass_matrix(basis.mesh).weights
        l1 = abs(stencil) @ M
        ref = l1[basis.anchor]
        C = np.divide(l1, ref, out=np.ones(n), where=(l1 > 0) & (ref > 0))
        stencil = sparse.csr_matrix((values / C[basis.rows], basis.indices.copy(), basis.indptr.copy()), shape=(n, n))
    return KernelMatrix(stencil=stencil, scale=float(scale), angle=float(angle), normalization=C)


def edge_detector_template(
    orientation: float, radius: float, n_r: int = 3, n_theta: int = 8, anchor: int = 0
) -> KernelTemplate:
    """Odd-symmetric step filter: positive half-disc facing ``orientation``.

    Bins whose angular node lies strictly within 90 degrees of ``orientation``
    get c / A+, those strictly beyond get -c / A-, with A+/A- the summed bin
    areas of each side and c their mean; bins exactly at 90 degrees stay zero.
    """
    if n_theta < 8:
        raise ValueError("edge detector needs n_theta >= 8")
    t = KernelTemplate(anchor, radius, n_r, n_theta)
    delta = np.angle(np.exp(1j * (t.angular_nodes - orientation)))
    eps = 1e-9
    pos = np.abs(delta) < np.pi / 2 - eps
    neg = np.abs(delta) > np.pi / 2 + eps
    area = t.bin_areas()
    a_pos = area[:, pos].sum()
    a_neg = area[:, neg].sum()
    c = 0.5 * (a_pos + a_neg)
    w = np.zeros((n_r, n_theta))
    w[:, pos] = c / a_pos
    w[:, neg] = -c / a_neg
    t.weights = w
    return t


def gaussian_template(
    radius: float, n_r: int = 3, n_theta: int = 8, sigma: float | None = None, anchor: int = 0,
    stretch: float = 1.0,
) -> KernelTemplate:
    """Gaussian sampled at the grid nodes; ``stretch`` > 1 elongates it along b1."""
    sigma = radius / 2 if sigma is None else sigma
    t = KernelTemplate(anchor, radius, n_r, n_theta)
    rr, pp = np.meshgrid(t.radial_nodes, t.angular_nodes, indexing="ij")
    x, y = rr * np.cos(pp) / stretch, rr * np.sin(pp)
    t.weights = np.exp(-(x**2 + y**2) / (2 * sigma**2))
    return t


def export_matrix_market(kmat: KernelMatrix, path) -> None:
    spio.mmwrite(str(path), kmat.matrix, comment="PTC kernel matrix; column i = kernel at vertex i")
