"""A domain bundles everything mesh-specific a PTC layer needs.

Template weights never live here, so moving a trained network to another surface
only means building a new domain.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geodesic import build_field_set, local_distances
from ..kernel import KernelBasis, build_basis, default_radius
from ..mesh import MassMatrix, TriangleMesh, mass_matrix
from ..transport import build_frames

__all__ = ["Domain", "build_domain", "resolve_sources"]


@dataclass(eq=False)
class Domain:
    mesh: TriangleMesh
    mass: MassMatrix
    bases: list[KernelBasis]
    name: str = ""
    fields: list = field(default_factory=list, repr=False)

    @property
    def n_vertices(self) -> int:
        return self.mesh.n_vertices


def resolve_sources(mesh: TriangleMesh, spec) -> np.ndarray:
    """Source spec -> vertex ids.

    Accepts an int, a list of ints, ``{"uv": [[u, v], ...]}`` (nearest vertices
    in parameter space) or one of ``"corner"`` (u, v) = (0, 0), ``"center"``,
    ``"left_edge"`` (every vertex with u = 0).
    """
    if isinstance(spec, str):
        if spec == "corner":
            return np.array([mesh.nearest_vertex_uv(0.0, 0.0)])
        if spec == "center":
            return np.array([mesh.nearest_vertex_uv(0.5, 0.5)])
        if spec == "left_edge":
            return np.flatnonzero(np.isclose(mesh.uv[:, 0], 0.0))
        raise ValueError(f"unknown source keyword {spec!r}")
    if isinstance(spec, dict):
        return np.array([mesh.nearest_vertex_uv(u, v) for u, v in spec["uv"]])
    return np.atleast_1d(np.asarray(spec, dtype=np.int64))


def build_domain(
    mesh: TriangleMesh,
    sources=("corner",),
    radius: float | None = None,
    n_r: int = 3,
    n_theta: int = 8,
    name: str = "",
) -> Domain:
    """Geodesic fields, frames and kernel bases (one per source set) on ``mesh``."""
    radius = default_radius(mesh) if radius is None else radius
    source_sets = [resolve_sources(mesh, s) for s in sources]
    fset = build_field_set(mesh, source_sets, filters=len(source_sets))
    local = local_distances(mesh, radius)
    bases = []
    for fld in fset.fields:
        frames = build_frames(mesh, fld)
        bases.append(build_basis(mesh, frames, fld, radius=radius, n_r=n_r, n_theta=n_theta, local=local))
    return Domain(mesh=mesh, mass=mass_matrix(mesh), bases=bases, name=name, fields=fset.fields)
