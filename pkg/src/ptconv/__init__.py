"""Parallel transport convolution on triangle meshes."""
from .conv import FilterBank, ptc_apply, ptc_backward, ptc_forward_batched, ptc_forward_reference
from .geodesic import GeodesicField, build_field_set, detect_singularities, fast_marching, local_distances
from .kernel import KernelBasis, KernelTemplate, assemble, build_basis, edge_detector_template, gaussian_template
from .mesh import MassMatrix, SurfaceSpec, TriangleMesh, generate_surface, icosphere, mass_matrix
from .transport import FrameField, build_frames, log_map, transitions, transport_vector

__version__ = "0.1.0"

__all__ = [
    "FilterBank",
    "FrameField",
    "GeodesicField",
    "KernelBasis",
    "KernelTemplate",
    "MassMatrix",
    "SurfaceSpec",
    "TriangleMesh",
    "assemble",
    "build_basis",
    "build_field_set",
    "build_frames",
    "detect_singularities",
    "edge_detector_template",
    "fast_marching",
    "gaussian_template",
    "generate_surface",
    "icosphere",
    "local_distances",
    "log_map",
    "mass_matrix",
    "ptc_apply",
    "ptc_backward",
    "ptc_forward_batched",
    "ptc_forward_reference",
    "transitions",
    "transport_vector",
]
