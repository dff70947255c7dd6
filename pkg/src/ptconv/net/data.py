"""MNIST IDX ingestion and mapping of images onto parameterised surfaces."""
from __future__ import annotations

import gzip
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..mesh import TriangleMesh

__all__ = [
    "IDXError",
    "load_idx",
    "load_mnist",
    "sample_image",
    "map_images_to_mesh",
    "Dataset",
    "stripe_image",
]

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IDXError(ValueError):
    pass


def _open(path: Path):
    if path.exists():
        return open(path, "rb")
    gz = path.with_name(path.name + ".gz")
    if gz.exists():
        return gzip.open(gz, "rb")
    raise FileNotFoundError(path)


def load_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Read an unsigned-byte IDX file (big-endian header).  ``.gz`` siblings are accepted."""
    with _open(Path(path)) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise IDXError(f"{path}: truncated header")
    magic = int.from_bytes(raw[:4], "big")
    if expected_magic is not None and magic != expected_magic:
        raise IDXError(f"{path}: magic {magic}, expected {expected_magic}")
    if raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08:
        raise IDXError(f"{path}: only unsigned-byte IDX data is supported")
    ndim = raw[3]
    dims = np.frombuffer(raw, dtype=">u4", count=ndim, offset=4).astype(np.int64)
    start = 4 + 4 * ndim
    count = int(np.prod(dims))
    if len(raw) - start < count:
        raise IDXError(f"{path}: expected {count} bytes of data, found {len(raw) - start}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=start).reshape(tuple(dims))


def load_mnist(directory, split: str = "train", limit: int | None = None):
    """(images in [0, 1] of shape (N, 28, 28), int64 labels)."""
    img_name, lbl_name = MNIST_FILES[split]
    d = Path(directory)
    images = load_idx(d / img_name, IMAGE_MAGIC)
    labels = load_idx(d / lbl_name, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IDXError("image and label counts differ")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


def sample_image(images: np.ndarray, u, v) -> np.ndarray:
    """Bilinear lookup at parameters (u, v) in [0, 1]^2.

    ``u`` runs along columns, ``v`` upward: (0, 1) is the top-left pixel centre.
    ``images`` is (H, W) or (N, H, W); the result is (len(u),) or (N, len(u)).
    """
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 2
    if single:
        images = images[None]
    _, H, W = images.shape
    col = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0) * (W - 1)
    row = (1.0 - np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)) * (H - 1)
    c0 = np.minimum(np.floor(col).astype(np.int64), W - 2)
    r0 = np.minimum(np.floor(row).astype(np.int64), H - 2)
    tc, tr = col - c0, row - r0
    out = (
        images[:, r0, c0] * (1 - tr) * (1 - tc)
        + images[:, r0, c0 + 1] * (1 - tr) * tc
        + images[:, r0 + 1, c0] * tr * (1 - tc)
        + images[:, r0 + 1, c0 + 1] * tr * tc
    )
    return out[0] if single else out


def map_images_to_mesh(images: np.ndarray, mesh: TriangleMesh) -> np.ndarray:
    """Per-vertex signals (N, n) from images sampled at the mesh's (u, v)."""
    if mesh.uv is None:
        raise ValueError("mesh has no (u, v) parameterisation")
    return sample_image(images, mesh.uv[:, 0], mesh.uv[:, 1])


def stripe_image(size: int = 28, period: int = 8, width: int = 3, orientation: str = "vertical") -> np.ndarray:
    """Binary stripes: columns (vertical) or rows (horizontal) with ``i % period < width`` are 1."""
    idx = np.arange(size) % period < width
    img = np.tile(idx.astype(np.float64), (size, 1))
    return img if orientation == "vertical" else img.T


@dataclass(eq=False)
class Dataset:
    """Per-vertex signals with labels; ``domain_index[k]`` picks sample k's domain.

    ``signals`` is (N, n, q).  Several domains may share one signal array when
    their meshes share a vertex layout.
    """

    signals: np.ndarray
    labels: np.ndarray
    domains: list
    domain_index: np.ndarray | None = None

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=np.float64)
        if self.signals.ndim == 2:
            self.signals = self.signals[:, :, None]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.signals) == 0:
            raise ValueError("empty dataset")
        if len(self.labels) != len(self.signals):
            raise ValueError("signal and label counts differ")
        if self.domain_index is None:
            self.domain_index = np.zeros(len(self.labels), dtype=np.int64)
        self.domain_index = np.asarray(self.domain_index, dtype=np.int64)
        for k, d in enumerate(self.domains):
            if d.n_vertices != self.signals.shape[1]:
                raise ValueError(f"domain {k} has {d.n_vertices} vertices, signals have {self.signals.shape[1]}")

    def __len__(self) -> int:
        return len(self.labels)

    def with_domains(self, domains, domain_index=None) -> "Dataset":
        """Same signals evaluated on other domains (transfer)."""
        return Dataset(self.signals, self.labels, list(domains), domain_index)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.signals[idx], self.labels[idx], self.domains, self.domain_index[idx])
