"""Applying parallel transport convolution to signals, with closed-form gradients.

Single channel: ``ptc_apply`` computes K^T (M f).  Multi-channel batches follow
the gather-contract scheme: with Z = M F, every basis matrix B_b gathers Z over
the neighbourhoods (one stacked sparse product), and a dense contraction with
the template weights w[b, i, j] yields the p output channels:

    out[x, j] = sum_i sum_b w[b, i, j] (B_b Z_i)[x]

Signals are vertex-major: (n,), (n, q) or, for batches, (n, q, B).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .kernel import KernelBasis, KernelMatrix, KernelTemplate, assemble
from .mesh import MassMatrix

__all__ = [
    "FilterBank",
    "ptc_apply",
    "ptc_forward_batched",
    "ptc_backward",
    "ptc_forward_reference",
]


def _mass(mass) -> np.ndarray:
    return mass.weights if isinstance(mass, MassMatrix) else np.asarray(mass, dtype=np.float64)


def ptc_apply(K: KernelMatrix | sparse.spmatrix, mass, f) -> np.ndarray:
    """K^T (M f) for one kernel and a single-channel signal."""
    stencil = K.stencil if isinstance(K, KernelMatrix) else sparse.csr_matrix(K).T.tocsr()
    M = _mass(mass)
    f = np.asarray(f, dtype=np.float64)
    n = stencil.shape[0]
    if f.shape[0] != n or M.shape != (n,):
        raise ValueError(f"dimension mismatch: kernel {n}x{n}, mass {M.shape}, signal {f.shape}")
    Mf = M * f if f.ndim == 1 else M.reshape((n,) + (1,) * (f.ndim - 1)) * f
    return stencil @ Mf


@dataclass(eq=False)
class FilterBank:
    """p filters with q input channels each, on one or more transported bases.

    ``weights[i, j]`` are the template weights (flattened polar grid) of input
    channel i for output filter j; filter j uses ``bases[assignment[j]]``.
    All bases must share the polar grid.
    """

    bases: list[KernelBasis]
    weights: np.ndarray
    assignment: np.ndarray = None
    scale: float = 1.0
    angle: float = 0.0

    def __post_init__(self):
        if isinstance(self.bases, KernelBasis):
            self.bases = [self.bases]
        self.weights = np.asarray(self.weights, dtype=np.float64)
        q, p, nb = self.weights.shape
        if q < 1 or p < 1:
            raise ValueError("need p, q >= 1")
        grids = {(b.n_r, b.n_theta) for b in self.bases}
        if len(grids) != 1 or nb != self.bases[0].n_bins:
            raise ValueError("all bases must share the template grid of the weights")
        if len({b.n_vertices for b in self.bases}) != 1:
            raise ValueError("bases live on different meshes")
        if self.assignment is None:
            self.assignment = np.arange(p) % len(self.bases)
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if self.assignment.shape != (p,) or self.assignment.min() < 0 or self.assignment.max() >= len(self.bases):
            raise ValueError("assignment must map each filter to an existing basis")

    @property
    def q(self) -> int:
        return self.weights.shape[0]

    @property
    def p(self) -> int:
        return self.weights.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.bases[0].n_vertices

    def template(self, i: int, j: int) -> KernelTemplate:
        b = self.bases[self.assignment[j]]
        return KernelTemplate(b.anchor, b.radius, b.n_r, b.n_theta, self.weights[i, j].reshape(b.n_r, b.n_theta))

    def kernel(self, i: int, j: int) -> KernelMatrix:
        b = self.bases[self.assignment[j]]
        return assemble(b, self.template(i, j), self.scale, self.angle)

    def with_bases(self, bases, assignment=None) -> "FilterBank":
        """Same weights on different bases (e.g. another mesh)."""
        return FilterBank(
            bases=list(bases),
            weights=self.weights,
            assignment=self.assignment if assignment is None else assignment,
            scale=self.scale,
            angle=self.angle,
        )


@dataclass(eq=False)
class ForwardCache:
    batched: bool
    gathered: list = field(default_factory=list)


def _as_batch(bank: FilterBank, mass, F):
    M = _mass(mass)
    F = np.asarray(F, dtype=np.float64)
    batched = F.ndim == 3
    if F.ndim == 1:
        F = F[:, None]
    if F.ndim == 2:
        F = F[:, :, None]
    n, q, B = F.shape
    if n != bank.n_vertices or q != bank.q or M.shape != (n,):
        raise ValueError(
            f"shape mismatch: signal {F.shape}, bank expects ({bank.n_vertices}, {bank.q}, B), mass {M.shape}"
        )
    return M, F, batched


def _gather(basis: KernelBasis, bank: FilterBank, Z: np.ndarray) -> np.ndarray:
    n, q, B = Z.shape
    S = basis.stacked(bank.scale, bank.angle)
    Y = S @ Z.reshape(n, q * B)
    return Y.reshape(basis.n_bins, n, q, B)


def ptc_forward_batched(bank: FilterBank, mass, F, return_cache: bool = False):
    """Multi-channel PTC: (n, q[, B]) -> (n, p[, B]).

    Equals, up to rounding, sum_i ptc_apply(K_ij, M, F_i) for every filter j.
    """
    M, F, batched = _as_batch(bank, mass, F)
    n, q, B = F.shape
    Z = M[:, None, None] * F
    out = np.zeros((n, bank.p, B))
    cache = ForwardCache(batched=batched)
    for k, basis in enumerate(bank.bases):
        J = np.flatnonzero(bank.assignment == k)
        if J.size == 0:
            cache.gathered.append(None)
            continue
        Y = _gather(basis, bank, Z)
        cache.gathered.append(Y)
        nb = basis.n_bins
        w = bank.weights[:, J, :].transpose(2, 0, 1).reshape(nb * q, J.size)
        flat = Y.transpose(1, 3, 0, 2).reshape(n * B, nb * q) @ w
        out[:, J, :] = flat.reshape(n, B, J.size).transpose(0, 2, 1)
    if not batched:
        out = out[:, :, 0]
    return (out, cache) if return_cache else out


def ptc_backward(bank: FilterBank, mass, F, G, cache: ForwardCache | None = None):
    """Gradients of a scalar loss through the PTC layer.

    Parameters
    ----------
    G : (n, p[, B]) upstream gradient dL/d(out).

    Returns
    -------
    dW : (q, p, n_bins) gradient w.r.t. ``bank.weights``
    dF : gradient w.r.t. the input signal, shaped like ``F``
    """
    M, F, batched = _as_batch(bank, mass, F)
    n, q, B = F.shape
    G = np.asarray(G, dtype=np.float64)
    if G.ndim == 2:
        G = G[:, :, None]
    if G.shape != (n, bank.p, B):
        raise ValueError(f"upstream gradient has shape {G.shape}, expected {(n, bank.p, B)}")
    Z = M[:, None, None] * F
    dW = np.zeros_like(bank.weights)
    dZ = np.zeros((n, q * B))
    for k, basis in enumerate(bank.bases):
        J = np.flatnonzero(bank.assignment == k)
        if J.size == 0:
            continue
        Y = cache.gathered[k] if cache is not None else _gather(basis, bank, Z)
        nb = basis.n_bins
        Gk = G[:, J, :]
        # dW[b, i, j] = <B_b Z_i, G_j>
        Yt = Y.transpose(0, 2, 1, 3).reshape(nb * q, n * B)
        dw = Yt @ Gk.transpose(0, 2, 1).reshape(n * B, J.size)
        dW[:, J, :] = dw.reshape(nb, q, J.size).transpose(1, 2, 0)
        # dZ = sum_b B_b^T H_b with H_b[x, i] = sum_j w[b, i, j] G_j[x]
        w = bank.weights[:, J, :].transpose(2, 0, 1).reshape(nb * q, J.size)
        H = (w @ Gk.transpose(1, 0, 2).reshape(J.size, n * B)).reshape(nb, q, n, B)
        H = H.transpose(0, 2, 1, 3).reshape(nb * n, q * B)
        dZ += basis.stacked(bank.scale, bank.angle).T @ H
    dF = M[:, None, None] * dZ.reshape(n, q, B)
    if not batched:
        dF = dF[:, :, 0]
    return dW, dF


def ptc_forward_reference(bank: FilterBank, mass, F) -> np.ndarray:
    """p x q independent single-kernel applications, summed over input channels."""
    M, F, batched = _as_batch(bank, mass, F)
    n, q, B = F.shape
    out = np.zeros((n, bank.p, B))
    for j in range(bank.p):
        for i in range(q):
            out[:, j, :] += ptc_apply(bank.kernel(i, j), M, F[:, i, :])
    return out if batched else out[:, :, 0]
