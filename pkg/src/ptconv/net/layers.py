"""Layers with explicit forward/backward passes.

Per-vertex activations are (n, c, B); vector activations are (c, B).  Every
layer caches what its backward pass needs during ``forward``.
"""
from __future__ import annotations

import numpy as np

from ..conv import FilterBank, ptc_backward, ptc_forward_batched

__all__ = [
    "Layer",
    "PTCLayer",
    "ReLU",
    "GlobalPool",
    "Flatten",
    "FullyConnected",
    "DenseConv2D",
    "MissingCacheError",
]


class MissingCacheError(RuntimeError):
    pass


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, domain):
        raise NotImplementedError

    def backward(self, gy):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise MissingCacheError(f"{type(self).__name__}.backward called without a forward pass")
        cache, self._cache = self._cache, None
        return cache

    def config(self) -> dict:
        return {"kind": self.kind}


class PTCLayer(Layer):
    """Parallel transport convolution with q inputs and p filters.

    ``assignment[j]`` selects which of the domain's bases (vector fields)
    filter j is transported along.
    """

    kind = "ptc"

    def __init__(self, q, p, n_r, n_theta, rng=None, assignment=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.q, self.p, self.n_r, self.n_theta = q, p, n_r, n_theta
        self.assignment = np.zeros(p, dtype=np.int64) if assignment is None else np.asarray(assignment)
        self.params["weights"] = _uniform(rng, (q, p, n_r * n_theta), q * n_r * n_theta)

    def bank(self, domain) -> FilterBank:
        return FilterBank(domain.bases, self.params["weights"], assignment=self.assignment)

    def forward(self, x, domain):
        bank = self.bank(domain)
        y, fwd = ptc_forward_batched(bank, domain.mass, x, return_cache=True)
        self._cache = (bank, domain.mass, x, fwd)
        return y

    def backward(self, gy):
        bank, mass, x, fwd = self._take_cache()
        dW, dx = ptc_backward(bank, mass, x, gy, cache=fwd)
        self.grads["weights"] = dW
        return dx

    def config(self):
        return {
            "kind": self.kind,
            "q": self.q,
            "p": self.p,
            "n_r": self.n_r,
            "n_theta": self.n_theta,
            "assignment": self.assignment.tolist(),
        }


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, domain=None):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, gy):
        return np.where(self._take_cache(), gy, 0.0)


class GlobalPool(Layer):
    """Mass-weighted mean over vertices: (n, c, B) -> (c, B)."""

    kind = "pool"

    def forward(self, x, domain):
        M = domain.mass.weights
        w = M / M.sum()
        self._cache = (w, x.shape)
        return np.einsum("n,ncb->cb", w, x)

    def backward(self, gy):
        w, shape = self._take_cache()
        return np.broadcast_to(w[:, None, None] * gy[None], shape).copy()


class Flatten(Layer):
    """(n, c, B) -> (n * c, B); requires every domain to share the vertex count."""

    kind = "flatten"

    def forward(self, x, domain=None):
        self._cache = x.shape
        return x.reshape(x.shape[0] * x.shape[1], x.shape[2])

    def backward(self, gy):
        return gy.reshape(self._take_cache())


class FullyConnected(Layer):
    kind = "fc"

    def __init__(self, n_in, n_out, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.n_in, self.n_out = n_in, n_out
        self.params["weight"] = _uniform(rng, (n_out, n_in), n_in)
        self.params["bias"] = _uniform(rng, (n_out,), n_in)

    def forward(self, x, domain=None):
        if x.shape[0] != self.n_in:
            raise ValueError(f"fully connected layer expects {self.n_in} inputs, got {x.shape[0]}")
        self._cache = x
        return self.params["weight"] @ x + self.params["bias"][:, None]

    def backward(self, gy):
        x = self._take_cache()
        self.grads["weight"] = gy @ x.T
        self.grads["bias"] = gy.sum(axis=1)
        return self.params["weight"].T @ gy

    def config(self):
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out}


class DenseConv2D(Layer):
    """Euclidean cross-correlation on a regular grid, zero padded ("same").

    Baseline for grid-parameterised meshes: vertex j * width + i is pixel (j, i).
    """

    kind = "conv2d"

    def __init__(self, q, p, size, grid_shape, rng=None):
        super().__init__()
        if size % 2 != 1:
            raise ValueError("kernel size must be odd")
        rng = rng or np.random.default_rng(0)
        self.q, self.p, self.size = q, p, size
        self.grid_shape = tuple(grid_shape)
        self.params["weights"] = _uniform(rng, (q, p, size * size), q * size * size)

    def _patches(self, x):
        H, W = self.grid_shape
        n, q, B = x.shape
        r = self.size // 2
        img = np.pad(x.reshape(H, W, q, B), ((r, r), (r, r), (0, 0), (0, 0)))
        cols = [img[dj:dj + H, di:di + W] for dj in range(self.size) for di in range(self.size)]
        return np.stack(cols, axis=3).reshape(n, q * self.size**2, B)  # (n, q*k*k, B)

    def forward(self, x, domain=None):
        P = self._patches(x)
        self._cache = P
        w = self.params["weights"].transpose(1, 0, 2).reshape(self.p, -1)  # (p, q*k*k)
        return np.einsum("pk,nkb->npb", w, P, optimize=True)

    def backward(self, gy):
        P = self._take_cache()
        n, _, B = P.shape
        dw = np.einsum("npb,nkb->pk", gy, P, optimize=True)
        self.grads["weights"] = dw.reshape(self.p, self.q, -1).transpose(1, 0, 2)
        w = self.params["weights"].transpose(1, 0, 2).reshape(self.p, -1)
        dP = np.einsum("pk,npb->nkb", w, gy, optimize=True).reshape(n, self.q, self.size, self.size, B)
        H, W = self.grid_shape
        r = self.size // 2
        dimg = np.zeros((H + 2 * r, W + 2 * r, self.q, B))
        dP = dP.reshape(H, W, self.q, self.size, self.size, B)
        for dj in range(self.size):
            for di in range(self.size):
                dimg[dj:dj + H, di:di + W] += dP[:, :, :, dj, di, :]
        return dimg[r:r + H, r:r + W].reshape(n, self.q, B)

    def config(self):
        return {"kind": self.kind, "q": self.q, "p": self.p, "size": self.size, "grid_shape": list(self.grid_shape)}
