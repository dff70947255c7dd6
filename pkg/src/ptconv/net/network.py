"""Network container, trainer, evaluation and checkpoints."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .layers import DenseConv2D, Flatten, FullyConnected, GlobalPool, Layer, PTCLayer, ReLU
from .losses import loss_softmax_ce, loss_triplet
from .optim import make_optimizer

__all__ = [
    "SoftmaxCrossEntropy",
    "Triplet",
    "Network",
    "ShapeError",
    "DivergenceError",
    "TrainConfig",
    "build_network",
    "train",
    "evaluate",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
]

log = logging.getLogger(__name__)


class ShapeError(ValueError):
    def __init__(self, layer: int, message: str):
        super().__init__(f"layer {layer}: {message}")
        self.layer = layer


class DivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class SoftmaxCrossEntropy:
    n_classes: int = 10
    kind = "softmax"

    def to_dict(self):
        return {"kind": self.kind, "n_classes": self.n_classes}


@dataclass(frozen=True)
class Triplet:
    lam: float = 1.0
    margin: float = 1.0
    kind = "triplet"

    def to_dict(self):
        return {"kind": self.kind, "lam": self.lam, "margin": self.margin}


class Network:
    """Ordered layers plus exactly one loss head."""

    def __init__(self, layers: list[Layer], head):
        if not isinstance(head, (SoftmaxCrossEntropy, Triplet)):
            raise TypeError("head must be SoftmaxCrossEntropy or Triplet")
        self.layers = list(layers)
        self.head = head
        last = next((l for l in reversed(self.layers) if isinstance(l, FullyConnected)), None)
        if isinstance(head, SoftmaxCrossEntropy) and (last is None or last.n_out != head.n_classes):
            raise ValueError("final fully connected layer must output one logit per class")

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{k}", v) for i, l in enumerate(self.layers) for k, v in l.params.items()]

    def gradients(self) -> list[np.ndarray]:
        return [l.grads[k] for l in self.layers for k in l.params]

    def forward(self, x, domain) -> np.ndarray:
        """(n, q, B) per-vertex signals -> (out, B) predictions."""
        h = np.asarray(x, dtype=np.float64)
        for i, layer in enumerate(self.layers):
            try:
                h = layer.forward(h, domain)
            except (ValueError, IndexError) as exc:
                raise ShapeError(i, str(exc)) from exc
        return h

    def backward(self, g) -> np.ndarray:
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def loss_and_grad(self, x, labels, domain) -> float:
        """Summed softmax loss over the batch; leaves gradients in each layer."""
        out = self.forward(x, domain)
        loss, g = loss_softmax_ce(out, labels, self.head.n_classes)
        self.backward(g)
        return loss

    def triplet_loss_and_grad(self, x1, x2, x3, domains) -> float:
        """Triplet loss on single samples; gradients accumulated over the three passes."""
        d1, d2, d3 = domains if isinstance(domains, (list, tuple)) else (domains,) * 3
        feats = [self.forward(x, d)[:, 0] for x, d in ((x1, d1), (x2, d2), (x3, d3))]
        loss, grads = loss_triplet(*feats, self.head.lam, self.head.margin)
        total = [np.zeros_like(p) for _, p in self.parameters()]
        for x, d, g in zip((x1, x2, x3), (d1, d2, d3), grads):
            self.forward(x, d)
            self.backward(g[:, None])
            for acc, gp in zip(total, self.gradients()):
                acc += gp
        for layer in self.layers:
            for k in layer.params:
                layer.grads[k] = total.pop(0)
        return loss

    def config(self) -> dict:
        return {"layers": [l.config() for l in self.layers], "head": self.head.to_dict()}


def build_network(
    conv: str = "ptc",
    n_vertices: int = 784,
    q: int = 1,
    filters: int = 16,
    n_r: int = 3,
    n_theta: int = 8,
    n_fields: int = 1,
    readout: str = "flatten",
    n_classes: int = 10,
    kernel_size: int = 5,
    grid_shape=(28, 28),
    seed: int = 0,
) -> Network:
    """Single conv layer + ReLU + readout + FC, seeded.

    ``readout="flatten"`` feeds every vertex to the FC layer (meshes must share
    the vertex layout); ``"pool"`` uses the mass-weighted mean.
    """
    rng = np.random.default_rng(seed)
    if conv == "ptc":
        c = PTCLayer(q, filters, n_r, n_theta, rng=rng, assignment=np.arange(filters) % n_fields)
    elif conv == "dense":
        c = DenseConv2D(q, filters, kernel_size, grid_shape, rng=rng)
    else:
        raise ValueError(f"unknown conv {conv!r}")
    if readout == "flatten":
        ro, n_in = Flatten(), n_vertices * filters
    elif readout == "pool":
        ro, n_in = GlobalPool(), filters
    else:
        raise ValueError(f"unknown readout {readout!r}")
    return Network([c, ReLU(), ro, FullyConnected(n_in, n_classes, rng=rng)], SoftmaxCrossEntropy(n_classes))


@dataclass
class TrainConfig:
    batch_size: int = 50
    learning_rate: float = 1e-3
    iterations: int = 5000
    optimizer: str = "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    field_set: str = "default"
    log_every: int = 100

    def __post_init__(self):
        if self.batch_size < 1 or self.learning_rate <= 0 or self.iterations < 0 or self.log_every < 1:
            raise ValueError("batch size, learning rate and log interval must be positive, iterations >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam parameters")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _batch(dataset, idx):
    return dataset.signals[idx].transpose(1, 2, 0)


def train(net: Network, dataset, config: TrainConfig, eval_set=None, callback=None):
    """Mini-batch training; returns (net, log).

    Samples of one batch may live on different domains; each group runs its
    own forward/backward and gradients are summed in domain order.  Every
    ``log_every`` iterations a row (iteration, mean batch loss, accuracy on
    ``eval_set`` or NaN) is appended to the log.
    """
    rng = np.random.default_rng(config.seed)
    opt = make_optimizer(config.optimizer, config.learning_rate, config.beta1, config.beta2, config.eps)
    params = [p for _, p in net.parameters()]
    N = len(dataset)
    order = rng.permutation(N)
    pos = 0
    records = []
    window = []
    for it in range(1, config.iterations + 1):
        if pos + config.batch_size > N:
            order, pos = rng.permutation(N), 0
        idx = order[pos:pos + config.batch_size]
        pos += config.batch_size
        total_loss = 0.0
        grads = None
        for k in np.unique(dataset.domain_index[idx]):
            sub = idx[dataset.domain_index[idx] == k]
            total_loss += net.loss_and_grad(_batch(dataset, sub), dataset.labels[sub], dataset.domains[k])
            g = net.gradients()
            grads = [x.copy() for x in g] if grads is None else [a + b for a, b in zip(grads, g)]
        if not np.isfinite(total_loss) or any(not np.all(np.isfinite(g)) for g in grads):
            raise DivergenceError(f"non-finite loss or gradient at iteration {it} (loss {total_loss})")
        opt.step(params, grads)
        window.append(total_loss / len(idx))
        if it % config.log_every == 0 or it == config.iterations:
            acc = evaluate(net, eval_set) if eval_set is not None else float("nan")
            row = {"iteration": it, "loss": float(np.mean(window)), "accuracy": acc}
            window = []
            records.append(row)
            log.info("iter %d loss %.5f acc %.4f", it, row["loss"], acc)
            if callback is not None:
                callback(row)
    return net, records


def predict(net: Network, dataset, chunk: int = 500) -> np.ndarray:
    preds = np.empty(len(dataset), dtype=np.int64)
    for k in np.unique(dataset.domain_index):
        members = np.flatnonzero(dataset.domain_index == k)
        for s in range(0, len(members), chunk):
            idx = members[s:s + chunk]
            out = net.forward(_batch(dataset, idx), dataset.domains[k])
            preds[idx] = np.argmax(out, axis=0)
    for layer in net.layers:
        layer._cache = None
    return preds


def evaluate(net: Network, dataset) -> float:
    """Fraction of samples whose argmax prediction equals the label."""
    return float(np.mean(predict(net, dataset) == dataset.labels))


# Checkpoint layout (little-endian):
#   b"PTCN", u32 version, u32 header length, UTF-8 JSON header (architecture),
#   u32 array count, then per array: u16 name length, name, u8 ndim,
#   ndim x u64 shape, float64 data in C order.
_MAGIC = b"PTCN"
_VERSION = 1


def save_checkpoint(net: Network, path) -> None:
    header = json.dumps(net.config()).encode()
    params = net.parameters()
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<II", _VERSION, len(header)) + header)
        fh.write(struct.pack("<I", len(params)))
        for name, arr in params:
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _layer_from_config(c: dict) -> Layer:
    kind = c["kind"]
    if kind == "ptc":
        return PTCLayer(c["q"], c["p"], c["n_r"], c["n_theta"], assignment=c["assignment"])
    if kind == "conv2d":
        return DenseConv2D(c["q"], c["p"], c["size"], c["grid_shape"])
    if kind == "fc":
        return FullyConnected(c["n_in"], c["n_out"])
    return {"relu": ReLU, "pool": GlobalPool, "flatten": Flatten}[kind]()


def load_checkpoint(path) -> Network:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off = 12
    cfg = json.loads(raw[off:off + hlen])
    off += hlen
    layers = [_layer_from_config(c) for c in cfg["layers"]]
    h = cfg["head"]
    head = SoftmaxCrossEntropy(h["n_classes"]) if h["kind"] == "softmax" else Triplet(h["lam"], h["margin"])
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", raw, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
    for i, layer in enumerate(layers):
        for k in layer.params:
            layer.params[k] = arrays[f"{i}.{k}"]
    return Network(layers, head)
