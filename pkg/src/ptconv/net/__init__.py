"""Minimal network stack for parallel transport convolution."""
from .data import Dataset, load_idx, load_mnist, map_images_to_mesh, sample_image, stripe_image
from .domain import Domain, build_domain, resolve_sources
from .layers import DenseConv2D, Flatten, FullyConnected, GlobalPool, MissingCacheError, PTCLayer, ReLU
from .losses import loss_softmax_ce, loss_triplet
from .network import (
    DivergenceError,
    Network,
    ShapeError,
    SoftmaxCrossEntropy,
    TrainConfig,
    Triplet,
    build_network,
    evaluate,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .optim import SGD, Adam

__all__ = [
    "Adam",
    "Dataset",
    "DenseConv2D",
    "DivergenceError",
    "Domain",
    "Flatten",
    "FullyConnected",
    "GlobalPool",
    "MissingCacheError",
    "Network",
    "PTCLayer",
    "ReLU",
    "SGD",
    "ShapeError",
    "SoftmaxCrossEntropy",
    "TrainConfig",
    "Triplet",
    "build_domain",
    "build_network",
    "evaluate",
    "load_checkpoint",
    "load_idx",
    "load_mnist",
    "map_images_to_mesh",
    "predict",
    "resolve_sources",
    "sample_image",
    "save_checkpoint",
    "stripe_image",
    "train",
]
