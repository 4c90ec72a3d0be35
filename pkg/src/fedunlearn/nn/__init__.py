"""Minimal float64 neural-network engine: models, gradients, parameter math."""

from .arch import (
    ArchSpec,
    Conv2d,
    Dense,
    Flatten,
    MaxPool2d,
    adult_arch,
    cifar10_arch,
    dense_arch,
    mnist_arch,
    purchase_arch,
)
from .engine import Batch, build_model, forward, loss_and_grad, sgd_step
from .params import (
    ConformanceError,
    ParamSet,
    dump_param_bytes,
    global_norm,
    layer_norms,
    load_params,
    param_linear,
    parse_param_bytes,
    save_params,
    zeros_like,
)

__all__ = [
    "ArchSpec",
    "Batch",
    "ConformanceError",
    "Conv2d",
    "Dense",
    "Flatten",
    "MaxPool2d",
    "ParamSet",
    "adult_arch",
    "build_model",
    "cifar10_arch",
    "dense_arch",
    "dump_param_bytes",
    "forward",
    "global_norm",
    "layer_norms",
    "load_params",
    "loss_and_grad",
    "mnist_arch",
    "param_linear",
    "parse_param_bytes",
    "purchase_arch",
    "save_params",
    "sgd_step",
    "zeros_like",
]
