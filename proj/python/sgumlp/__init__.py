"""Multimodal patch classifier: gated-MLP token mixing over depthwise-convolution features."""

from ._core import (
    Model,
    classification_metrics,
    depthwise_conv2d,
    gelu,
    grad_check,
    layer_norm,
    matmul,
    sgu,
    softmax,
)

__all__ = [
    "Model",
    "classification_metrics",
    "depthwise_conv2d",
    "gelu",
    "grad_check",
    "layer_norm",
    "matmul",
    "sgu",
    "softmax",
]
