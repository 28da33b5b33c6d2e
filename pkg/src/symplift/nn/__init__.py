"""Differentiable networks and the reverse-mode engine behind them."""
from .autodiff import SELU_ALPHA, SELU_SCALE, Tensor
from .networks import (
    ConvAEConfig,
    ConvDecoder,
    ConvEncoder,
    ConvLayer,
    LinearMap,
    Mlp,
    Network,
    conv_decode,
    conv_encode,
    grad_params,
    input_jacobian,
    mlp_forward,
    network_from_architecture,
    param_leaves,
    selu,
)

__all__ = [
    "SELU_ALPHA", "SELU_SCALE", "Tensor", "ConvAEConfig", "ConvDecoder", "ConvEncoder",
    "ConvLayer", "LinearMap", "Mlp", "Network", "conv_decode", "conv_encode", "grad_params",
    "input_jacobian", "mlp_forward", "network_from_architecture", "param_leaves", "selu",
]
