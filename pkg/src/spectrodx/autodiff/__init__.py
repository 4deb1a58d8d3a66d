from .checkpoint import CheckpointError, ModelCheckpoint, load_checkpoint, save_checkpoint
from .conv import ConvGeometry, conv2d, conv2d_kernel_grad, conv2d_transpose
from .functional import (
    activation,
    batch_norm,
    bce_with_logits_sum,
    dense,
    dropout,
    flatten,
    leaky_relu,
    max_pool2d,
    relu,
    softmax,
    softmax_cross_entropy,
)
from .nn import Network, UnsupportedLayerError, input_gradient_norm
from .optim import AdamConfig, NonFiniteGradientError, Parameter, adam_step, zero_grad
from .tensor import (
    DimensionError,
    Tensor,
    backward,
    grad,
    no_grad,
    sigmoid,
    tanh,
    topological_order,
)

__all__ = [
    "AdamConfig", "CheckpointError", "ConvGeometry", "DimensionError", "ModelCheckpoint", "Network",
    "NonFiniteGradientError", "Parameter", "Tensor", "UnsupportedLayerError", "activation", "adam_step",
    "backward", "batch_norm", "bce_with_logits_sum", "conv2d", "conv2d_kernel_grad", "conv2d_transpose",
    "dense", "dropout", "flatten", "grad", "input_gradient_norm", "leaky_relu", "load_checkpoint",
    "max_pool2d", "no_grad", "relu", "save_checkpoint", "sigmoid", "softmax", "softmax_cross_entropy",
    "tanh", "topological_order", "zero_grad",
]
