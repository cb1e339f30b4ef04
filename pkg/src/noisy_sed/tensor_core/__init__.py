from . import nn, ops
from .checkpoint import load_arrays, save_arrays
from .gradcheck import grad_check, numerical_grad, relative_error
from .nn import avg_pool2d, batch_norm, bce, conv2d, dropout, glu, gru, gru_bidirectional
from .tensor import Tensor, as_tensor, backward

__all__ = [
    "Tensor", "as_tensor", "backward", "ops", "nn",
    "conv2d", "avg_pool2d", "glu", "batch_norm", "dropout", "gru", "gru_bidirectional", "bce",
    "grad_check", "numerical_grad", "relative_error", "save_arrays", "load_arrays",
]
