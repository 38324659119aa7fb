"""Small numpy neural-network engine: tensors, TCN extractor, heads, Adam."""

from .encode import encode_batch, encode_input
from .kernels import BACKEND
from .models import ExtractorSpec, forward_extractor, forward_mlp, init_extractor, init_mlp
from .optim import Adam, adam_step, cosine_lr
from .tensor import Tensor, conv1d, cross_entropy, linear, mean_time, mse, no_grad, relu, softmax

__all__ = [
    "BACKEND", "Adam", "ExtractorSpec", "Tensor", "adam_step", "conv1d", "cosine_lr",
    "cross_entropy", "encode_batch", "encode_input", "forward_extractor", "forward_mlp",
    "init_extractor", "init_mlp", "linear", "mean_time", "mse", "no_grad", "relu", "softmax",
]
