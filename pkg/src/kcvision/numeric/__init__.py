"""Minimal differentiable numeric substrate (numpy backed)."""
from .tensor import Param, Tensor, as_tensor, grad_enabled, no_grad
from . import ops
from .ops import (avg_pool_channels, conv2d, group_norm, leaky_relu,
                  local_response_norm, masked_linear)
from .optim import AdamW, CosineAnnealing, cosine_anneal

__all__ = [
    "Tensor", "Param", "as_tensor", "no_grad", "grad_enabled", "ops",
    "conv2d", "leaky_relu", "local_response_norm", "group_norm",
    "avg_pool_channels", "masked_linear", "AdamW", "CosineAnnealing",
    "cosine_anneal",
]
