"""Small numpy autodiff library used by the policy and proxy models."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .layers import MLP, Conv2d, GroupNorm, Linear, Module, ResidualBlock
from .optim import AdamW, OptimizerConfig, adamw_update, cosine_lr
from .tensor import (
    Tensor,
    avgpool2d,
    bce_loss,
    concat,
    conv2d,
    flatten,
    global_avgpool,
    group_norm,
    linear,
    mse_loss,
    no_grad,
    relu,
    sigmoid,
)

__all__ = [
    "AdamW", "Conv2d", "GroupNorm", "Linear", "MLP", "Module", "OptimizerConfig", "ResidualBlock", "Tensor",
    "adamw_update", "avgpool2d", "bce_loss", "concat", "conv2d", "cosine_lr", "flatten", "global_avgpool",
    "grad_check", "group_norm", "linear", "load_checkpoint", "mse_loss", "no_grad", "relu", "save_checkpoint",
    "sigmoid",
]
