"""Minimal reverse-mode autodiff: tensors, layers, Adam, checkpoints, RNG."""

from .tensor import (
    Tensor,
    concat,
    conv2d,
    gather_rows,
    l2_norm,
    layer_norm,
    linear,
    maximum,
    mean_pool,
    mse_loss,
    multi_head_self_attention,
    no_grad,
    patchify,
    relu,
    sigmoid,
    softmax,
    where_const,
)
from .nn import MLP, Conv2d, LayerNorm, Linear, Module, MultiHeadSelfAttention, TransformerBlock
from .optim import Adam, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from .rng import rng_stream

__all__ = [
    "Tensor", "concat", "conv2d", "gather_rows", "l2_norm", "layer_norm",
    "linear", "maximum", "mean_pool", "mse_loss", "multi_head_self_attention",
    "no_grad", "patchify", "relu", "sigmoid", "softmax", "where_const",
    "MLP", "Conv2d", "LayerNorm", "Linear", "Module", "MultiHeadSelfAttention",
    "TransformerBlock", "Adam", "adam_step", "load_checkpoint",
    "save_checkpoint", "rng_stream",
]
