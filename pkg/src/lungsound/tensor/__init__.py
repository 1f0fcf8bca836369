"""A small reverse-mode autodiff engine covering the classifier and VAE layers."""
from .core import TAPE, Tape, Tensor, backward, default_dtype, no_grad, precision
from .ops import (
    BatchNormState,
    add,
    batchnorm2d,
    conv2d,
    crop_or_pad,
    dense,
    dropout,
    exp,
    flatten,
    maxpool2d,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    softmax_crossentropy,
    square,
    sse_loss,
    sub,
    upsample2d,
)
from .ops import sum as tsum
from .optim import Adam, AdamState, adam_step

__all__ = [
    "TAPE", "Tape", "Tensor", "backward", "default_dtype", "no_grad", "precision",
    "BatchNormState", "add", "batchnorm2d", "conv2d", "crop_or_pad", "dense", "dropout",
    "exp", "flatten", "maxpool2d", "mul", "relu", "reshape", "sigmoid", "softmax",
    "softmax_crossentropy", "square", "sse_loss", "sub", "tsum", "upsample2d",
    "Adam", "AdamState", "adam_step",
]
