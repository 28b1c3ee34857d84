"""Minimal float32 tensor engine with reverse-mode autodiff."""

from .tensor import (
    ConvSpec,
    Tensor,
    abs_,
    add,
    backward,
    concat_channels,
    constant,
    conv3d,
    conv3d_transposed,
    kaiming_uniform,
    mean_all,
    mul,
    parameter,
    relu,
    same_size_padding,
    slice_frames,
    sub,
    sum_all,
)
from .adam import AdamState, adam_step
from .checkpoint import load_arrays, save_arrays

__all__ = [
    "ConvSpec", "Tensor", "abs_", "add", "backward", "concat_channels",
    "constant", "conv3d", "conv3d_transposed", "kaiming_uniform", "mean_all",
    "mul", "parameter", "relu", "same_size_padding", "slice_frames", "sub",
    "sum_all", "AdamState", "adam_step", "load_arrays", "save_arrays",
]
