from bdekit.nn.functional import (
    add,
    clip,
    concat_channels,
    conv2d,
    l1_loss,
    maxpool2,
    pixel_shuffle,
    relu,
    sigmoid,
    space_to_depth,
)
from bdekit.nn.params import AdamState, ParamStore, adam_step, conv_params
from bdekit.nn.tensor import Tensor

__all__ = [
    "AdamState",
    "ParamStore",
    "Tensor",
    "adam_step",
    "add",
    "clip",
    "concat_channels",
    "conv2d",
    "conv_params",
    "l1_loss",
    "maxpool2",
    "pixel_shuffle",
    "relu",
    "sigmoid",
    "space_to_depth",
]
