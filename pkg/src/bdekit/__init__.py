"""Bit-depth expansion with learned weighting maps."""

from bdekit.bitcore import (
    BitSpec,
    ImageBuffer,
    WeightingMap,
    apply_weighting,
    degrade,
    high_bits_equal,
    residual_bound,
)

__version__ = "0.1.0"

__all__ = [
    "BitSpec",
    "ImageBuffer",
    "WeightingMap",
    "apply_weighting",
    "degrade",
    "high_bits_equal",
    "residual_bound",
]
