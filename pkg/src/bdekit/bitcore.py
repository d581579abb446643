"""Integer bit-depth arithmetic.

Everything here works on exact integers. An LBD image is kept at full scale
with its low ``b`` bits zeroed, so that ``lbd + residual`` is the restored
HBD image as long as ``0 <= residual < 2**b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bdekit.errors import InvalidInputError

SAMPLE_DTYPE = np.int32


@dataclass(frozen=True)
class BitSpec:
    max_bits: int
    missing_bits: int

    def __post_init__(self):
        if self.max_bits not in (8, 16):
            raise InvalidInputError(f"max_bits must be 8 or 16, got {self.max_bits}")
        if not 1 <= self.missing_bits <= self.max_bits - 1:
            raise InvalidInputError(
                f"missing_bits must lie in [1, {self.max_bits - 1}], got {self.missing_bits}"
            )

    @property
    def input_bits(self) -> int:
        """Bit depth of the LBD source (the 'BD' column of the benchmark tables)."""
        return self.max_bits - self.missing_bits

    @property
    def peak(self) -> int:
        return (1 << self.max_bits) - 1


class ImageBuffer:
    """An RGB raster of integer samples in ``[0, 2**max_bits - 1]``.

    ``data`` is an ``(height, width, 3)`` int32 array in row-major order.
    """

    __slots__ = ("data", "max_bits")

    def __init__(self, data, max_bits: int = 8):
        arr = np.asarray(data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InvalidInputError(f"expected (H, W, 3) samples, got shape {arr.shape}")
        if max_bits not in (8, 16):
            raise InvalidInputError(f"max_bits must be 8 or 16, got {max_bits}")
        if arr.size and not np.issubdtype(arr.dtype, np.integer):
            if not np.all(np.equal(np.mod(arr, 1), 0)):
                raise InvalidInputError("samples must be integers")
        arr = np.ascontiguousarray(arr, dtype=SAMPLE_DTYPE)
        if arr.size and (arr.min() < 0 or arr.max() > (1 << max_bits) - 1):
            raise InvalidInputError(
                f"samples outside [0, {(1 << max_bits) - 1}] for {max_bits}-bit image"
            )
        self.data = arr
        self.max_bits = max_bits

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 3

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def copy(self) -> "ImageBuffer":
        return ImageBuffer(self.data.copy(), self.max_bits)

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.max_bits == other.max_bits and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"ImageBuffer({self.width}x{self.height}, {self.max_bits}-bit)"


class WeightingMap:
    """Per-sample real weights, ``(height, width, 3)`` float64."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InvalidInputError(f"expected (H, W, 3) weights, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("weighting map contains non-finite values")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise InvalidInputError("weights must lie in [0, 1]")
        self.data = arr

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def constant(cls, height: int, width: int, value: float) -> "WeightingMap":
        return cls(np.full((height, width, 3), value, dtype=np.float64))


def _check_depth(img: ImageBuffer, spec: BitSpec):
    if img.max_bits != spec.max_bits:
        raise InvalidInputError(
            f"image is {img.max_bits}-bit but bit spec expects {spec.max_bits}-bit"
        )


def degrade(img: ImageBuffer, spec: BitSpec) -> ImageBuffer:
    """Zero the lowest ``spec.missing_bits`` bits of every sample."""
    _check_depth(img, spec)
    mask = ~((1 << spec.missing_bits) - 1)
    return ImageBuffer(img.data & mask, img.max_bits)


def residual_bound(spec: BitSpec) -> int:
    return 1 << spec.missing_bits


def quantize_residual(weights: np.ndarray, missing_bits: int) -> np.ndarray:
    """Map weights to integer residuals: round half up, clamp to ``[0, 2**b - 1]``."""
    n = 1 << missing_bits
    r = np.floor(np.asarray(weights, dtype=np.float64) * n + 0.5)
    return np.clip(r, 0, n - 1).astype(SAMPLE_DTYPE)


def apply_weighting(lbd: ImageBuffer, spec: BitSpec, w) -> ImageBuffer:
    """Restore an HBD image as ``lbd + clamp(round(2**b * w), 0, 2**b - 1)``."""
    _check_depth(lbd, spec)
    weights = w.data if isinstance(w, WeightingMap) else WeightingMap(w).data
    if weights.shape != lbd.shape:
        raise InvalidInputError(
            f"weighting map shape {weights.shape} does not match image shape {lbd.shape}"
        )
    low = (1 << spec.missing_bits) - 1
    if np.any(lbd.data & low):
        raise InvalidInputError(
            f"LBD image has nonzero low {spec.missing_bits} bits; degrade it first"
        )
    return ImageBuffer(lbd.data + quantize_residual(weights, spec.missing_bits), lbd.max_bits)


def high_bits_equal(a: ImageBuffer, b_img: ImageBuffer, spec: BitSpec) -> bool:
    """True iff the top ``max_bits - missing_bits`` bits agree sample-wise."""
    if a.shape != b_img.shape or a.max_bits != b_img.max_bits:
        raise InvalidInputError("images differ in shape or bit depth")
    _check_depth(a, spec)
    return bool(np.array_equal(a.data >> spec.missing_bits, b_img.data >> spec.missing_bits))


def ideal_weights(original: ImageBuffer, lbd: ImageBuffer, spec: BitSpec) -> np.ndarray:
    """The weights that make :func:`apply_weighting` reproduce ``original`` exactly."""
    if original.shape != lbd.shape:
        raise InvalidInputError("images differ in shape")
    return (original.data - lbd.data).astype(np.float64) / residual_bound(spec)
