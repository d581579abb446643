"""The bit restoration network.

A UNet-style encoder/decoder that maps ``[LBD image, residual bound]`` to a
per-sample weighting map in (0, 1). The encoder stacks three optimization
blocks (OptBlock) at scales 1, 1/2 and 1/4. Each OptBlock unrolls ``m``
steps of an RK-4 block followed by a proximal block, then a residual block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bdekit import nn
from bdekit.bitcore import BitSpec, ImageBuffer, WeightingMap, apply_weighting
from bdekit.errors import InvalidInputError
from bdekit.nn import Tensor
from bdekit.nn.params import ParamStore, conv_params

HDR_FINE_SCALE = 256.0


@dataclass(frozen=True)
class ModelConfig:
    base_filters: int = 64
    opt_steps: tuple = (1, 1, 6)
    max_bits: int = 8
    output_groups: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "opt_steps", tuple(int(s) for s in self.opt_steps))
        if self.output_groups is None:
            object.__setattr__(self, "output_groups", 1 if self.max_bits == 8 else 2)
        if self.max_bits not in (8, 16):
            raise InvalidInputError(f"max_bits must be 8 or 16, got {self.max_bits}")
        if len(self.opt_steps) != 3:
            raise InvalidInputError(f"BRNet has 3 encoder stages, got {len(self.opt_steps)} step counts")
        if any(s < 1 for s in self.opt_steps):
            raise InvalidInputError("optimization step counts must be positive")
        if self.base_filters < 1:
            raise InvalidInputError("base_filters must be positive")
        expected = 1 if self.max_bits == 8 else 2
        if self.output_groups != expected:
            raise InvalidInputError(
                f"{self.max_bits}-bit model needs {expected} output group(s), got {self.output_groups}"
            )

    @property
    def stages(self) -> int:
        return 3

    def to_text(self) -> str:
        return (
            f"max_bits={self.max_bits}\n"
            f"base_filters={self.base_filters}\n"
            f"opt_steps={','.join(str(s) for s in self.opt_steps)}\n"
            f"output_groups={self.output_groups}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kv = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise InvalidInputError(f"bad config line {raw!r}")
            kv[key.strip()] = value.strip()
        unknown = set(kv) - {"max_bits", "base_filters", "opt_steps", "output_groups"}
        if unknown:
            raise InvalidInputError(f"unknown model config keys: {sorted(unknown)}")
        args = {}
        if "max_bits" in kv:
            args["max_bits"] = int(kv["max_bits"])
        if "base_filters" in kv:
            args["base_filters"] = int(kv["base_filters"])
        if "opt_steps" in kv:
            args["opt_steps"] = tuple(int(s) for s in kv["opt_steps"].split(","))
        if "output_groups" in kv:
            args["output_groups"] = int(kv["output_groups"])
        return cls(**args)


def _conv(params: ParamStore, prefix: str, x: Tensor) -> Tensor:
    return nn.conv2d(x, params[prefix + ".weight"], params[prefix + ".bias"])


def resblock_forward(f: Tensor, params: ParamStore, prefix: str) -> Tensor:
    """``f + conv2(relu(conv1(f)))``."""
    return f + _conv(params, prefix + ".conv2", nn.relu(_conv(params, prefix + ".conv1", f)))


def prox_forward(f: Tensor, params: ParamStore, prefix: str) -> Tensor:
    """Learned proximal step: ``f + conv3(relu(conv2(relu(conv1(f)))))``."""
    y = nn.relu(_conv(params, prefix + ".conv1", f))
    y = nn.relu(_conv(params, prefix + ".conv2", y))
    return f + _conv(params, prefix + ".conv3", y)


def _g_forward(f: Tensor, params: ParamStore, prefix: str) -> Tensor:
    return _conv(params, prefix + ".conv2", nn.relu(_conv(params, prefix + ".conv1", f)))


def rk4_forward(f: Tensor, params: ParamStore, prefix: str) -> Tensor:
    """Classical RK-4 update with four learned derivative blocks and step ``h``."""
    h = params[prefix + ".h"]
    half = h * 0.5
    k1 = _g_forward(f, params, prefix + ".g1")
    k2 = _g_forward(f + half * k1, params, prefix + ".g2")
    k3 = _g_forward(f + half * k2, params, prefix + ".g3")
    k4 = _g_forward(f + h * k3, params, prefix + ".g4")
    return f + (h * (1.0 / 6.0)) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def optblock_forward(f: Tensor, params: ParamStore, prefix: str, steps: int) -> Tensor:
    for i in range(steps):
        f = rk4_forward(f, params, f"{prefix}.step{i}.rk4")
        f = prox_forward(f, params, f"{prefix}.step{i}.prox")
    return resblock_forward(f, params, prefix + ".res")


def _check_channels(f: Tensor, n: int):
    if f.data.ndim != 4 or f.shape[1] != n:
        raise InvalidInputError(f"expected {n} feature channels, got shape {f.shape}")


class BRNet:
    """Parameters plus the forward pass. ``params`` is a :class:`ParamStore`."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0, dtype=np.float32,
                 params: ParamStore | None = None):
        self.config = config or ModelConfig()
        if params is None:
            params = self.init_params(self.config, np.random.default_rng(seed), dtype)
        self.params = params

    @staticmethod
    def init_params(config: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> ParamStore:
        nf = config.base_filters
        ps = ParamStore(dtype)
        conv_params(ps, "input", 6, nf, 3, rng)
        for s, steps in enumerate(config.opt_steps, start=1):
            for i in range(steps):
                base = f"enc{s}.step{i}"
                for j in range(1, 5):
                    conv_params(ps, f"{base}.rk4.g{j}.conv1", nf, nf, 3, rng)
                    conv_params(ps, f"{base}.rk4.g{j}.conv2", nf, nf, 3, rng)
                ps.add(f"{base}.rk4.h", np.ones((1, 1, 1, 1)))
                for j in range(1, 4):
                    conv_params(ps, f"{base}.prox.conv{j}", nf, nf, 3, rng)
            conv_params(ps, f"enc{s}.res.conv1", nf, nf, 3, rng)
            conv_params(ps, f"enc{s}.res.conv2", nf, nf, 3, rng)
        for d in (1, 2):
            conv_params(ps, f"dec{d}.up", nf, 4 * nf, 1, rng)
            conv_params(ps, f"dec{d}.fuse", 2 * nf, nf, 1, rng)
            conv_params(ps, f"dec{d}.res.conv1", nf, nf, 3, rng)
            conv_params(ps, f"dec{d}.res.conv2", nf, nf, 3, rng)
        for g in range(1, config.output_groups + 1):
            conv_params(ps, f"out{g}.conv1", nf, nf, 3, rng)
            conv_params(ps, f"out{g}.conv2", nf, 3, 3, rng)
        return ps

    def astype(self, dtype) -> "BRNet":
        return BRNet(self.config, params=self.params.astype(dtype))

    @property
    def dtype(self):
        return self.params.dtype

    def make_input(self, lbd: np.ndarray, missing_bits) -> Tensor:
        """Build the ``(N, 6, H, W)`` network input from ``(N, H, W, 3)`` integer samples.

        ``missing_bits`` is an int or a length-N sequence.
        """
        lbd = np.asarray(lbd)
        if lbd.ndim == 3:
            lbd = lbd[None]
        peak = float((1 << self.config.max_bits) - 1)
        n, h, w, _ = lbd.shape
        bits = np.broadcast_to(np.asarray(missing_bits, dtype=np.int64), (n,))
        x = np.empty((n, 6, h, w), dtype=self.dtype)
        x[:, :3] = lbd.transpose(0, 3, 1, 2) / peak
        x[:, 3:] = (np.left_shift(1, bits) / peak)[:, None, None, None]
        return Tensor(x)

    def __call__(self, x: Tensor) -> Tensor:
        """Weighting map ``(N, 3, H, W)`` from a normalized ``(N, 6, H, W)`` input."""
        ps, cfg = self.params, self.config
        _check_channels(x, 6)
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise InvalidInputError(
                f"spatial dims must be divisible by 4, got {x.shape[2]}x{x.shape[3]}; pad the input"
            )
        f = _conv(ps, "input", x)
        skips = []
        for s, steps in enumerate(cfg.opt_steps, start=1):
            if s > 1:
                f = nn.maxpool2(f)
            f = optblock_forward(f, ps, f"enc{s}", steps)
            skips.append(f)
        for d, skip in zip((1, 2), (skips[1], skips[0])):
            up = nn.pixel_shuffle(_conv(ps, f"dec{d}.up", f), 2)
            f = _conv(ps, f"dec{d}.fuse", nn.concat_channels(up, skip))
            f = resblock_forward(f, ps, f"dec{d}.res")
        groups = [
            nn.sigmoid(_conv(ps, f"out{g}.conv2", nn.relu(_conv(ps, f"out{g}.conv1", f))))
            for g in range(1, cfg.output_groups + 1)
        ]
        if len(groups) == 1:
            return groups[0]
        coarse, fine = groups
        return nn.clip(coarse + fine * (1.0 / HDR_FINE_SCALE), 0.0, 1.0)

    def forward(self, lbd: ImageBuffer, spec: BitSpec) -> WeightingMap:
        if spec.max_bits != self.config.max_bits or lbd.max_bits != self.config.max_bits:
            raise InvalidInputError(
                f"model is {self.config.max_bits}-bit; got {lbd.max_bits}-bit image / "
                f"{spec.max_bits}-bit spec"
            )
        w = self(self.make_input(lbd.data, spec.missing_bits)).data[0]
        return WeightingMap(w.transpose(1, 2, 0).astype(np.float64))

    def restore(self, lbd: ImageBuffer, spec: BitSpec) -> ImageBuffer:
        return apply_weighting(lbd, spec, self.forward(lbd, spec))


def forward(lbd: ImageBuffer, spec: BitSpec, model: BRNet) -> WeightingMap:
    return model.forward(lbd, spec)


def restore(lbd: ImageBuffer, spec: BitSpec, model: BRNet) -> ImageBuffer:
    return model.restore(lbd, spec)


def _reflect_pad(data: np.ndarray, multiple: int) -> tuple[np.ndarray, int, int]:
    h, w = data.shape[:2]
    ph, pw = (-h) % multiple, (-w) % multiple
    if not (ph or pw):
        return data, h, w
    # reflect needs the pad to be smaller than the dim; fall back to symmetric edges
    mode = "reflect" if ph < h and pw < w else "symmetric"
    return np.pad(data, ((0, ph), (0, pw), (0, 0)), mode=mode), h, w


def forward_padded(lbd: ImageBuffer, spec: BitSpec, model: BRNet) -> WeightingMap:
    """Forward pass for arbitrary sizes: reflect-pad to a multiple of 4, crop after."""
    padded, h, w = _reflect_pad(lbd.data, 4)
    wm = model.forward(ImageBuffer(padded, lbd.max_bits), spec)
    return WeightingMap(wm.data[:h, :w])


def restore_padded(lbd: ImageBuffer, spec: BitSpec, model: BRNet) -> ImageBuffer:
    return apply_weighting(lbd, spec, forward_padded(lbd, spec, model))


def zero_output_groups(model: BRNet):
    """Zero the output group convs so every weight is exactly sigmoid(0) = 0.5."""
    for path, t in model.params.items():
        if path.startswith("out"):
            t.data[...] = 0
