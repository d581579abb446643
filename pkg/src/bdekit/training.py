"""Progressive training: data generation, the epoch loop and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from bdekit import nn
from bdekit.bitcore import BitSpec, ImageBuffer, degrade, ideal_weights
from bdekit.brnet import BRNet, ModelConfig
from bdekit.errors import CheckpointError, InvalidInputError
from bdekit.nn import checkpoint
from bdekit.nn.params import AdamState, adam_step

log = logging.getLogger(__name__)

LR_HALF_LIFE = 200
CURRICULUM_START = 4
CURRICULUM_PERIOD = 20
MODES = ("weight", "value")


def bits_upper_bound(epoch: int, b_max: int) -> int:
    """Largest number of missing bits drawn at ``epoch``: one more every 20 epochs."""
    if epoch < 0:
        raise InvalidInputError(f"epoch must be non-negative, got {epoch}")
    return min(CURRICULUM_START + epoch // CURRICULUM_PERIOD, b_max - 1)


def progressive_bits(epoch: int, b_max: int, rng: np.random.Generator) -> BitSpec:
    return BitSpec(b_max, int(rng.integers(1, bits_upper_bound(epoch, b_max), endpoint=True)))


def uniform_bits(b_max: int, rng: np.random.Generator) -> BitSpec:
    return BitSpec(b_max, int(rng.integers(1, b_max - 1, endpoint=True)))


def learning_rate(base_lr: float, epoch: int) -> float:
    return base_lr * 0.5 ** (epoch // LR_HALF_LIFE)


@dataclass
class TrainSchedule:
    epoch: int = 0
    b_max: int = 8

    @property
    def b_ub(self) -> int:
        return bits_upper_bound(self.epoch, self.b_max)


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 16
    patch_size: int = 96
    lr: float = 1e-4
    seed: int = 0
    progressive: bool = True
    mode: str = "weight"
    patches_per_epoch: int = 1000
    max_bits: int = 8
    fixed_bits: int = 0  # 0 = draw per the curriculum / uniform ablation
    checkpoint_every: int = 50

    def __post_init__(self):
        if self.patch_size <= 0 or self.patch_size % 4:
            raise InvalidInputError(f"patch_size must be a positive multiple of 4, got {self.patch_size}")
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 1 or self.patches_per_epoch < 1 or self.epochs < 0:
            raise InvalidInputError("batch_size and patches_per_epoch must be positive, epochs >= 0")
        if self.lr < 0:
            raise InvalidInputError("learning rate must be non-negative")
        if self.max_bits not in (8, 16):
            raise InvalidInputError(f"max_bits must be 8 or 16, got {self.max_bits}")
        if self.fixed_bits and not 1 <= self.fixed_bits <= self.max_bits - 1:
            raise InvalidInputError(f"fixed_bits must lie in [1, {self.max_bits - 1}]")

    @property
    def lr_half_life(self) -> int:
        return LR_HALF_LIFE

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(self.patches_per_epoch / self.batch_size)

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in asdict(self).items())

    @classmethod
    def from_mapping(cls, kv: dict) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        unknown = set(kv) - set(types)
        if unknown:
            raise InvalidInputError(f"unknown training config keys: {sorted(unknown)}")
        args = {}
        for k, v in kv.items():
            default = getattr(cls, k)
            if isinstance(default, bool):
                args[k] = _parse_bool(v)
            elif isinstance(default, int):
                args[k] = int(v)
            elif isinstance(default, float):
                args[k] = float(v)
            else:
                args[k] = str(v)
        return cls(**args)


def _fmt(v):
    return str(v).lower() if isinstance(v, bool) else str(v)


def _parse_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise InvalidInputError(f"not a boolean: {v!r}")


def parse_config_text(text: str) -> dict[str, str]:
    """``key=value`` lines; ``#`` starts a comment."""
    kv = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InvalidInputError(f"bad config line {raw!r}")
        kv[key.strip()] = value.strip()
    return kv


def load_config_file(path) -> tuple[ModelConfig, TrainConfig]:
    """Read one file holding both model and training keys."""
    kv = parse_config_text(Path(path).read_text())
    model_keys = {"max_bits", "base_filters", "opt_steps", "output_groups"}
    model_kv = {k: v for k, v in kv.items() if k in model_keys}
    train_kv = {k: v for k, v in kv.items() if k not in model_keys - {"max_bits"}}
    model_cfg = ModelConfig.from_text("".join(f"{k}={v}\n" for k, v in model_kv.items()))
    return model_cfg, TrainConfig.from_mapping(train_kv)


def crop_patch(img: ImageBuffer, size: int, rng: np.random.Generator) -> ImageBuffer:
    if size > img.height or size > img.width:
        raise InvalidInputError(f"patch {size} larger than image {img.width}x{img.height}")
    y = int(rng.integers(0, img.height - size, endpoint=True))
    x = int(rng.integers(0, img.width - size, endpoint=True))
    return ImageBuffer(img.data[y:y + size, x:x + size], img.max_bits)


def make_training_pair(original: ImageBuffer, epoch: int, config: TrainConfig,
                       rng: np.random.Generator):
    """Crop, draw missing bits, degrade.

    Returns ``(lbd_patch, spec, target)``. ``target`` is the ideal weighting
    map in weight mode and the normalized original patch in value mode, both
    ``(P, P, 3)`` float64.
    """
    if original.max_bits != config.max_bits:
        raise InvalidInputError(
            f"training image is {original.max_bits}-bit, config expects {config.max_bits}-bit"
        )
    patch = crop_patch(original, config.patch_size, rng)
    if config.fixed_bits:
        spec = BitSpec(config.max_bits, config.fixed_bits)
    elif config.progressive:
        spec = progressive_bits(epoch, config.max_bits, rng)
    else:
        spec = uniform_bits(config.max_bits, rng)
    lbd = degrade(patch, spec)
    if config.mode == "weight":
        target = ideal_weights(patch, lbd, spec)
    else:
        target = patch.data / float(spec.peak)
    return lbd, spec, target


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    lr: float
    b_ub: int


def train_step(model: BRNet, lbd: np.ndarray, bits, target: np.ndarray, adam: AdamState) -> float:
    """One Adam step on a batch. ``lbd`` and ``target`` are ``(N, H, W, 3)``."""
    model.params.zero_grad()
    pred = model(model.make_input(lbd, bits))
    tgt = nn.Tensor(np.ascontiguousarray(target.transpose(0, 3, 1, 2), dtype=model.dtype))
    loss = nn.l1_loss(pred, tgt)
    loss.backward()
    adam_step(model.params, adam)
    return float(loss.data)


def train_epoch(model: BRNet, dataset, epoch: int, config: TrainConfig, adam: AdamState,
                rng: np.random.Generator) -> EpochStats:
    if not dataset:
        raise InvalidInputError("training dataset is empty")
    adam.lr = learning_rate(config.lr, epoch)
    losses = []
    remaining = config.patches_per_epoch
    while remaining > 0:
        n = min(config.batch_size, remaining)
        remaining -= n
        lbds, bits, targets = [], [], []
        for _ in range(n):
            img = dataset[int(rng.integers(len(dataset)))]
            lbd, spec, target = make_training_pair(img, epoch, config, rng)
            lbds.append(lbd.data)
            bits.append(spec.missing_bits)
            targets.append(target)
        losses.append(train_step(model, np.stack(lbds), bits, np.stack(targets), adam))
    return EpochStats(epoch, float(np.mean(losses)), adam.lr,
                      config.fixed_bits or bits_upper_bound(epoch, config.max_bits))


# checkpoints


def _rng_state_text(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state, sort_keys=True)


def _rng_from_text(text: str) -> np.random.Generator:
    state = json.loads(text)
    bg = getattr(np.random, state["bit_generator"])()
    bg.state = state
    return np.random.Generator(bg)


def save_checkpoint(model: BRNet, schedule: TrainSchedule, path, adam: AdamState | None = None,
                    rng: np.random.Generator | None = None, extra: dict | None = None):
    meta = {"epoch": str(schedule.epoch), "b_max": str(schedule.b_max)}
    tensors = {f"param.{k}": v for k, v in model.params.state_dict().items()}
    if adam is not None:
        meta.update(adam_t=str(adam.t), adam_lr=repr(adam.lr))
        for k in model.params:
            if k in adam.m:
                tensors[f"adam_m.{k}"] = adam.m[k]
                tensors[f"adam_v.{k}"] = adam.v[k]
    if rng is not None:
        meta["rng_state"] = _rng_state_text(rng)
    for k, v in (extra or {}).items():
        meta[k] = str(v)
    checkpoint.write(path, model.config.to_text(), tensors, meta)


@dataclass
class LoadedCheckpoint:
    model: BRNet
    schedule: TrainSchedule
    adam: AdamState | None = None
    rng: np.random.Generator | None = None
    meta: dict = field(default_factory=dict)


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> LoadedCheckpoint:
    config_text, meta, tensors = checkpoint.read(
        path, expected_config.to_text() if expected_config is not None else None
    )
    config = ModelConfig.from_text(config_text)
    params = {k[len("param."):]: v for k, v in tensors.items() if k.startswith("param.")}
    model = BRNet(config, params=BRNet.init_params(config, np.random.default_rng(0)))
    try:
        model.params.load_state_dict(params)
    except InvalidInputError as exc:
        raise CheckpointError(f"checkpoint parameters do not fit the stored config: {exc}") from exc
    schedule = TrainSchedule(int(meta.get("epoch", 0)), int(meta.get("b_max", config.max_bits)))
    adam = None
    if "adam_t" in meta:
        adam = AdamState(lr=float(meta.get("adam_lr", 0.0)), t=int(meta["adam_t"]))
        for k in model.params:
            if f"adam_m.{k}" in tensors:
                adam.m[k] = tensors[f"adam_m.{k}"].copy()
                adam.v[k] = tensors[f"adam_v.{k}"].copy()
    rng = _rng_from_text(meta["rng_state"]) if "rng_state" in meta else None
    return LoadedCheckpoint(model, schedule, adam, rng, meta)


# the full loop


class Trainer:
    """Runs epochs, logs losses to CSV and writes periodic checkpoints."""

    LOG_HEADER = ["epoch", "mean_loss", "lr", "b_ub"]

    def __init__(self, model: BRNet, config: TrainConfig, dataset, out_dir=None):
        if model.config.max_bits != config.max_bits:
            raise InvalidInputError("model and training config disagree on max_bits")
        self.model = model
        self.config = config
        self.dataset = dataset
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.rng = np.random.default_rng(config.seed)
        self.adam = AdamState(lr=config.lr)
        self.schedule = TrainSchedule(0, config.max_bits)
        self.history: list[EpochStats] = []

    @classmethod
    def resume(cls, ckpt_path, config: TrainConfig, dataset, out_dir=None) -> "Trainer":
        ck = load_checkpoint(ckpt_path)
        if ck.adam is None or ck.rng is None:
            raise CheckpointError("checkpoint lacks optimizer or RNG state; cannot resume")
        if ck.meta.get("mode", config.mode) != config.mode:
            raise CheckpointError(
                f"checkpoint was trained in {ck.meta.get('mode')!r} mode, config says {config.mode!r}"
            )
        t = cls(ck.model, config, dataset, out_dir)
        t.adam, t.rng = ck.adam, ck.rng
        t.schedule = TrainSchedule(ck.schedule.epoch, config.max_bits)
        if t.out_dir is not None and (t.out_dir / "loss.csv").exists():
            with open(t.out_dir / "loss.csv") as fh:
                for row in csv.DictReader(fh):
                    if int(row["epoch"]) < t.schedule.epoch:
                        t.history.append(EpochStats(int(row["epoch"]), float(row["mean_loss"]),
                                                    float(row["lr"]), int(row["b_ub"])))
        return t

    def _write_log(self):
        with open(self.out_dir / "loss.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.LOG_HEADER)
            for s in self.history:
                w.writerow([s.epoch, repr(s.mean_loss), repr(s.lr), s.b_ub])

    def save(self, path):
        save_checkpoint(self.model, self.schedule, path, self.adam, self.rng,
                        extra={"mode": self.config.mode})

    def run(self, epochs: int | None = None) -> list[EpochStats]:
        """Train until ``epochs`` (default ``config.epochs``) epochs have completed in total."""
        stop = self.config.epochs if epochs is None else epochs
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        while self.schedule.epoch < stop:
            e = self.schedule.epoch
            stats = train_epoch(self.model, self.dataset, e, self.config, self.adam, self.rng)
            self.history.append(stats)
            log.info("epoch %d loss %.6f lr %.3g b_ub %d", e, stats.mean_loss, stats.lr, stats.b_ub)
            self.schedule.epoch = e + 1
            if self.out_dir is not None:
                self._write_log()
                if self.config.checkpoint_every and self.schedule.epoch % self.config.checkpoint_every == 0:
                    self.save(self.out_dir / f"checkpoint_e{self.schedule.epoch:05d}.bdekit")
        if self.out_dir is not None:
            self.save(self.out_dir / "final.bdekit")
        return self.history

    def converged_loss(self, window: int = 20) -> float:
        """Mean epoch loss over the last ``window`` epochs."""
        if not self.history:
            raise InvalidInputError("no epochs recorded")
        return float(np.mean([s.mean_loss for s in self.history[-window:]]))
