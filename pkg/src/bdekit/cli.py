"""Command-line interface: ``bdekit {degrade,restore,train,evaluate,hist}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from bdekit import __version__
from bdekit.bitcore import BitSpec, ImageBuffer, apply_weighting, degrade, high_bits_equal
from bdekit.brnet import BRNet, forward_padded
from bdekit.datasets import (
    MANIFESTS,
    DatasetManifest,
    encode_gray_png,
    encode_png,
    load_dataset,
    load_inputs,
)
from bdekit.errors import BDEError, InvalidInputError, InvariantViolation
from bdekit.metrics import (
    evaluate_dataset,
    half_step_restorer,
    histogram_csv,
    wdis,
    zero_padding_restorer,
)
from bdekit.training import TrainConfig, Trainer, load_checkpoint, load_config_file

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INVARIANT = 3

log = logging.getLogger("bdekit")


def _default_seed() -> int:
    raw = os.environ.get("BDEKIT_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise InvalidInputError(f"BDEKIT_SEED must be an integer, got {raw!r}") from None


def _echo_config(command: str, **settings):
    print(f"# bdekit {__version__} {command}")
    for k, v in settings.items():
        print(f"# {k}={v}")


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _out_path(out: Path, src: Path, many: bool, suffix: str = "") -> Path:
    if many or out.is_dir():
        out.mkdir(parents=True, exist_ok=True)
        return out / f"{src.stem}{suffix}.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _map(fn, items, jobs: int):
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def cmd_degrade(args) -> int:
    inputs = load_inputs(args.inp)
    many = Path(args.inp).is_dir()
    _echo_config("degrade", input=args.inp, output=args.out, bits=args.bits,
                 max_bits=args.max_bits or "auto", jobs=args.jobs)

    def work(item):
        src, img = item
        spec = BitSpec(args.max_bits or img.max_bits, args.bits)
        out = degrade(img, spec)
        dst = _out_path(Path(args.out), src, many)
        encode_png(out, dst)
        return f"{src.name} max_bits={spec.max_bits} missing_bits={spec.missing_bits} " \
               f"input_bits={spec.input_bits} -> {dst}"

    for line in _map(work, inputs, args.jobs):
        print(line)
    return EXIT_OK


def _load_model(path):
    if not Path(path).is_file():
        raise InvalidInputError(f"checkpoint {path} not found")
    ck = load_checkpoint(path)
    return ck.model, ck.meta.get("mode", "weight")


def cmd_restore(args) -> int:
    model, mode = _load_model(args.checkpoint)
    inputs = load_inputs(args.inp)
    many = Path(args.inp).is_dir()
    _echo_config("restore", input=args.inp, output=args.out, bits=args.bits,
                 checkpoint=args.checkpoint, mode=mode, emit_weightmap=args.emit_weightmap,
                 degrade_first=args.degrade, jobs=args.jobs)
    if mode != "weight":
        log.warning("checkpoint was trained in %s mode; high-order bits are not guaranteed", mode)

    def work(item):
        src, img = item
        if img.max_bits != model.config.max_bits:
            raise InvalidInputError(
                f"{src.name} is {img.max_bits}-bit but the model is {model.config.max_bits}-bit"
            )
        spec = BitSpec(img.max_bits, args.bits)
        lbd = degrade(img, spec) if args.degrade else img
        wm = forward_padded(lbd, spec, model)
        if mode == "weight":
            out = apply_weighting(lbd, spec, wm)
            if not high_bits_equal(out, lbd, spec):
                raise InvariantViolation(f"{src.name}: restoration changed high-order bits")
        else:
            out = ImageBuffer(np.clip(np.round(wm.data * spec.peak), 0, spec.peak), img.max_bits)
        dst = _out_path(Path(args.out), src, many)
        encode_png(out, dst)
        written = [str(dst)]
        if args.emit_weightmap:
            for c, name in enumerate("RGB"):
                wm_path = dst.with_name(f"{dst.stem}_wm_{name}.png")
                encode_gray_png(np.round(wm.data[..., c] * 255.0), wm_path)
                written.append(str(wm_path))
        return f"{src.name} missing_bits={spec.missing_bits} -> {', '.join(written)}"

    for line in _map(work, inputs, args.jobs):
        print(line)
    return EXIT_OK


def cmd_train(args) -> int:
    model_cfg, train_cfg = load_config_file(args.config)
    overrides = {}
    if args.no_progressive:
        overrides["progressive"] = False
    if args.mode:
        overrides["mode"] = args.mode
    if args.seed is not None:
        overrides["seed"] = args.seed
    elif "BDEKIT_SEED" in os.environ:
        overrides["seed"] = _default_seed()
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if overrides:
        kv = {k: v for k, v in vars(train_cfg).items()}
        kv.update(overrides)
        train_cfg = TrainConfig(**kv)
    data = [img for _, img in load_dataset(args.data)]
    out_dir = Path(args.out_dir)
    if args.resume:
        trainer = Trainer.resume(args.resume, train_cfg, data, out_dir)
        if trainer.model.config != model_cfg:
            raise InvalidInputError("resume checkpoint was trained with a different model config")
    else:
        trainer = Trainer(BRNet(model_cfg, seed=train_cfg.seed), train_cfg, data, out_dir)
    print("# bdekit %s train" % __version__)
    for line in (model_cfg.to_text() + train_cfg.to_text()).splitlines():
        print(f"# {line}")
    print(f"# data={args.data} images={len(data)} out_dir={out_dir} "
          f"resume={args.resume or '-'} start_epoch={trainer.schedule.epoch}")
    trainer.run()
    last = trainer.history[-1] if trainer.history else None
    if last is not None:
        print(f"final epoch={last.epoch} loss={last.mean_loss:.6f} lr={last.lr:.3g} b_ub={last.b_ub}")
    print(f"checkpoint {out_dir / 'final.bdekit'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if bool(args.checkpoint) == bool(args.baseline):
        raise InvalidInputError("give exactly one of --checkpoint or --baseline")
    manifest = None
    if args.manifest:
        manifest = MANIFESTS.get(args.manifest) or DatasetManifest.read(args.manifest)
    data = load_dataset(args.data, manifest)
    max_bits = data[0][1].max_bits
    if any(img.max_bits != max_bits for _, img in data):
        raise InvalidInputError("dataset mixes bit depths")
    specs = [BitSpec(max_bits, max_bits - bd) for bd in args.bits]
    if args.baseline:
        restorer = {"zero": zero_padding_restorer, "half": half_step_restorer}[args.baseline]
        label = {"zero": "Zero Padding", "half": "Half Step"}[args.baseline]
    else:
        model, mode = _load_model(args.checkpoint)
        if model.config.max_bits != max_bits:
            raise InvalidInputError(f"model is {model.config.max_bits}-bit, data is {max_bits}-bit")

        def restorer(lbd, spec):
            wm = forward_padded(lbd, spec, model)
            if mode == "weight":
                return apply_weighting(lbd, spec, wm)
            return ImageBuffer(np.clip(np.round(wm.data * spec.peak), 0, spec.peak), lbd.max_bits)

        label = "BRNet"
    _echo_config("evaluate", data=args.data, images=len(data), max_bits=max_bits,
                 bits_in=",".join(map(str, args.bits)),
                 restorer=args.baseline or args.checkpoint, report=args.report or "-", jobs=args.jobs)
    report = evaluate_dataset(restorer, data, specs, jobs=args.jobs)
    for r in report.records:
        if not r.ok:
            print(f"# FAILED {r.image} bits_in={r.bits_in}: {r.error}", file=sys.stderr)
    if args.report:
        rp = Path(args.report)
        rp.parent.mkdir(parents=True, exist_ok=True)
        rp.write_text(report.to_csv())
        rp.with_suffix(".summary.txt").write_text(report.summary())
    sys.stdout.write(report.table(label))
    sys.stdout.write(report.summary())
    return EXIT_OK


def cmd_hist(args) -> int:
    a = load_inputs(args.a)
    if len(a) != 1:
        raise InvalidInputError("--a must be a single image")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    img_a = a[0][1]
    _echo_config("hist", a=args.a, b=args.b or "-", out=out)
    (out / "a_hist.csv").write_text(histogram_csv(img_a))
    print(f"a: {out / 'a_hist.csv'}")
    if args.b:
        b = load_inputs(args.b)
        if len(b) != 1:
            raise InvalidInputError("--b must be a single image")
        img_b = b[0][1]
        if img_b.max_bits != img_a.max_bits:
            raise InvalidInputError(f"bit depths differ: {img_a.max_bits} vs {img_b.max_bits}")
        (out / "b_hist.csv").write_text(histogram_csv(img_b))
        print(f"b: {out / 'b_hist.csv'}")
        print(f"wdis={wdis(img_a, img_b):.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bdekit", description=__doc__)
    p.add_argument("--version", action="version", version=f"bdekit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("degrade", help="zero the low-order bits of images")
    d.add_argument("--in", dest="inp", required=True, help="PNG file or directory")
    d.add_argument("--out", required=True, help="output file or directory")
    d.add_argument("--bits", type=int, required=True, help="number of missing bits b")
    d.add_argument("--max-bits", type=int, default=0, help="expected image depth (default: from file)")
    d.add_argument("--jobs", type=int, default=1)
    d.set_defaults(func=cmd_degrade)

    r = sub.add_parser("restore", help="restore LBD images with a trained model")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--bits", type=int, required=True, help="number of missing bits b")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--emit-weightmap", action="store_true",
                   help="also write one grayscale PNG per channel of the weighting map")
    r.add_argument("--degrade", action="store_true", help="zero the low bits of the input first")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_restore)

    t = sub.add_parser("train", help="train BRNet with progressive bit curriculum")
    t.add_argument("--config", required=True, help="key=value config file")
    t.add_argument("--data", required=True, help="directory of training PNGs")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--no-progressive", action="store_true", help="draw missing bits uniformly")
    t.add_argument("--mode", choices=("weight", "value"))
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--epochs", type=int, help="override total epochs")
    t.add_argument("--seed", type=int, help="default: $BDEKIT_SEED or the config value")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="PSNR/SSIM/W-dis over a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--baseline", choices=("zero", "half"))
    e.add_argument("--bits", type=_parse_int_list, default=[1, 3, 4, 5, 7],
                   help="input bit depths (BD), comma-separated")
    e.add_argument("--report", help="per-image CSV path")
    e.add_argument("--manifest", help=f"built-in ({', '.join(MANIFESTS)}) or manifest file")
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(func=cmd_evaluate)

    h = sub.add_parser("hist", help="per-channel histogram CSVs")
    h.add_argument("--a", required=True)
    h.add_argument("--b")
    h.add_argument("--out", required=True, help="output directory")
    h.set_defaults(func=cmd_hist)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"bdekit: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (BDEError, OSError) as exc:
        print(f"bdekit: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
