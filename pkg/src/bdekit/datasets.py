"""PNG I/O, directory datasets and benchmark manifests."""

from __future__ import annotations

import hashlib
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import png

from bdekit.bitcore import ImageBuffer
from bdekit.errors import (
    ImageFormatError,
    InvalidInputError,
    ManifestMismatchError,
    TruncatedImageError,
    UnsupportedColorTypeError,
)

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png",)


def decode_png(path) -> ImageBuffer:
    """Read an 8- or 16-bit PNG as RGB. Gray is replicated; alpha is dropped."""
    path = Path(path)
    try:
        reader = png.Reader(filename=str(path))
        width, height, rows, info = reader.read()
        if reader.colormap:
            raise UnsupportedColorTypeError(f"{path}: palette PNGs are not supported")
        if info["bitdepth"] not in (8, 16):
            raise UnsupportedColorTypeError(
                f"{path}: {info['bitdepth']}-bit samples are not supported (need 8 or 16)"
            )
        planes = info["planes"]
        dtype = np.uint16 if info["bitdepth"] == 16 else np.uint8
        data = np.vstack([np.asarray(r, dtype=dtype) for r in rows])
    except png.ChunkError as exc:
        raise TruncatedImageError(f"{path}: {exc}") from exc
    except (png.FormatError, zlib.error) as exc:
        if "End of file" in str(exc) or isinstance(exc, zlib.error):
            raise TruncatedImageError(f"{path}: {exc}") from exc
        raise ImageFormatError(f"{path}: {exc}") from exc
    except ValueError as exc:
        # row data shorter than declared
        raise TruncatedImageError(f"{path}: {exc}") from exc
    if data.shape != (height, width * planes):
        raise TruncatedImageError(f"{path}: expected {height} rows of {width * planes} samples")
    data = data.reshape(height, width, planes)
    if info["alpha"]:
        log.warning("%s: dropping alpha channel", path)
        data = data[..., :-1]
    if data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    return ImageBuffer(data.astype(np.int32), info["bitdepth"])


def encode_png(img: ImageBuffer, path):
    h, w, _ = img.shape
    dtype = np.uint16 if img.max_bits == 16 else np.uint8
    writer = png.Writer(w, h, greyscale=False, bitdepth=img.max_bits)
    rows = img.data.astype(dtype).reshape(h, w * 3)
    with open(path, "wb") as fh:
        writer.write_array(fh, rows.ravel())


def encode_gray_png(data: np.ndarray, path, bitdepth: int = 8):
    h, w = data.shape
    writer = png.Writer(w, h, greyscale=True, bitdepth=bitdepth)
    dtype = np.uint16 if bitdepth == 16 else np.uint8
    with open(path, "wb") as fh:
        writer.write_array(fh, np.asarray(data, dtype=dtype).ravel())


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class DatasetManifest:
    """Expected files of a benchmark set. A digest of ``"-"`` is not checked."""

    name: str
    expected_count: int
    files: list[tuple[str, str]] = field(default_factory=list)
    source: str = ""

    def __post_init__(self):
        if self.files and len(self.files) != self.expected_count:
            raise InvalidInputError(
                f"manifest {self.name}: {len(self.files)} files listed, {self.expected_count} expected"
            )

    def to_text(self) -> str:
        lines = [f"# name: {self.name}", f"# count: {self.expected_count}"]
        if self.source:
            lines.append(f"# source: {self.source}")
        lines += [f"{fn} {dg}" for fn, dg in self.files]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        name, source, count, files = "", "", None, []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                key, value = key.strip(), value.strip()
                if key == "name":
                    name = value
                elif key == "count":
                    count = int(value)
                elif key == "source":
                    source = value
                continue
            parts = line.split()
            if len(parts) == 1:
                parts.append("-")
            if len(parts) != 2:
                raise InvalidInputError(f"bad manifest line {raw!r}")
            files.append((parts[0], parts[1]))
        return cls(name, len(files) if count is None else count, files, source)

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        return cls.from_text(Path(path).read_text())


def _builtin(name, count, filenames, source):
    return DatasetManifest(name, count, [(f, "-") for f in filenames], source)


MANIFESTS = {
    "kodak": _builtin(
        "kodak", 24, [f"kodim{i:02d}.png" for i in range(1, 25)],
        "Kodak Lossless True Color Image Suite, https://r0k.us/graphics/kodak/",
    ),
    "div2k-train": _builtin(
        "div2k-train", 900, [f"{i:04d}.png" for i in range(1, 901)],
        "DIV2K HR images 0001-0800 (train) and 0801-0900 (valid), https://data.vision.ee.ethz.ch/cvl/DIV2K/",
    ),
    # file names differ between redistributions of these sets, so only the count is fixed
    "set5": DatasetManifest("set5", 5, source="Set5 (Bevilacqua et al.)"),
    "set14": DatasetManifest("set14", 14, source="Set14 (Zeyde et al.)"),
    "b100": DatasetManifest("b100", 100, source="BSD100 test split"),
}


def make_manifest(directory, name: str, source: str = "") -> DatasetManifest:
    paths = list_images(directory)
    return DatasetManifest(name, len(paths), [(p.name, file_digest(p)) for p in paths], source)


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise InvalidInputError(f"{d} is not a directory")
    return sorted((p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()),
                  key=lambda p: p.name)


def check_manifest(paths: list[Path], manifest: DatasetManifest):
    names = {p.name: p for p in paths}
    if not manifest.files:
        if len(paths) != manifest.expected_count:
            raise ManifestMismatchError(
                f"{manifest.name}: found {len(paths)} images, expected {manifest.expected_count}"
            )
        return
    wanted = dict(manifest.files)
    missing = sorted(set(wanted) - set(names))
    unexpected = sorted(set(names) - set(wanted))
    changed = sorted(
        fn for fn, dg in wanted.items() if fn in names and dg != "-" and file_digest(names[fn]) != dg
    )
    if missing or unexpected or changed:
        parts = []
        if missing:
            parts.append(f"missing: {', '.join(missing)}")
        if unexpected:
            parts.append(f"unexpected: {', '.join(unexpected)}")
        if changed:
            parts.append(f"digest mismatch: {', '.join(changed)}")
        raise ManifestMismatchError(f"{manifest.name}: " + "; ".join(parts),
                                    missing, unexpected, changed)


def load_dataset(directory, manifest: DatasetManifest | str | None = None) -> list[tuple[str, ImageBuffer]]:
    """Decode every PNG in ``directory`` in lexicographic file-name order."""
    paths = list_images(directory)
    if not paths:
        raise InvalidInputError(f"no PNG images in {directory}")
    if isinstance(manifest, str):
        manifest = MANIFESTS[manifest]
    if manifest is not None:
        check_manifest(paths, manifest)
    return [(p.name, decode_png(p)) for p in paths]


def load_inputs(path) -> list[tuple[Path, ImageBuffer]]:
    """A single PNG file or every PNG in a directory."""
    p = Path(path)
    if p.is_dir():
        files = list_images(p)
        if not files:
            raise InvalidInputError(f"no PNG images in {p}")
    elif p.is_file():
        files = [p]
    else:
        raise InvalidInputError(f"{p} does not exist")
    return [(f, decode_png(f)) for f in files]


def synthetic_image(rng: np.random.Generator, height: int, width: int, max_bits: int = 8) -> ImageBuffer:
    """A smooth random colour field with some fine texture.

    Used for hermetic tests and desk-scale training when no benchmark data
    is available.
    """
    from scipy.ndimage import gaussian_filter

    out = np.zeros((height, width, 3))
    for sigma, amp in ((16.0, 1.0), (6.0, 0.35), (2.0, 0.1)):
        noise = rng.standard_normal((height, width, 3))
        out += amp * sigma * gaussian_filter(noise, (sigma, sigma, 0), mode="wrap")
    out -= out.min()
    out /= max(out.max(), 1e-12)
    return ImageBuffer(np.round(out * ((1 << max_bits) - 1)).astype(np.int32), max_bits)
