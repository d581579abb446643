"""Image quality metrics and dataset evaluation.

``wdis`` is the 1-Wasserstein distance between per-channel intensity
histograms, averaged over RGB. On a discrete grid with unit spacing it is
the L1 distance between the two cumulative histograms.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy import ndimage

from bdekit.bitcore import BitSpec, ImageBuffer, degrade
from bdekit.errors import InvalidInputError

PSNR_CAP = 100.0
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_SIGMA, SSIM_WIN = 1.5, 11
BT601 = np.array([0.299, 0.587, 0.114])


def _same_shape(a: ImageBuffer, b: ImageBuffer):
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.max_bits != b.max_bits:
        raise InvalidInputError(f"bit depths differ: {a.max_bits} vs {b.max_bits}")


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """PSNR in dB from the MSE over all samples; identical images give 100 dB."""
    _same_shape(a, b)
    diff = a.data.astype(np.float64) - b.data
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP
    peak = (1 << a.max_bits) - 1
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def luminance(img: ImageBuffer) -> np.ndarray:
    return img.data.astype(np.float64) @ BT601


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def ssim_gray(x: np.ndarray, y: np.ndarray, peak: float) -> float:
    """Mean SSIM over all fully-covered 11x11 Gaussian windows."""
    if x.shape != y.shape:
        raise InvalidInputError("shape mismatch")
    if min(x.shape) < SSIM_WIN:
        raise InvalidInputError(f"image smaller than the {SSIM_WIN}x{SSIM_WIN} SSIM window")
    win = gaussian_window()
    r = SSIM_WIN // 2

    def filt(z):
        return ndimage.correlate(z, win, mode="constant")[r:-r, r:-r]

    c1, c2 = (SSIM_K1 * peak) ** 2, (SSIM_K2 * peak) ** 2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    """SSIM on BT.601 luminance."""
    _same_shape(a, b)
    return ssim_gray(luminance(a), luminance(b), float((1 << a.max_bits) - 1))


class Histogram:
    """Counts over ``bins`` integer intensity levels."""

    def __init__(self, counts):
        counts = np.asarray(counts, dtype=np.float64)
        if counts.ndim != 1 or np.any(counts < 0):
            raise InvalidInputError("histogram counts must be a non-negative 1-D array")
        self.counts = counts

    @property
    def bins(self) -> int:
        return self.counts.size

    @classmethod
    def of_samples(cls, samples: np.ndarray, bins: int) -> "Histogram":
        return cls(np.bincount(np.asarray(samples).ravel(), minlength=bins))

    def normalized(self) -> np.ndarray:
        total = self.counts.sum()
        if total <= 0:
            raise InvalidInputError("cannot normalize an empty histogram")
        return self.counts / total


def wdis_hist(h1: Histogram, h2: Histogram) -> float:
    """W1 between two histograms on a unit-spaced grid: sum of |CDF difference|."""
    if h1.bins != h2.bins:
        raise InvalidInputError(f"bin counts differ: {h1.bins} vs {h2.bins}")
    return float(np.abs(np.cumsum(h1.normalized() - h2.normalized())).sum())


def wdis_bruteforce(h1: Histogram, h2: Histogram) -> float:
    """W1 by explicit greedy transport of mass from left to right.

    In one dimension matching sorted mass in order is optimal. Intended for
    small histograms in tests.
    """
    if h1.bins != h2.bins:
        raise InvalidInputError(f"bin counts differ: {h1.bins} vs {h2.bins}")
    supply = list(h1.normalized())
    demand = list(h2.normalized())
    i = j = 0
    cost = 0.0
    n = h1.bins
    while i < n and j < n:
        if supply[i] <= 0:
            i += 1
            continue
        if demand[j] <= 0:
            j += 1
            continue
        moved = min(supply[i], demand[j])
        cost += moved * abs(i - j)
        supply[i] -= moved
        demand[j] -= moved
    return cost


def histograms(img: ImageBuffer) -> list[Histogram]:
    bins = 1 << img.max_bits
    return [Histogram.of_samples(img.data[..., c], bins) for c in range(3)]


def wdis(a: ImageBuffer, b: ImageBuffer) -> float:
    """Channel-averaged W1 distance between intensity distributions, in intensity units."""
    if a.max_bits != b.max_bits:
        raise InvalidInputError(f"bit depths differ: {a.max_bits} vs {b.max_bits}")
    return float(np.mean([wdis_hist(ha, hb) for ha, hb in zip(histograms(a), histograms(b))]))


def histogram_plot_data(img: ImageBuffer) -> np.ndarray:
    """``(3, 2**max_bits)`` integer counts, one row per channel."""
    return np.stack([h.counts.astype(np.int64) for h in histograms(img)])


def histogram_csv(img: ImageBuffer) -> str:
    counts = histogram_plot_data(img)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["channel", "bin", "count"])
    for c, name in enumerate("RGB"):
        for v, n in enumerate(counts[c]):
            w.writerow([name, v, int(n)])
    return buf.getvalue()


# dataset evaluation

Restorer = Callable[[ImageBuffer, BitSpec], ImageBuffer]


def zero_padding_restorer(lbd: ImageBuffer, spec: BitSpec) -> ImageBuffer:
    return lbd


def half_step_restorer(lbd: ImageBuffer, spec: BitSpec) -> ImageBuffer:
    return ImageBuffer(lbd.data + (1 << (spec.missing_bits - 1)), lbd.max_bits)


@dataclass
class MetricRecord:
    image: str
    bits_in: int
    bits_missing: int
    psnr_db: float = float("nan")
    ssim: float = float("nan")
    wdis: float = float("nan")
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass
class MetricReport:
    records: list[MetricRecord] = field(default_factory=list)

    CSV_HEADER = ("image", "bits_in", "bits_missing", "psnr_db", "ssim", "wdis")

    def specs(self) -> list[tuple[int, int]]:
        seen = []
        for r in self.records:
            key = (r.bits_in, r.bits_missing)
            if key not in seen:
                seen.append(key)
        return seen

    def aggregate(self) -> dict[tuple[int, int], dict]:
        """Arithmetic means per ``(bits_in, bits_missing)`` over successful records."""
        out = {}
        for key in self.specs():
            rows = [r for r in self.records if (r.bits_in, r.bits_missing) == key]
            good = [r for r in rows if r.ok]
            out[key] = {
                "psnr_db": float(np.mean([r.psnr_db for r in good])) if good else float("nan"),
                "ssim": float(np.mean([r.ssim for r in good])) if good else float("nan"),
                "wdis": float(np.mean([r.wdis for r in good])) if good else float("nan"),
                "count": len(good),
                "failed": len(rows) - len(good),
            }
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_HEADER)
        for r in self.records:
            if r.ok:
                w.writerow([r.image, r.bits_in, r.bits_missing,
                            f"{r.psnr_db:.6f}", f"{r.ssim:.8f}", f"{r.wdis:.6f}"])
        return buf.getvalue()

    def summary(self) -> str:
        """``key=value`` lines, one block per bit spec."""
        lines = []
        for (bi, bm), agg in self.aggregate().items():
            p = f"bd{bi}"
            lines += [
                f"{p}.bits_missing={bm}",
                f"{p}.psnr_db={agg['psnr_db']:.4f}",
                f"{p}.ssim={agg['ssim']:.4f}",
                f"{p}.wdis={agg['wdis']:.4f}",
                f"{p}.count={agg['count']}",
                f"{p}.failed={agg['failed']}",
            ]
        return "\n".join(lines) + "\n"

    def table(self, label: str = "Result") -> str:
        """Rows of bit depth x indicator, laid out like the benchmark tables."""
        lines = [f"{'Bit-Depth':>9} | {'Indicator':<9} | {label:>12}", "-" * 37]
        for (bi, _), agg in self.aggregate().items():
            lines.append(f"{bi:>9} | {'PSNR':<9} | {agg['psnr_db']:>12.2f}")
            lines.append(f"{'':>9} | {'SSIM':<9} | {agg['ssim']:>12.4f}")
            lines.append(f"{'':>9} | {'W-dis':<9} | {agg['wdis']:>12.2f}")
        return "\n".join(lines) + "\n"


def evaluate_image(name: str, original: ImageBuffer, spec: BitSpec, restorer: Restorer) -> MetricRecord:
    rec = MetricRecord(name, spec.input_bits, spec.missing_bits)
    try:
        restored = restorer(degrade(original, spec), spec)
        rec.psnr_db = psnr(restored, original)
        rec.ssim = ssim(restored, original)
        rec.wdis = wdis(restored, original)
    except Exception as exc:  # noqa: BLE001 - a failing image must not abort the dataset
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def evaluate_dataset(restorer: Restorer, dataset: Iterable[tuple[str, ImageBuffer]],
                     specs: list[BitSpec], jobs: int = 1) -> MetricReport:
    """Degrade, restore and score every image under every spec.

    Records are ordered spec-major, then by dataset order, regardless of ``jobs``.
    """
    items = list(dataset)
    if not items:
        raise InvalidInputError("dataset is empty")
    tasks = [(name, img, spec) for spec in specs for name, img in items]
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as pool:
            records = list(pool.map(lambda t: evaluate_image(t[0], t[1], t[2], restorer), tasks))
    else:
        records = [evaluate_image(n, i, s, restorer) for n, i, s in tasks]
    return MetricReport(records)
