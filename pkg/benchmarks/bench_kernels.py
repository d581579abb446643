"""Compare the compiled kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Times im2col, col2im and 2x2 max pooling on BRNet-sized tensors for both
backends, then one training step of a small BRNet under each backend (the
step runs in a subprocess so ``BDEKIT_PURE_PYTHON`` takes effect at import).
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from bdekit._kernels import _fallback

try:
    from bdekit._kernels import _core
except ImportError:
    _core = None

STEP_SNIPPET = """
import json, timeit, numpy as np
from bdekit import _kernels
from bdekit.brnet import BRNet, ModelConfig
from bdekit.nn.params import AdamState
from bdekit.training import train_step
rng = np.random.default_rng(0)
model = BRNet(ModelConfig(base_filters=16, opt_steps=(1, 1, 2)), seed=0)
lbd = rng.integers(0, 16, (4, 64, 64, 3)) << 4
target = rng.uniform(0, 1, (4, 64, 64, 3))
adam = AdamState(lr=1e-4)
train_step(model, lbd, 4, target, adam)
t = min(timeit.repeat(lambda: train_step(model, lbd, 4, target, adam), number=1, repeat={repeat}))
print(json.dumps({{"backend": _kernels.BACKEND, "seconds": t}}))
"""


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_rows(impl, repeat):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 64, 64, 64)).astype(np.float32)
    cols = impl.im2col(x, 3, 1)
    y, arg = impl.maxpool2_forward(x)
    return {
        "im2col 4x64x64x64 k3": best(lambda: impl.im2col(x, 3, 1), repeat),
        "col2im 4x64x64x64 k3": best(lambda: impl.col2im(cols, 4, 64, 64, 64, 3, 1), repeat),
        "maxpool2 forward": best(lambda: impl.maxpool2_forward(x), repeat),
        "maxpool2 backward": best(lambda: impl.maxpool2_backward(y, arg), repeat),
    }


def train_step_time(pure: bool, repeat: int) -> dict:
    env = dict(os.environ)
    if pure:
        env["BDEKIT_PURE_PYTHON"] = "1"
    else:
        env.pop("BDEKIT_PURE_PYTHON", None)
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeat=repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()

    py = kernel_rows(_fallback, args.repeat)
    cy = kernel_rows(_core, args.repeat) if _core is not None else {}
    print(f"{'kernel':<24}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for name, t in py.items():
        c = cy.get(name)
        cs = f"{c * 1e3:14.2f}{t / c:9.1f}x" if c else f"{'n/a':>14}{'':>10}"
        print(f"{name:<24}{t * 1e3:12.2f}{cs}")

    print()
    rows = [train_step_time(True, args.repeat)]
    if _core is not None:
        rows.append(train_step_time(False, args.repeat))
    for r in rows:
        print(f"train step (16 filters, batch 4, 64x64), backend={r['backend']:<9} {r['seconds'] * 1e3:8.1f} ms")


if __name__ == "__main__":
    main()
