"""Parameter storage, initialization and the Adam optimizer."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from bdekit.errors import InvalidInputError
from bdekit.nn.tensor import Tensor


class ParamStore:
    """Ordered mapping from dotted parameter path to a leaf :class:`Tensor`."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, path: str, value) -> Tensor:
        if path in self._params:
            raise InvalidInputError(f"duplicate parameter path {path!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=path)
        self._params[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def paths(self) -> list[str]:
        return list(self._params)

    def num_elements(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def clear_grad(self):
        for t in self._params.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise InvalidInputError(
                f"parameter set mismatch: missing={sorted(missing)} unexpected={sorted(extra)}"
            )
        for k, t in self._params.items():
            arr = np.asarray(state[k])
            if arr.shape != t.data.shape:
                raise InvalidInputError(f"{k}: shape {arr.shape} != {t.data.shape}")
            t.data = arr.astype(self.dtype, copy=True)

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype)
        for k, t in self._params.items():
            out.add(k, t.data)
        return out


def conv_params(store: ParamStore, prefix: str, c_in: int, c_out: int, k: int,
                rng: np.random.Generator):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias."""
    bound = 1.0 / math.sqrt(c_in * k * k)
    store.add(prefix + ".weight", rng.uniform(-bound, bound, size=(c_out, c_in, k, k)))
    store.add(prefix + ".bias", np.zeros(c_out))


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState) -> None:
    """One bias-corrected Adam update, in place."""
    for path, p in params.items():
        if p.grad is None:
            raise InvalidInputError(f"parameter {path!r} has no gradient; call zero_grad() first")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for path, p in params.items():
        g = p.grad
        if path not in state.m:
            state.m[path] = np.zeros_like(p.data)
            state.v[path] = np.zeros_like(p.data)
        m, v = state.m[path], state.v[path]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if state.lr == 0.0:
            continue
        update = (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
        p.data -= update.astype(p.data.dtype)
