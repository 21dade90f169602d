"""Named parameter store, bias-corrected Adam, and the step decay schedule."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class ParamStore:
    """Parameters by name plus per-parameter Adam moment accumulators.

    Updates iterate names in sorted order so results never depend on
    insertion order.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, values, dtype=np.float32) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(values, dtype=dtype), requires_grad=True)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def zero_grads(self):
        for t in self._params.values():
            t.zero_grad()

    def arrays(self) -> dict[str, np.ndarray]:
        """Name -> parameter values, for checkpointing."""
        return {n: self._params[n].data.copy() for n in self.names()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, t in self._params.items():
            arr = np.asarray(arrays[name], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(f"parameter {name!r}: shape {arr.shape} does not match {t.data.shape}")
            t.data = arr.copy()


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; gradients are left for the caller to clear."""
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name in store.names():
        p = store[name]
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        g = p.grad
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


def step_lr(epoch: int, base_lr: float, step_size: int = 30, gamma: float = 0.5) -> float:
    """base_lr * gamma^floor(epoch / step_size)."""
    if step_size < 1:
        raise ValueError(f"step_size must be >= 1, got {step_size}")
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    return base_lr * gamma ** (epoch // step_size)
