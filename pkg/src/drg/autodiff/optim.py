"""Named parameter collections with Adam state and EMA shadow copies."""
from __future__ import annotations

from typing import Dict, Iterable, Optional

import numpy as np

from ..errors import ConfigurationError, NumericError, UsageError
from .tensor import Tensor


class ParamStore:
    """Map of unique names to trainable tensors plus optimizer/EMA state."""

    def __init__(self):
        self.entries: Dict[str, Tensor] = {}
        self.adam_m: Dict[str, np.ndarray] = {}
        self.adam_v: Dict[str, np.ndarray] = {}
        self.step_count: int = 0
        self.ema_shadow: Dict[str, Tensor] = {}

    def register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.entries:
            raise UsageError(f"parameter '{name}' already registered")
        t = Tensor(data, requires_grad=True, dtype=np.asarray(data).dtype)
        self.entries[name] = t
        self.adam_m[name] = np.zeros_like(t.data)
        self.adam_v[name] = np.zeros_like(t.data)
        return t

    def init_ema(self, names: Optional[Iterable[str]] = None, prefix: str = "") -> None:
        """Create shadow copies (initialized to current values) for a subset."""
        if names is None:
            names = [n for n in self.entries if n.startswith(prefix)]
        for n in names:
            self.ema_shadow[n] = Tensor(self.entries[n].data.copy())

    def view(self, prefix: str = "") -> Dict[str, Tensor]:
        """Entries under `prefix`, keyed by their local name."""
        cut = len(prefix)
        return {n[cut:]: t for n, t in self.entries.items() if n.startswith(prefix)}

    def shadow_view(self, prefix: str = "") -> Dict[str, Tensor]:
        cut = len(prefix)
        return {n[cut:]: t for n, t in self.ema_shadow.items() if n.startswith(prefix)}

    def zero_grads(self) -> None:
        for t in self.entries.values():
            t.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for t in self.entries.values():
            if t.grad is not None:
                total += float(np.sum(np.square(t.grad, dtype=np.float64)))
        return float(np.sqrt(total))

    def num_params(self) -> int:
        return sum(t.size for t in self.entries.values())


def clip_grads_(store: ParamStore, max_norm: float) -> float:
    """Scale all grads so their global norm is at most max_norm; returns the pre-clip norm."""
    norm = store.grad_norm()
    if not np.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    if norm > max_norm > 0:
        scale = max_norm / norm
        for t in store.entries.values():
            if t.grad is not None:
                t.grad *= scale
    return norm


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update over every entry, in place. Grads are left untouched."""
    for name, t in store.entries.items():
        if t.grad is None:
            raise UsageError(f"adam_step: entry '{name}' has no gradient")
    store.step_count += 1
    tstep = store.step_count
    bc1 = 1.0 - beta1 ** tstep
    bc2 = 1.0 - beta2 ** tstep
    for name, t in store.entries.items():
        g = t.grad
        m = store.adam_m[name]
        v = store.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        t.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def ema_update(store: ParamStore, tau: float) -> None:
    """shadow <- (1 - tau) * shadow + tau * param for every shadowed entry."""
    if not (0.0 < tau <= 1.0):
        raise ConfigurationError(f"ema_update: tau must be in (0, 1], got {tau}")
    for name, shadow in store.ema_shadow.items():
        p = store.entries[name]
        shadow.data *= (1.0 - tau)
        shadow.data += tau * p.data
