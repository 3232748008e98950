"""Tape-based reverse-mode autodiff over dense numpy arrays.

A single ambient tape records operations in execution order; backward walks it
in strict reverse order, which is a valid topological order by construction.
The tape is meant to be cleared once per training step (reset_tape). Graph
recording is single-threaded; tensors detached from the graph may cross
threads.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import NumericError, UsageError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True
_FINITE_CHECKS = True


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise UsageError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


def set_finite_checks(enabled: bool) -> None:
    """Toggle the per-op NaN/Inf guard (on by default)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def finite_checks_enabled() -> bool:
    return _FINITE_CHECKS


class Tensor:
    """Dense array plus optional gradient and graph back-reference."""

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            # ndarray float inputs keep their precision; everything else
            # (python scalars, lists, ints) takes the ambient default
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = _DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node: Optional[Node] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={'set' if self.grad is not None else 'none'})"

    # Arithmetic operators are attached by ops.py to avoid a circular import.


class Node:
    """One recorded operation: inputs, output, and its local gradient rule."""

    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: Sequence[Tensor], output: Tensor,
                 backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Append-only op record; reverse append order is the backward order."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[Node] = []

    def clear(self) -> None:
        self.nodes.clear()


_TAPE = Tape()


def tape() -> Tape:
    return _TAPE


def reset_tape() -> None:
    """Drop all recorded nodes; call once per training step."""
    _TAPE.clear()


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def make_output(op: str, data: np.ndarray, inputs: Sequence[Tensor],
                backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Wrap an op result, guard for non-finite values, and record the node."""
    if _FINITE_CHECKS:
        # a float64 sum is NaN/Inf iff the array holds a non-finite value
        # (float32 payloads cannot overflow the float64 accumulator), and it
        # avoids allocating an isfinite mask on every op
        total = float(data.sum(dtype=np.float64))
        if total != total or total in (float("inf"), float("-inf")):
            if not np.all(np.isfinite(data)):
                raise NumericError(f"non-finite output in op '{op}'")
    out = Tensor(data, dtype=data.dtype)
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(op, inputs, out, backward_fn)
        out.node = node
        _TAPE.nodes.append(node)
    return out


def backward(loss: Tensor) -> None:
    """Populate .grad on every leaf parameter reachable from `loss`.

    The loss gradient is seeded with 1. Repeated calls accumulate additively
    into leaf .grad fields; intermediate flow-through gradients are kept in a
    scratch map so re-running backward doubles leaf grads exactly.
    """
    if loss.size != 1:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.shape}")
    # id -> accumulated upstream gradient for tensors produced by ops
    flow: dict[int, np.ndarray] = {}

    def leaf_accumulate(t: Tensor, g: np.ndarray) -> None:
        if t.grad is None:
            t.grad = g.astype(t.data.dtype, copy=True)
        else:
            t.grad += g

    seed = np.ones_like(loss.data)
    if loss.node is None:
        if loss.requires_grad:
            leaf_accumulate(loss, seed)
        return
    flow[id(loss)] = seed
    for node in reversed(_TAPE.nodes):
        out_grad = flow.pop(id(node.output), None)
        if out_grad is None:
            continue
        grads = node.backward_fn(out_grad)
        for t, g in zip(node.inputs, grads):
            if g is None or not t.requires_grad:
                continue
            if t.node is None:
                leaf_accumulate(t, g)
            else:
                prev = flow.get(id(t))
                flow[id(t)] = g if prev is None else prev + g
