"""Parameter containers shared by both branches, plus initializers."""

from __future__ import annotations

from dataclasses import dataclass, fields, is_dataclass
from typing import Iterator

import numpy as np

from .tensor import BatchNormState, Tensor


def kaiming_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> Tensor:
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


@dataclass
class Conv:
    """Kernel and bias of a 1-D (transposed) convolution."""

    weight: Tensor
    bias: Tensor

    @classmethod
    def kaiming(cls, rng, shape, fan_in: int, n_out: int, dtype=np.float32) -> "Conv":
        return cls(kaiming_normal(rng, shape, fan_in, dtype), zeros(n_out, dtype))


@dataclass
class Affine:
    """``x @ weight + bias`` with ``weight[in, out]``."""

    weight: Tensor
    bias: Tensor

    @classmethod
    def xavier(cls, rng, n_in: int, n_out: int, dtype=np.float32) -> "Affine":
        return cls(xavier_uniform(rng, (n_in, n_out), n_in, n_out, dtype), zeros(n_out, dtype))


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk dataclasses and lists, yielding every Tensor with a dotted name."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif is_dataclass(obj):
        for f in fields(obj):
            yield from named_tensors(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_tensors(item, f"{prefix}.{i}" if prefix else str(i))


def named_states(obj, prefix: str = "") -> Iterator[tuple[str, BatchNormState]]:
    if isinstance(obj, BatchNormState):
        yield prefix, obj
    elif is_dataclass(obj):
        for f in fields(obj):
            yield from named_states(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_states(item, f"{prefix}.{i}" if prefix else str(i))


def count(obj) -> int:
    return sum(t.size for _, t in named_tensors(obj))


def state_dict(obj) -> dict[str, np.ndarray]:
    """Copies of every tensor and batch-norm running statistic."""
    out = {name: t.data.copy() for name, t in named_tensors(obj)}
    for name, st in named_states(obj):
        out[f"{name}.running_mean"] = st.running_mean.copy()
        out[f"{name}.running_var"] = st.running_var.copy()
    return out


def load_state_dict(obj, sd: dict[str, np.ndarray]) -> None:
    for name, t in named_tensors(obj):
        if sd[name].shape != t.shape:
            raise ValueError(f"{name}: stored shape {sd[name].shape} != {t.shape}")
        t.data = sd[name].copy()
    for name, st in named_states(obj):
        st.running_mean = sd[f"{name}.running_mean"].copy()
        st.running_var = sd[f"{name}.running_var"].copy()


def cast(obj, dtype) -> None:
    """Convert every tensor and running statistic to ``dtype`` in place."""
    for _, t in named_tensors(obj):
        t.data = t.data.astype(dtype)
    for _, st in named_states(obj):
        st.running_mean = st.running_mean.astype(dtype)
        st.running_var = st.running_var.astype(dtype)
