"""Layers, parameter storage, checkpoints and optimizers."""

from __future__ import annotations

import math
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Iterator

import numpy as np

from . import tensor as T
from .io import atomic_write_bytes
from .tensor import Tensor

MAGIC = b"VQCTTNSR"
FORMAT_VERSION = 1


class MissingGradientError(RuntimeError):
    """A registered parameter had no gradient when the optimizer stepped."""


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Binary tensor container
# ---------------------------------------------------------------------------


def encode_tensors(entries: "dict[str, np.ndarray]") -> bytes:
    """Serialize named float64 arrays.

    Layout: magic, u32 version, u32 count, then per entry u32 name length,
    UTF-8 name, u32 rank, u64 dims, little-endian float64 payload.
    """
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr, dtype="<f8")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode_tensors(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a tensor container (bad magic)")
    pos = len(MAGIC)
    try:
        version, count = struct.unpack_from("<II", blob, pos)
        pos += 8
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported container version {version}")
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            n = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * n > len(blob):
                raise CheckpointError(f"truncated payload for entry {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos) \
                .reshape(dims).astype(np.float64)
            pos += 8 * n
    except struct.error as exc:
        raise CheckpointError("truncated tensor container") from exc
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last entry")
    return out


def save_tensors(path, entries: "dict[str, np.ndarray]") -> None:
    atomic_write_bytes(path, encode_tensors(entries))


def load_tensors(path) -> "OrderedDict[str, np.ndarray]":
    return decode_tensors(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


class ParamStore:
    """Ordered mapping of hierarchical names to trainable tensors."""

    def __init__(self):
        self._entries: OrderedDict[str, Tensor] = OrderedDict()

    def register(self, name: str, value) -> Tensor:
        if name in self._entries:
            raise KeyError(f"parameter {name!r} already registered")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def with_prefix(self, prefix: str) -> "list[tuple[str, Tensor]]":
        return [(k, v) for k, v in self._entries.items() if k.startswith(prefix)]

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self._entries.items())

    def load_state_dict(self, state: "dict[str, np.ndarray]") -> None:
        missing = [k for k in self._entries if k not in state]
        if missing:
            raise CheckpointError(f"checkpoint lacks parameters: {missing}")
        for k, t in self._entries.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise CheckpointError(f"{k}: shape {arr.shape} != expected {t.shape}")
            t.data = arr.copy()

    def save(self, path) -> None:
        save_tensors(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state_dict(load_tensors(path))


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class GraphConvLayer:
    """``a_hat @ h @ W + b``; the caller applies the activation."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator):
        self.d_in, self.d_out = d_in, d_out
        self.weight = store.register(f"{name}.weight",
                                     glorot_uniform(rng, (d_in, d_out), d_in, d_out))
        self.bias = store.register(f"{name}.bias", np.zeros(d_out))

    def __call__(self, a_hat, h: Tensor) -> Tensor:
        return graph_conv_forward(self, a_hat, h)


def graph_conv_forward(layer: GraphConvLayer, a_hat, h: Tensor) -> Tensor:
    mat = getattr(a_hat, "matrix", a_hat)
    if h.data.ndim != 2 or h.shape[1] != layer.d_in:
        raise T.ShapeError(f"graph conv expects N x {layer.d_in} features, got {h.shape}")
    if mat.shape != (h.shape[0], h.shape[0]):
        raise T.ShapeError(f"adjacency {mat.shape} does not match {h.shape[0]} nodes")
    # (A H) W has the same value as A (H W); propagate first when it is narrower.
    if layer.d_in <= layer.d_out:
        out = T.matmul(T.spmm(mat, h), layer.weight)
    else:
        out = T.spmm(mat, T.matmul(h, layer.weight))
    return T.add_bias(out, layer.bias)


class Conv2d:
    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, k: int,
                 rng: np.random.Generator, stride: int = 1, padding: int | None = None):
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.kernel = store.register(
            f"{name}.kernel",
            glorot_uniform(rng, (c_out, c_in, k, k), c_in * k * k, c_out * k * k))
        self.bias = store.register(f"{name}.bias", np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add_bias(T.conv2d(x, self.kernel, self.stride, self.padding), self.bias)


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


class Optimizer:
    kind = "base"

    def __init__(self, lr: float, max_grad_norm: float | None = None):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = float(lr)
        self.max_grad_norm = max_grad_norm
        self.steps = 0

    def _grads(self, params: ParamStore) -> "dict[str, np.ndarray]":
        grads = {}
        for name, p in params.items():
            if p.grad is None:
                raise MissingGradientError(f"parameter {name!r} has no gradient")
            grads[name] = p.grad
        if self.max_grad_norm is not None:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > self.max_grad_norm:
                factor = self.max_grad_norm / norm
                grads = {k: g * factor for k, g in grads.items()}
        return grads

    def step(self, params: ParamStore) -> None:
        grads = self._grads(params)
        self.steps += 1
        for name, p in params.items():
            p.data = self._update(name, p.data, grads[name])
        params.zero_grad()

    def _update(self, name: str, value: np.ndarray, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict([("optim.steps", np.array([float(self.steps)]))])

    def load_state_dict(self, state: "dict[str, np.ndarray]") -> None:
        self.steps = int(state["optim.steps"][0])


class SGD(Optimizer):
    kind = "sgd"

    def _update(self, name, value, grad):
        return value - self.lr * grad


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, max_grad_norm: float | None = None):
        super().__init__(lr, max_grad_norm)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def _update(self, name, value, grad):
        m = self.m.get(name)
        v = self.v.get(name)
        if m is None:
            m = np.zeros_like(value)
            v = np.zeros_like(value)
        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        self.m[name], self.v[name] = m, v
        m_hat = m / (1.0 - self.beta1 ** self.steps)
        v_hat = v / (1.0 - self.beta2 ** self.steps)
        return value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self):
        state = super().state_dict()
        for name in self.m:
            state[f"optim.m.{name}"] = self.m[name].copy()
            state[f"optim.v.{name}"] = self.v[name].copy()
        return state

    def load_state_dict(self, state):
        super().load_state_dict(state)
        self.m = {k[len("optim.m."):]: v.copy() for k, v in state.items()
                  if k.startswith("optim.m.")}
        self.v = {k[len("optim.v."):]: v.copy() for k, v in state.items()
                  if k.startswith("optim.v.")}


def make_optimizer(kind: str, lr: float, max_grad_norm: float | None = None) -> Optimizer:
    if kind == "adam":
        return Adam(lr, max_grad_norm=max_grad_norm)
    if kind == "sgd":
        return SGD(lr, max_grad_norm=max_grad_norm)
    raise ValueError(f"unknown optimizer {kind!r}")
