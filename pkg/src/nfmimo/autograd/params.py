"""
Named parameter storage, SGD with momentum, and the checkpoint file format.

Checkpoint layout (little endian)::

    b"NFPT" | u32 version=1 | u32 record_count
    record_count x ( u16 path_len | path utf-8 | u8 itemsize (4|8) | u8 ndim
                     | ndim x u32 extent | raw floats, row-major )

Records are written in insertion order, so save -> load -> save is byte-exact.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .tensor import Tensor, get_default_dtype

CKPT_MAGIC = b"NFPT"
CKPT_VERSION = 1


class ParamStore:
    """Ordered mapping ``"a.b.c" -> Tensor`` plus optimizer momentum buffers."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self.momentum: dict[str, np.ndarray] = {}

    def add(self, path: str, value) -> Tensor:
        if path in self._params:
            raise KeyError(f"duplicate parameter path {path!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
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

    def scope(self, prefix: str) -> "Scope":
        return Scope(self, prefix)

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def astype(self, dtype) -> "ParamStore":
        """Copy with every parameter cast to ``dtype`` (momentum buffers are dropped)."""
        out = ParamStore()
        for k, t in self._params.items():
            out.add(k, Tensor(t.data, dtype=dtype))
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, t in self._params.items():
            out.add(k, Tensor(t.data.copy(), dtype=t.data.dtype))
        return out


class Scope:
    """Prefix view into a :class:`ParamStore` (``scope["w"]`` -> ``store["prefix.w"]``)."""

    def __init__(self, store: ParamStore, prefix: str):
        self.store = store
        self.prefix = prefix

    def _key(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def __getitem__(self, name: str) -> Tensor:
        return self.store[self._key(name)]

    def add(self, name: str, value) -> Tensor:
        return self.store.add(self._key(name), value)

    def scope(self, name: str) -> "Scope":
        return Scope(self.store, self._key(name))


def conv_init(rng: np.random.Generator, k: int, cin_per_group: int, cout: int) -> np.ndarray:
    """Fan-in scaled uniform init, unit-variance preserving: ``U(-sqrt(3/fan_in), +)``."""
    fan_in = k * k * cin_per_group
    bound = np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=(k, k, cin_per_group, cout)).astype(get_default_dtype())


def sgd_momentum_step(store: ParamStore, lr: float, momentum: float = 0.9, weight_decay: float = 0.0) -> None:
    """``g <- g + wd * w; v <- mu * v + g; w <- w - lr * v`` for every parameter, in place."""
    for path, t in store.items():
        if t.grad is None:
            raise RuntimeError(f"parameter {path!r} has no gradient; run backward() first")
        g = t.grad
        if weight_decay:
            g = g + weight_decay * t.data
        v = store.momentum.get(path)
        if v is None:
            v = np.zeros_like(t.data)
        v = momentum * v + g
        store.momentum[path] = v
        t.data -= (lr * v).astype(t.data.dtype, copy=False)


def clip_grad_norm(store: ParamStore, max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``; returns the norm before clipping."""
    total = 0.0
    for path, t in store.items():
        if t.grad is None:
            raise RuntimeError(f"parameter {path!r} has no gradient; run backward() first")
        total += float(np.sum(np.square(t.grad, dtype=np.float64)))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        f = max_norm / norm
        for _, t in store.items():
            t.grad = (t.grad * f).astype(t.grad.dtype, copy=False)
    return norm


def save_checkpoint(store: ParamStore, path) -> None:
    chunks = [struct.pack("<4sII", CKPT_MAGIC, CKPT_VERSION, len(store))]
    for name, t in store.items():
        raw_name = name.encode("utf-8")
        data = t.data
        itemsize = data.dtype.itemsize
        if itemsize not in (4, 8):
            raise ValueError(f"unsupported dtype {data.dtype} for {name!r}")
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<BB", itemsize, data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.astype(f"<f{itemsize}").tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> ParamStore:
    raw = Path(path).read_bytes()
    magic, version, count = struct.unpack_from("<4sII", raw, 0)
    if magic != CKPT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    store = ParamStore()
    for _ in range(count):
        (n,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + n].decode("utf-8")
        off += n
        itemsize, ndim = struct.unpack_from("<BB", raw, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype=f"<f{itemsize}", count=size, offset=off).reshape(shape)
        off += size * itemsize
        store.add(name, Tensor(arr.copy(), dtype=arr.dtype.newbyteorder("=")))
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return store
