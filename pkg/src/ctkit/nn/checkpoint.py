"""CTN1 model checkpoints.

Little-endian throughout: magic ``CTN1``, u32 layer count, then per layer
u32 kind tag, u32 attribute-block length, the attribute block, and the
layer's parameter tensors as (u32 rank, u32 dims..., float32 data).

Attribute blocks by kind:

* Dense: u32 in_features, u32 out_features
* Conv2D: u32 in_ch, u32 out_ch, u32 kernel, u32 dilation
* ReLU: empty
* LeakyReLU: f64 slope
* ELU: f64 alpha
* Concat: u32 count, then count i32 sources (-1 = network input)
* Reshape: u32 rank, then rank u32 dims
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from ctkit.nn.layers import ELU, Concat, Conv2D, Dense, LayerKind, LeakyReLU, ReLU, Reshape
from ctkit.nn.network import Network

MAGIC = b"CTN1"


class CheckpointError(ValueError):
    pass


def _attrs(layer) -> bytes:
    k = layer.kind
    if k is LayerKind.DENSE:
        return struct.pack("<II", layer.in_features, layer.out_features)
    if k is LayerKind.CONV2D:
        return struct.pack("<IIII", layer.in_ch, layer.out_ch, layer.kernel, layer.dilation)
    if k is LayerKind.LEAKY_RELU:
        return struct.pack("<d", layer.slope)
    if k is LayerKind.ELU:
        return struct.pack("<d", layer.alpha)
    if k is LayerKind.CONCAT:
        return struct.pack(f"<I{len(layer.sources)}i", len(layer.sources), *layer.sources)
    if k is LayerKind.RESHAPE:
        return struct.pack(f"<I{len(layer.shape)}I", len(layer.shape), *layer.shape)
    return b""


def network_bytes(net: Network) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        attrs = _attrs(layer)
        buf.write(struct.pack("<II", int(layer.kind), len(attrs)))
        buf.write(attrs)
        for p in layer.params:
            buf.write(struct.pack(f"<I{p.ndim}I", p.ndim, *p.shape))
            buf.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return buf.getvalue()


def save_network(path, net: Network) -> None:
    Path(path).write_bytes(network_bytes(net))


class _Reader:
    def __init__(self, raw: bytes, name):
        self.raw, self.pos, self.name = raw, 0, name

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise CheckpointError(f"{self.name}: truncated checkpoint")
        out = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return out

    def tensor(self):
        (rank,) = self.unpack("<I")
        dims = self.unpack(f"<{rank}I")
        n = int(np.prod(dims)) if dims else 1
        if self.pos + 4 * n > len(self.raw):
            raise CheckpointError(f"{self.name}: truncated checkpoint")
        data = np.frombuffer(self.raw, dtype="<f4", count=n, offset=self.pos)
        self.pos += 4 * n
        return data.reshape(dims).astype(np.float32)


def _build(kind, attrs: bytes):
    if kind is LayerKind.DENSE:
        return Dense(*struct.unpack("<II", attrs))
    if kind is LayerKind.CONV2D:
        i, o, k, d = struct.unpack("<IIII", attrs)
        return Conv2D(i, o, k, d)
    if kind is LayerKind.RELU:
        return ReLU()
    if kind is LayerKind.LEAKY_RELU:
        return LeakyReLU(struct.unpack("<d", attrs)[0])
    if kind is LayerKind.ELU:
        return ELU(struct.unpack("<d", attrs)[0])
    if kind is LayerKind.CONCAT:
        (n,) = struct.unpack_from("<I", attrs)
        return Concat(struct.unpack_from(f"<{n}i", attrs, 4))
    (rank,) = struct.unpack_from("<I", attrs)
    return Reshape(struct.unpack_from(f"<{rank}I", attrs, 4))


def load_network(path) -> Network:
    raw = Path(path).read_bytes()
    r = _Reader(raw, path)
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    r.pos = 4
    (n_layers,) = r.unpack("<I")
    layers = []
    for _ in range(n_layers):
        tag, n_attr = r.unpack("<II")
        try:
            kind = LayerKind(tag)
        except ValueError:
            raise CheckpointError(f"{path}: unknown layer kind {tag}") from None
        attrs = raw[r.pos:r.pos + n_attr]
        r.pos += n_attr
        try:
            layer = _build(kind, attrs)
        except struct.error as err:
            raise CheckpointError(f"{path}: bad attributes for {kind.name}: {err}") from None
        for i, p in enumerate(layer.params):
            t = r.tensor()
            if t.shape != p.shape:
                raise CheckpointError(f"{path}: {layer.describe()} tensor {i} has shape {t.shape}")
            layer.params[i] = t
            layer.grads[i] = np.zeros_like(t)
        layers.append(layer)
    if r.pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - r.pos} trailing bytes")
    return Network(layers)
