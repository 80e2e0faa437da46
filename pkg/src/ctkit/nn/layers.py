"""Layers with hand-written forward/backward passes.

Activations are numpy arrays laid out ``(batch, channels, height, width)``
for convolutional layers and ``(batch, features)`` for dense layers.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np


class LayerKind(IntEnum):
    DENSE = 1
    CONV2D = 2
    RELU = 3
    LEAKY_RELU = 4
    ELU = 5
    CONCAT = 6
    RESHAPE = 7


class Layer:
    kind: LayerKind
    activation = False

    def __init__(self):
        self.params: list[np.ndarray] = []
        self.grads: list[np.ndarray] = []
        self._cache = None

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def zero_grad(self):
        for g in self.grads:
            g.fill(0)

    def astype(self, dtype):
        for i, p in enumerate(self.params):
            self.params[i] = p.astype(dtype)
            self.grads[i] = np.zeros_like(self.params[i])
        self._cache = None

    def clear_cache(self):
        self._cache = None

    def _cached(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a forward cache")
        return self._cache

    def describe(self) -> str:
        return type(self).__name__


class Dense(Layer):
    """Fully connected layer; inputs are flattened past the batch axis."""

    kind = LayerKind.DENSE

    def __init__(self, in_features: int, out_features: int, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.params = [np.zeros((out_features, in_features), dtype), np.zeros(out_features, dtype)]
        self.grads = [np.zeros_like(p) for p in self.params]

    @property
    def fan(self):
        return self.in_features, self.out_features

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_features:
            raise ValueError(f"{self.describe()}: expected {self.in_features} input features, got {flat.shape[1]}")
        self._cache = (flat, x.shape)
        w, b = self.params
        return flat @ w.T + b

    def backward(self, dy):
        flat, shape = self._cached()
        w, _ = self.params
        self.grads[0] += dy.T @ flat
        self.grads[1] += dy.sum(axis=0)
        return (dy @ w).reshape(shape)

    def describe(self):
        return f"Dense({self.in_features}->{self.out_features})"


class Conv2D(Layer):
    """Stride-1 convolution with "same" zero padding and optional dilation.

    Weights are ``(out_ch, in_ch, k, k)``. The forward pass contracts the
    channel axis first (one matmul over the padded input) and then sums the
    ``k*k`` shifted tap planes; the backward pass mirrors that order.
    """

    kind = LayerKind.CONV2D

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, dilation: int = 1, dtype=np.float32):
        super().__init__()
        if kernel not in (1, 3):
            raise ValueError("kernel must be 1 or 3")
        if dilation < 1:
            raise ValueError("dilation must be >= 1")
        self.in_ch, self.out_ch, self.kernel, self.dilation = in_ch, out_ch, kernel, dilation
        self.params = [np.zeros((out_ch, in_ch, kernel, kernel), dtype), np.zeros(out_ch, dtype)]
        self.grads = [np.zeros_like(p) for p in self.params]

    @property
    def fan(self):
        k2 = self.kernel**2
        return self.in_ch * k2, self.out_ch * k2

    @property
    def pad(self):
        return self.dilation * (self.kernel // 2)

    def _taps(self):
        d = self.dilation
        return [(ky * d, kx * d) for ky in range(self.kernel) for kx in range(self.kernel)]

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ValueError(f"{self.describe()}: expected (B, {self.in_ch}, H, W) input, got {x.shape}")
        B, C, H, W = x.shape
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        Hp, Wp = H + 2 * p, W + 2 * p
        self._cache = (xp, x.shape)
        w, b = self.params
        k2 = self.kernel**2
        # (O*k2, C) @ (B, C, Hp*Wp) -> (B, O*k2, Hp*Wp)
        wt = w.reshape(self.out_ch, C, k2).transpose(0, 2, 1).reshape(self.out_ch * k2, C)
        z = np.matmul(wt, xp.reshape(B, C, Hp * Wp)).reshape(B, self.out_ch, k2, Hp, Wp)
        out = np.zeros((B, self.out_ch, H, W), dtype=np.result_type(x, w))
        for t, (oy, ox) in enumerate(self._taps()):
            out += z[:, :, t, oy:oy + H, ox:ox + W]
        out += b[None, :, None, None]
        return out

    def backward(self, dy):
        xp, shape = self._cached()
        B, C, H, W = shape
        p = self.pad
        Hp, Wp = H + 2 * p, W + 2 * p
        k2 = self.kernel**2
        w = self.params[0]
        g = np.zeros((B, self.out_ch, k2, Hp, Wp), dtype=dy.dtype)
        for t, (oy, ox) in enumerate(self._taps()):
            g[:, :, t, oy:oy + H, ox:ox + W] = dy
        g = g.reshape(B, self.out_ch * k2, Hp * Wp)
        xf = xp.reshape(B, C, Hp * Wp)
        dw = np.matmul(g, xf.transpose(0, 2, 1)).sum(axis=0)  # (O*k2, C)
        self.grads[0] += dw.reshape(self.out_ch, k2, C).transpose(0, 2, 1).reshape(w.shape)
        self.grads[1] += dy.sum(axis=(0, 2, 3))
        wt = w.reshape(self.out_ch, C, k2).transpose(0, 2, 1).reshape(self.out_ch * k2, C)
        dxp = np.matmul(wt.T, g).reshape(B, C, Hp, Wp)
        return dxp[:, :, p:p + H, p:p + W] if p else dxp

    def describe(self):
        return f"Conv2D({self.in_ch}->{self.out_ch}, k={self.kernel}, d={self.dilation})"


class ReLU(Layer):
    kind = LayerKind.RELU
    activation = True

    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dy):
        return np.where(self._cached(), dy, 0).astype(dy.dtype, copy=False)


class LeakyReLU(Layer):
    """Derivative at exactly 0 is the negative-side slope."""

    kind = LayerKind.LEAKY_RELU
    activation = True

    def __init__(self, slope: float = 0.01):
        super().__init__()
        self.slope = slope

    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, self.slope * x).astype(x.dtype, copy=False)

    def backward(self, dy):
        return np.where(self._cached(), dy, self.slope * dy).astype(dy.dtype, copy=False)

    def describe(self):
        return f"LeakyReLU({self.slope})"


class ELU(Layer):
    """``alpha * (exp(x) - 1)`` for ``x <= 0``; derivative at 0 is ``alpha``."""

    kind = LayerKind.ELU
    activation = True

    def __init__(self, alpha: float = 1.0):
        super().__init__()
        self.alpha = alpha

    def forward(self, x):
        mask = x > 0
        neg = self.alpha * np.expm1(np.minimum(x, 0))
        self._cache = (mask, neg)
        return np.where(mask, x, neg).astype(x.dtype, copy=False)

    def backward(self, dy):
        mask, neg = self._cached()
        return np.where(mask, dy, dy * (neg + self.alpha)).astype(dy.dtype, copy=False)

    def describe(self):
        return f"ELU({self.alpha})"


class Concat(Layer):
    """Channel-axis concatenation of earlier layer outputs.

    ``sources`` are layer indices; ``-1`` denotes the network input.
    """

    kind = LayerKind.CONCAT

    def __init__(self, sources):
        super().__init__()
        self.sources = [int(s) for s in sources]
        if not self.sources:
            raise ValueError("Concat needs at least one source")

    def forward(self, xs):
        self._cache = [x.shape[1] for x in xs]
        return np.concatenate(xs, axis=1)

    def backward(self, dy):
        splits = np.cumsum(self._cached())[:-1]
        return np.split(dy, splits, axis=1)

    def describe(self):
        return f"Concat({self.sources})"


class Reshape(Layer):
    """Reshape everything past the batch axis to ``shape``."""

    kind = LayerKind.RESHAPE

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def forward(self, x):
        self._cache = x.shape
        try:
            return x.reshape((x.shape[0],) + self.shape)
        except ValueError:
            raise ValueError(f"{self.describe()}: cannot reshape input {x.shape}") from None

    def backward(self, dy):
        return dy.reshape(self._cached())

    def describe(self):
        return f"Reshape{self.shape}"
