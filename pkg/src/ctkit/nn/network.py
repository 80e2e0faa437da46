from __future__ import annotations

import numpy as np

from ctkit.nn.layers import Concat, Layer


class Network:
    """Layers evaluated in list order.

    Every layer consumes the output of the layer before it (the network
    input for layer 0) except :class:`Concat`, which names its sources
    explicitly. The last layer's output is the network output.
    """

    def __init__(self, layers: list[Layer], debug: bool = False):
        self.layers = list(layers)
        self.debug = debug
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Concat):
                bad = [s for s in layer.sources if not -1 <= s < i]
                if bad:
                    raise ValueError(f"layer {i} {layer.describe()}: sources {bad} are not earlier layers")
        self._has_cache = False

    def inputs_of(self, i: int) -> list[int]:
        layer = self.layers[i]
        return layer.sources if isinstance(layer, Concat) else [i - 1]

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    @property
    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads]

    @property
    def dtype(self):
        ps = self.params
        return ps[0].dtype if ps else np.dtype(np.float32)

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def astype(self, dtype) -> "Network":
        for layer in self.layers:
            layer.astype(dtype)
        self._has_cache = False
        return self

    def initialize(self, rng: np.random.Generator) -> "Network":
        """He-uniform init before ReLU-family layers, Glorot-uniform otherwise;
        zero biases."""
        for i, layer in enumerate(self.layers):
            if not layer.params:
                continue
            fan_in, fan_out = layer.fan
            nxt = self.layers[i + 1] if i + 1 < len(self.layers) else None
            if nxt is not None and nxt.activation:
                limit = np.sqrt(6.0 / fan_in)
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
            w, b = layer.params
            w[...] = rng.uniform(-limit, limit, size=w.shape)
            b[...] = 0
        return self

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        outputs: list[np.ndarray] = []
        for i, layer in enumerate(self.layers):
            srcs = [x if s == -1 else outputs[s] for s in self.inputs_of(i)]
            try:
                y = layer.forward(srcs if isinstance(layer, Concat) else srcs[0])
            except ValueError as err:
                raise ValueError(f"layer {i}: {err}") from None
            if self.debug and not np.all(np.isfinite(y)):
                raise FloatingPointError(f"layer {i} {layer.describe()} produced non-finite values")
            outputs.append(y)
        self._has_cache = True
        return outputs[-1]

    __call__ = forward

    def backward(self, loss_grad: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; returns the input gradient."""
        if not self._has_cache:
            raise RuntimeError("backward called before forward")
        n = len(self.layers)
        upstream: list[np.ndarray | None] = [None] * n
        upstream[-1] = loss_grad
        dx = None
        for i in range(n - 1, -1, -1):
            dy = upstream[i]
            upstream[i] = None
            if dy is None:
                continue
            grads_in = self.layers[i].backward(dy)
            srcs = self.inputs_of(i)
            if not isinstance(self.layers[i], Concat):
                grads_in = [grads_in]
            for s, g in zip(srcs, grads_in):
                if s == -1:
                    dx = g if dx is None else dx + g
                elif upstream[s] is None:
                    upstream[s] = g
                else:
                    upstream[s] = upstream[s] + g
        return dx

    def clear_cache(self):
        for layer in self.layers:
            layer.clear_cache()
        self._has_cache = False

    def predict(self, x: np.ndarray, batch: int = 8) -> np.ndarray:
        """Forward pass in chunks without keeping caches."""
        outs = [self.forward(x[i:i + batch]) for i in range(0, len(x), batch)]
        self.clear_cache()
        return np.concatenate(outs, axis=0)

    def summary(self) -> str:
        lines = [f"{i:3d} {layer.describe()}  <- {self.inputs_of(i)}" for i, layer in enumerate(self.layers)]
        lines.append(f"params: {self.n_params()}")
        return "\n".join(lines)
