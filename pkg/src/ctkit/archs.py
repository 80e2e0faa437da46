"""The two network families compared in the low-dose experiments, and exact
parameter/memory arithmetic for both."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from ctkit.nn import Concat, Conv2D, Dense, Network, ReLU, Reshape


@dataclass(frozen=True)
class DenoiserArch:
    """Mixed-scale dense denoiser.

    ``depth`` dilated 3x3 convolutions with one output channel each; layer
    ``i`` sees the input plus every earlier layer output and uses dilation
    ``(i mod dilation_cycle) + 1``. A 1x1 convolution over all channels
    produces the output.
    """

    depth: int = 32
    dilation_cycle: int = 10

    def dilation(self, i: int) -> int:
        return (i % self.dilation_cycle) + 1

    def total_params(self) -> int:
        d = self.depth
        hidden = 9 * d * (d + 1) // 2 + d  # layer i: 9*(i+1) weights + 1 bias
        return hidden + (d + 1) + 1

    def build(self) -> Network:
        layers = [Conv2D(1, 1, 3, self.dilation(0)), ReLU()]
        features = [1]  # indices of ReLU outputs
        for i in range(1, self.depth):
            layers.append(Concat([-1] + features))
            layers.append(Conv2D(i + 1, 1, 3, self.dilation(i)))
            layers.append(ReLU())
            features.append(len(layers) - 1)
        layers.append(Concat([-1] + features))
        layers.append(Conv2D(self.depth + 1, 1, 1, 1))
        return Network(layers)


@dataclass(frozen=True)
class AutomapArch:
    """Sinogram-to-image network fronted by two fully connected layers.

    flatten(n_angles*n_detectors) -> Dense N^2 -> Dense N^2 -> N x N ->
    3x3 conv -> 3x3 conv -> 1x1 output conv, ReLU after every hidden layer.
    """

    n_detectors: int
    n_angles: int
    image: int
    channels: int = 64

    @property
    def n_inputs(self) -> int:
        return self.n_angles * self.n_detectors

    def dense_params(self) -> int:
        n2 = self.image * self.image
        return self.n_inputs * n2 + n2 * n2

    def total_params(self) -> int:
        n2 = self.image * self.image
        c = self.channels
        dense = self.dense_params() + 2 * n2
        convs = (9 * c + c) + (9 * c * c + c) + (c + 1)
        return dense + convs

    def build(self) -> Network:
        n, c = self.image, self.channels
        return Network([
            Dense(self.n_inputs, n * n), ReLU(),
            Dense(n * n, n * n), ReLU(),
            Reshape((1, n, n)),
            Conv2D(1, c, 3), ReLU(),
            Conv2D(c, c, 3), ReLU(),
            Conv2D(c, 1, 1),
        ])


class ParamEstimate(NamedTuple):
    params: int
    memory_bytes: int


def estimate_params(arch, bytes_per_param: int = 4) -> ParamEstimate:
    """Learnable-parameter count and storage size, in exact integers.

    For :class:`AutomapArch` the count is the weights of the two fully
    connected layers, which dominate the model; use ``total_params()`` for
    the full figure.
    """
    if isinstance(arch, AutomapArch):
        n = arch.dense_params()
    elif isinstance(arch, DenoiserArch):
        n = arch.total_params()
    else:
        raise TypeError(f"no parameter estimate for {type(arch).__name__}")
    return ParamEstimate(n, n * int(bytes_per_param))
