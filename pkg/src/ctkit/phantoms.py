"""Ellipse phantoms rasterized at pixel centers.

Ellipse parameters live in normalized coordinates where the image spans
``[-1, 1]`` along its longer side.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ctkit.projection import ImageGrid

# intensity, semi-axis a, semi-axis b, center x, center y, rotation (degrees)
SHEPP_LOGAN = (
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)


class PhantomKind(str, Enum):
    SHEPP_LOGAN = "shepp"
    RANDOM_ELLIPSES = "ellipses"


@dataclass(frozen=True)
class PhantomSpec:
    kind: PhantomKind = PhantomKind.SHEPP_LOGAN
    size: int = 128
    n_ellipses: tuple[int, int] = (3, 8)
    attenuation: tuple[float, float] = (0.1, 0.6)
    clip_max: float = 1.0
    seed: int = 0
    pixel_size: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PhantomKind(self.kind))
        if self.size < 8:
            raise ValueError("phantom size must be >= 8")
        lo, hi = self.n_ellipses
        if lo < 0 or hi < lo:
            raise ValueError(f"bad n_ellipses range {self.n_ellipses}")


def pixel_coordinates(width: int, height: int | None = None):
    """Normalized ``(x, y)`` pixel-center grids, y pointing up."""
    height = width if height is None else height
    half = max(width, height) / 2.0
    x = (np.arange(width) - (width - 1) / 2.0) / half
    y = ((height - 1) / 2.0 - np.arange(height)) / half
    return np.meshgrid(x, y)


def rasterize_ellipses(table, width: int, height: int | None = None) -> np.ndarray:
    xx, yy = pixel_coordinates(width, height)
    img = np.zeros(xx.shape)
    for value, a, b, x0, y0, phi in table:
        t = np.deg2rad(phi)
        ct, st = np.cos(t), np.sin(t)
        dx, dy = xx - x0, yy - y0
        xr = dx * ct + dy * st
        yr = -dx * st + dy * ct
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    return img


def shepp_logan(size: int, pixel_size: float = 1.0) -> ImageGrid:
    """Modified (high-contrast) Shepp-Logan head phantom, values in [0, 1]."""
    img = rasterize_ellipses(SHEPP_LOGAN, size)
    # clean rounding residue from the additive table (1 - 0.8 - 0.2 etc.)
    img = np.clip(np.round(img, 12), 0.0, None)
    return ImageGrid(img, pixel_size)


def disk(size: int, radius: float, value: float = 1.0, pixel_size: float = 1.0,
         supersample: int = 1) -> ImageGrid:
    """Centered disk, ``radius`` in normalized units.

    ``supersample > 1`` averages sub-pixel samples for an anti-aliased edge.
    """
    k = supersample
    xx, yy = pixel_coordinates(size * k)
    inside = (xx**2 + yy**2 <= radius**2).astype(np.float64)
    img = inside.reshape(size, k, size, k).mean(axis=(1, 3)) * value
    return ImageGrid(img, pixel_size)


def random_ellipses_table(rng: np.random.Generator, n: int, attenuation=(0.1, 0.6)):
    """``n`` random ellipses fully inside the disk of radius 0.9."""
    table = []
    for _ in range(n):
        a, b = rng.uniform(0.05, 0.5, size=2)
        reach = max(a, b)
        r = rng.uniform(0.0, max(0.0, 0.9 - reach))
        ang = rng.uniform(0.0, 2 * np.pi)
        value = rng.uniform(*attenuation)
        table.append((value, a, b, r * np.cos(ang), r * np.sin(ang), rng.uniform(0.0, 180.0)))
    return table


def make_phantom(spec: PhantomSpec) -> ImageGrid:
    if spec.kind is PhantomKind.SHEPP_LOGAN:
        return shepp_logan(spec.size, spec.pixel_size)
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.n_ellipses
    n = int(rng.integers(lo, hi + 1))
    img = rasterize_ellipses(random_ellipses_table(rng, n, spec.attenuation), spec.size)
    return ImageGrid(np.clip(img, 0.0, spec.clip_max), spec.pixel_size)
