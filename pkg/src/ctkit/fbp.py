"""Filtered back projection with the band-limited Ram-Lak kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ctkit.projection import ImageGrid, Sinogram


class FilterKind(str, Enum):
    RAMLAK = "ramlak"
    HANN = "hann"


def next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


@dataclass(frozen=True)
class FilterSpec:
    kind: FilterKind = FilterKind.RAMLAK
    padded_length: int | None = None
    cutoff: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", FilterKind(self.kind))
        if not 0 < self.cutoff <= 1:
            raise ValueError(f"cutoff must be in (0, 1], got {self.cutoff}")
        L = self.padded_length
        if L is not None and (L < 2 or L & (L - 1)):
            raise ValueError(f"padded_length must be a power of two, got {L}")

    def length_for(self, n_detectors: int) -> int:
        """Padded FFT length for ``n_detectors`` bins."""
        minimum = next_pow2(2 * n_detectors)
        if self.padded_length is None:
            return minimum
        if self.padded_length < 2 * n_detectors:
            raise ValueError(f"padded_length {self.padded_length} < 2 * n_detectors ({2 * n_detectors})")
        return self.padded_length


def ramp_kernel(n: np.ndarray, spacing: float = 1.0) -> np.ndarray:
    """Band-limited spatial ramp kernel sampled at integer offsets ``n``."""
    n = np.asarray(n)
    h = np.zeros(n.shape)
    h[n == 0] = 1.0 / (4.0 * spacing**2)
    odd = (n % 2) == 1
    h[odd] = -1.0 / (np.pi**2 * n[odd].astype(np.float64) ** 2 * spacing**2)
    return h


def frequency_response(spec: FilterSpec, length: int, spacing: float = 1.0) -> np.ndarray:
    """rFFT of the circularly arranged kernel, optionally windowed."""
    offsets = np.fft.fftfreq(length, d=1.0 / length).astype(np.int64)
    response = np.fft.rfft(ramp_kernel(offsets, spacing)).real
    freq = np.fft.rfftfreq(length)  # cycles/sample, Nyquist = 0.5
    rel = freq / 0.5
    if spec.kind is FilterKind.HANN:
        window = np.where(rel <= spec.cutoff, 0.5 * (1.0 + np.cos(np.pi * rel / spec.cutoff)), 0.0)
    else:
        window = (rel <= spec.cutoff).astype(np.float64)
    return response * window


def filter_projections(sino: Sinogram, spec: FilterSpec = FilterSpec()) -> Sinogram:
    """Ramp-filter every projection row (zero-padded FFT convolution)."""
    geom = sino.geometry
    n = geom.n_detectors
    length = spec.length_for(n)
    response = frequency_response(spec, length, geom.detector_spacing)
    spectrum = np.fft.rfft(sino.data, n=length, axis=1)
    filtered = np.fft.irfft(spectrum * response, n=length, axis=1)[:, :n]
    return Sinogram(geom, filtered)


def pixel_backproject(sino: Sinogram) -> ImageGrid:
    """Pixel-driven backprojection, linear interpolation in ``s``.

    Each pixel center is projected onto the detector at every angle and the
    two neighbouring bins are blended; samples past the array ends are 0.
    """
    geom = sino.geometry
    g = geom.grid
    ps = g.pixel_size
    x = (np.arange(g.width) - (g.width - 1) / 2.0) * ps
    y = ((g.height - 1) / 2.0 - np.arange(g.height)) * ps
    n = geom.n_detectors
    padded = np.zeros((geom.n_angles, n + 2))
    padded[:, 1:-1] = sino.data
    out = np.zeros((g.height, g.width))
    for a, theta in enumerate(geom.angles):
        s = x[None, :] * math.cos(theta) + y[:, None] * math.sin(theta)
        u = s / geom.detector_spacing + (n - 1) / 2.0 + 1.0
        u = np.clip(u, 0.0, n + 1.0)
        lo = np.minimum(np.floor(u).astype(np.int64), n)
        frac = u - lo
        row = padded[a]
        out += row[lo] * (1.0 - frac) + row[lo + 1] * frac
    return ImageGrid(out, ps)


def fbp_reconstruct(sino: Sinogram, spec: FilterSpec = FilterSpec()) -> ImageGrid:
    """Analytic reconstruction: ramp filter, backproject, scale by pi/n_angles."""
    geom = sino.geometry
    filtered = filter_projections(sino, spec)
    bp = pixel_backproject(filtered)
    # discrete convolution sum needs the detector-spacing measure
    bp.data *= (math.pi / geom.n_angles) * geom.detector_spacing
    return bp

