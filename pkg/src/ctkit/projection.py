"""Parallel-beam geometry, Joseph forward/back projection and photon-level
acquisition simulation.

Coordinate conventions
----------------------
The image center sits on the rotation axis and pixel ``(0, 0)`` is the
top-left pixel, so pixel ``(r, c)`` has its center at::

    x = (c - (W - 1) / 2) * pixel_size
    y = ((H - 1) / 2 - r) * pixel_size

A ray at angle ``theta`` travels along ``(-sin theta, cos theta)`` and its
detector coordinate ``s`` is measured along ``(cos theta, sin theta)``.
Detector bin ``i`` sits at ``s = (i - (n_detectors - 1) / 2) * spacing``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

# Rays are cached per geometry only below this many footprint samples.
_FOOTPRINT_CACHE_LIMIT = 4_000_000
SYSTEM_MATRIX_LIMIT = 2**26
ZERO_COUNT_CLAMP = 0.5


@dataclass(frozen=True)
class GridShape:
    """Image raster descriptor (dimensions and pixel size, no data)."""

    width: int
    height: int
    pixel_size: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid dimensions must be >= 1, got {self.width}x{self.height}")
        if not self.pixel_size > 0:
            raise ValueError(f"pixel_size must be > 0, got {self.pixel_size}")

    @property
    def n_pixels(self) -> int:
        return self.width * self.height


@dataclass
class ImageGrid:
    """Attenuation map on a square-pixel raster.

    ``data`` has shape ``(height, width)``, row 0 at the top.
    """

    data: np.ndarray
    pixel_size: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or min(self.data.shape) < 1:
            raise ValueError(f"image data must be a non-empty 2-D array, got shape {self.data.shape}")
        if not self.pixel_size > 0:
            raise ValueError(f"pixel_size must be > 0, got {self.pixel_size}")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def grid(self) -> GridShape:
        return GridShape(self.width, self.height, self.pixel_size)

    @classmethod
    def zeros(cls, grid: GridShape) -> "ImageGrid":
        return cls(np.zeros((grid.height, grid.width)), grid.pixel_size)


def default_detector_count(width: int, height: int) -> int:
    n = math.ceil(math.sqrt(2.0) * max(width, height))
    return n + (n % 2)


def equispaced_angles(n_angles: int) -> np.ndarray:
    """``n_angles`` equispaced angles in ``[0, pi)``."""
    if n_angles < 1:
        raise ValueError("n_angles must be >= 1")
    return np.arange(n_angles) * (np.pi / n_angles)


@dataclass(frozen=True, eq=False)
class ParallelGeometry:
    angles: np.ndarray
    n_detectors: int
    detector_spacing: float
    grid: GridShape
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        angles = np.array(self.angles, dtype=np.float64).reshape(-1)
        if angles.size < 1:
            raise ValueError("geometry needs at least one angle")
        if np.any(angles < 0) or np.any(angles >= np.pi):
            raise ValueError("angles must lie in [0, pi)")
        if np.any(np.diff(angles) <= 0):
            raise ValueError("angles must be strictly increasing")
        if self.n_detectors < 1:
            raise ValueError("n_detectors must be >= 1")
        if not self.detector_spacing > 0:
            raise ValueError("detector_spacing must be > 0")
        angles.setflags(write=False)
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "n_detectors", int(self.n_detectors))
        object.__setattr__(self, "detector_spacing", float(self.detector_spacing))

    @classmethod
    def create(cls, n_angles=None, width=128, height=None, pixel_size=1.0,
               n_detectors=None, detector_spacing=None, angles=None) -> "ParallelGeometry":
        """Build a geometry with the default detector layout.

        Either ``n_angles`` (equispaced in ``[0, pi)``) or an explicit
        ``angles`` array must be given.
        """
        height = width if height is None else height
        if angles is None:
            if n_angles is None:
                raise ValueError("give n_angles or angles")
            angles = equispaced_angles(n_angles)
        if n_detectors is None:
            n_detectors = default_detector_count(width, height)
        if detector_spacing is None:
            detector_spacing = pixel_size
        return cls(np.asarray(angles, dtype=np.float64), n_detectors, detector_spacing,
                   GridShape(width, height, pixel_size))

    @property
    def n_angles(self) -> int:
        return self.angles.size

    @property
    def n_rays(self) -> int:
        return self.n_angles * self.n_detectors

    @property
    def detector_positions(self) -> np.ndarray:
        return (np.arange(self.n_detectors) - (self.n_detectors - 1) / 2.0) * self.detector_spacing

    def same_as(self, other: "ParallelGeometry") -> bool:
        return (self.grid == other.grid and self.n_detectors == other.n_detectors
                and self.detector_spacing == other.detector_spacing
                and np.array_equal(self.angles, other.angles))


@dataclass
class Sinogram:
    """Projection values, shape ``(n_angles, n_detectors)``."""

    geometry: ParallelGeometry
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        expected = (self.geometry.n_angles, self.geometry.n_detectors)
        if self.data.shape != expected:
            raise ValueError(f"sinogram data shape {self.data.shape} does not match geometry {expected}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("sinogram contains non-finite values")


@dataclass
class IntensityRecord:
    geometry: ParallelGeometry
    i0: float
    counts: np.ndarray
    noisy: bool

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if not self.i0 > 0:
            raise ValueError("i0 must be > 0")
        expected = (self.geometry.n_angles, self.geometry.n_detectors)
        if self.counts.shape != expected:
            raise ValueError(f"counts shape {self.counts.shape} does not match geometry {expected}")


# ---------------------------------------------------------------------------
# Joseph ray model
# ---------------------------------------------------------------------------

def _angle_footprint(geom: ParallelGeometry, theta: float):
    """Interpolation footprint of every ray at one angle.

    Returns ``(pix0, pix1, w0, w1)``, each of shape ``(n_detectors, n_steps)``:
    the two pixels straddling the ray at each step along the dominant axis
    and their weights (step length times linear-interpolation factor).
    Pixels outside the grid carry weight 0 and a clipped, valid index.
    """
    g = geom.grid
    W, H, ps = g.width, g.height, g.pixel_size
    s = geom.detector_positions[:, None]
    c, sn = math.cos(theta), math.sin(theta)
    if abs(c) >= abs(sn):
        # one sample per image row, interpolate across columns
        y = ((H - 1) / 2.0 - np.arange(H)) * ps
        u = (s - y[None, :] * sn) / (ps * c) + (W - 1) / 2.0
        step = ps / abs(c)
        lo = np.floor(u)
        frac = u - lo
        lo = lo.astype(np.int64)
        hi = lo + 1
        rows = np.broadcast_to(np.arange(H)[None, :], lo.shape)
        ok0 = (lo >= 0) & (lo < W)
        ok1 = (hi >= 0) & (hi < W)
        pix0 = rows * W + np.clip(lo, 0, W - 1)
        pix1 = rows * W + np.clip(hi, 0, W - 1)
    else:
        # one sample per image column, interpolate across rows
        x = (np.arange(W) - (W - 1) / 2.0) * ps
        y = (s - x[None, :] * c) / sn
        v = (H - 1) / 2.0 - y / ps
        step = ps / abs(sn)
        lo = np.floor(v)
        frac = v - lo
        lo = lo.astype(np.int64)
        hi = lo + 1
        cols = np.broadcast_to(np.arange(W)[None, :], lo.shape)
        ok0 = (lo >= 0) & (lo < H)
        ok1 = (hi >= 0) & (hi < H)
        pix0 = np.clip(lo, 0, H - 1) * W + cols
        pix1 = np.clip(hi, 0, H - 1) * W + cols
    w0 = np.where(ok0, (1.0 - frac) * step, 0.0)
    w1 = np.where(ok1, frac * step, 0.0)
    return pix0, pix1, w0, w1


def _footprints(geom: ParallelGeometry):
    cached = geom._cache.get("footprints")
    if cached is not None:
        return cached
    fps = [_angle_footprint(geom, float(t)) for t in geom.angles]
    steps = max(geom.grid.width, geom.grid.height)
    if geom.n_rays * steps <= _FOOTPRINT_CACHE_LIMIT:
        geom._cache["footprints"] = fps
    return fps


def _check_image(image: ImageGrid, geom: ParallelGeometry):
    g = geom.grid
    if (image.width, image.height) != (g.width, g.height) or image.pixel_size != g.pixel_size:
        raise ValueError(
            f"image {image.width}x{image.height} (pixel_size {image.pixel_size}) does not match "
            f"geometry grid {g.width}x{g.height} (pixel_size {g.pixel_size})")


def forward_project(image: ImageGrid, geom: ParallelGeometry) -> Sinogram:
    """Line integrals of ``image`` along every ray of ``geom``."""
    _check_image(image, geom)
    flat = image.data.reshape(-1)
    out = np.empty((geom.n_angles, geom.n_detectors))
    for a, (pix0, pix1, w0, w1) in enumerate(_footprints(geom)):
        out[a] = (flat[pix0] * w0 + flat[pix1] * w1).sum(axis=1)
    return Sinogram(geom, out)


def back_project(sino: Sinogram) -> ImageGrid:
    """Exact adjoint of :func:`forward_project`."""
    geom = sino.geometry
    g = geom.grid
    n = g.n_pixels
    acc = np.zeros(n)
    for a, (pix0, pix1, w0, w1) in enumerate(_footprints(geom)):
        y = sino.data[a][:, None]
        acc += np.bincount(pix0.ravel(), (w0 * y).ravel(), minlength=n)
        acc += np.bincount(pix1.ravel(), (w1 * y).ravel(), minlength=n)
    return ImageGrid(acc.reshape(g.height, g.width), g.pixel_size)


# ---------------------------------------------------------------------------
# Explicit system matrix (oracle scale)
# ---------------------------------------------------------------------------

@dataclass
class SystemMatrix:
    """Sparse ``w_ij`` entries in coordinate form."""

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray

    def tocsr(self) -> scipy.sparse.csr_matrix:
        return scipy.sparse.csr_matrix((self.weights, (self.rows, self.cols)),
                                       shape=(self.n_rows, self.n_cols))

    def toarray(self) -> np.ndarray:
        dense = np.zeros((self.n_rows, self.n_cols))
        np.add.at(dense, (self.rows, self.cols), self.weights)
        return dense

    def apply(self, image: ImageGrid) -> np.ndarray:
        """Matrix-vector product; returns data shaped like a sinogram."""
        return self.tocsr() @ image.data.reshape(-1)

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows, self.weights, minlength=self.n_rows)

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.cols, self.weights, minlength=self.n_cols)


def build_system_matrix(geom: ParallelGeometry) -> SystemMatrix:
    """Enumerate the Joseph weights ray by ray.

    Walks each ray with scalar arithmetic, independently of the vectorized
    projector, so the two can check each other.
    """
    g = geom.grid
    W, H, ps = g.width, g.height, g.pixel_size
    n_rows, n_cols = geom.n_rays, g.n_pixels
    if n_rows * n_cols > SYSTEM_MATRIX_LIMIT:
        raise ValueError(
            f"system matrix would have {n_rows}x{n_cols} entries (limit {SYSTEM_MATRIX_LIMIT}); "
            "use the matrix-free forward_project/back_project instead")
    rows, cols, weights = [], [], []

    def emit(i, r, c, w):
        if w > 0 and 0 <= r < H and 0 <= c < W:
            rows.append(i)
            cols.append(r * W + c)
            weights.append(w)

    positions = geom.detector_positions
    for a, theta in enumerate(geom.angles):
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        for d, s in enumerate(positions):
            i = a * geom.n_detectors + d
            if abs(cos_t) >= abs(sin_t):
                step = ps / abs(cos_t)
                for r in range(H):
                    y = ((H - 1) / 2.0 - r) * ps
                    u = (s - y * sin_t) / (ps * cos_t) + (W - 1) / 2.0
                    c0 = math.floor(u)
                    f = u - c0
                    emit(i, r, c0, (1.0 - f) * step)
                    emit(i, r, c0 + 1, f * step)
            else:
                step = ps / abs(sin_t)
                for c in range(W):
                    x = (c - (W - 1) / 2.0) * ps
                    v = (H - 1) / 2.0 - (s - x * cos_t) / sin_t / ps
                    r0 = math.floor(v)
                    f = v - r0
                    emit(i, r0, c, (1.0 - f) * step)
                    emit(i, r0 + 1, c, f * step)
    return SystemMatrix(n_rows, n_cols, np.asarray(rows, dtype=np.int64),
                        np.asarray(cols, dtype=np.int64), np.asarray(weights, dtype=np.float64))


# ---------------------------------------------------------------------------
# Acquisition
# ---------------------------------------------------------------------------

def simulate_intensity(sino: Sinogram, i0: float, noisy: bool = False, seed: int = 0) -> IntensityRecord:
    """Detected photon counts ``i0 * exp(-p)``, optionally Poisson-sampled.

    Zero-count bins in noisy mode are set to ``ZERO_COUNT_CLAMP`` so the
    log-normalization stays defined.
    """
    if not i0 > 0:
        raise ValueError("i0 must be > 0")
    if np.any(sino.data < 0):
        raise ValueError("sinogram has negative line integrals; attenuation must be nonnegative")
    mean = i0 * np.exp(-sino.data)
    if noisy:
        rng = np.random.default_rng(seed)
        counts = rng.poisson(mean).astype(np.float64)
        counts[counts == 0] = ZERO_COUNT_CLAMP
    else:
        counts = mean
    return IntensityRecord(sino.geometry, float(i0), counts, bool(noisy))


def log_normalize(rec: IntensityRecord) -> Sinogram:
    if np.any(rec.counts <= 0):
        raise ValueError("intensity record holds nonpositive counts")
    return Sinogram(rec.geometry, -np.log(rec.counts / rec.i0))
