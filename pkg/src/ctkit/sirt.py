"""SIRT: simultaneous update of all pixels from row/column-normalized
backprojected residuals."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from ctkit.projection import ImageGrid, Sinogram, back_project, forward_project

# sums at or below this multiple of the pixel size count as "no intersection"
_INACTIVE_RTOL = 1e-12


@dataclass
class SirtState:
    estimate: ImageGrid
    iteration: int
    residual_history: list[float]
    row_sums: np.ndarray
    col_sums: np.ndarray
    active_rays: np.ndarray = field(repr=False)
    active_pixels: np.ndarray = field(repr=False)

    @property
    def relative_residual(self) -> float:
        r0 = self.residual_history[0]
        return self.residual_history[-1] / r0 if r0 > 0 else 0.0

    def write_residual_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "residual"])
            for k, r in enumerate(self.residual_history):
                writer.writerow([k, repr(float(r))])


def _residual(sino: Sinogram, estimate: ImageGrid) -> np.ndarray:
    return sino.data - forward_project(estimate, sino.geometry).data


def sirt_init(sino: Sinogram) -> SirtState:
    geom = sino.geometry
    g = geom.grid
    ones_img = ImageGrid(np.ones((g.height, g.width)), g.pixel_size)
    row_sums = forward_project(ones_img, geom).data
    col_sums = back_project(Sinogram(geom, np.ones_like(sino.data))).data
    tol = _INACTIVE_RTOL * g.pixel_size
    estimate = ImageGrid.zeros(g)
    r0 = float(np.linalg.norm(_residual(sino, estimate)))
    return SirtState(estimate, 0, [r0], row_sums, col_sums, row_sums > tol, col_sums > tol)


def sirt_update(state: SirtState, sino: Sinogram) -> np.ndarray:
    """The additive pixel update for one iteration (before any prior)."""
    residual = _residual(sino, state.estimate)
    normalized = np.divide(residual, state.row_sums, out=np.zeros_like(residual),
                           where=state.active_rays)
    bp = back_project(Sinogram(sino.geometry, normalized)).data
    return np.divide(bp, state.col_sums, out=np.zeros_like(bp), where=state.active_pixels)


def sirt_step(state: SirtState, sino: Sinogram, nonneg: bool = False) -> SirtState:
    """One SIRT iteration; returns a new state, ``state`` is left untouched."""
    x = state.estimate.data + sirt_update(state, sino)
    if nonneg:
        np.maximum(x, 0.0, out=x)
    estimate = ImageGrid(x, state.estimate.pixel_size)
    r = float(np.linalg.norm(_residual(sino, estimate)))
    return replace(state, estimate=estimate, iteration=state.iteration + 1,
                   residual_history=state.residual_history + [r])


def sirt_reconstruct(sino: Sinogram, n_iter: int, nonneg: bool = False,
                     tol: float = 0.0) -> tuple[ImageGrid, SirtState]:
    """Run up to ``n_iter`` iterations, stopping early once the residual
    relative to the initial one drops below ``tol`` (0 disables)."""
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    state = sirt_init(sino)
    for _ in range(n_iter):
        state = sirt_step(state, sino, nonneg)
        if tol > 0 and state.relative_residual < tol:
            break
    return state.estimate, state
