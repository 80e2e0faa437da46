"""Training loops for the FBP post-processing denoiser and the end-to-end
sinogram-to-image network."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ctkit.archs import AutomapArch, DenoiserArch, estimate_params
from ctkit.dataset import FIELD_OF_VIEW, DatasetManifest
from ctkit.nn import AdamState, Network, adam_step, mse_loss, save_network
from ctkit.projection import ImageGrid, ParallelGeometry, forward_project, log_normalize, simulate_intensity

log = logging.getLogger(__name__)

DENSE_PARAM_GUARD = 2**26


class TrainingDiverged(RuntimeError):
    pass


class MemoryGuardError(ValueError):
    pass


@dataclass
class TrainingLog:
    initial_loss: float
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int | None = None

    @property
    def final_train_loss(self) -> float:
        return self.epochs[-1]["train_loss"] if self.epochs else self.initial_loss

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            w.writerow([0, repr(self.initial_loss), ""])
            for e in self.epochs:
                val = e["val_loss"]
                w.writerow([e["epoch"], repr(e["train_loss"]), "" if val is None else repr(val)])


def _mean_loss(net: Network, x: np.ndarray, y: np.ndarray, batch: int) -> float:
    total = 0.0
    for i in range(0, len(x), batch):
        loss, _ = mse_loss(net.forward(x[i:i + batch]), y[i:i + batch])
        total += loss * len(x[i:i + batch])
    net.clear_cache()
    return total / len(x)


def fit(net: Network, x: np.ndarray, y: np.ndarray, epochs: int, batch: int, lr: float, seed: int,
        x_val: np.ndarray | None = None, y_val: np.ndarray | None = None,
        checkpoint: Path | None = None, fixed_bias: bool = False) -> TrainingLog:
    """Minibatch ADAM on the MSE loss.

    Keeps the parameters of the epoch with the lowest validation loss (the
    final epoch when there is no validation data) and optionally saves them
    as a CTN1 checkpoint.
    """
    rng = np.random.default_rng(seed)
    x = x.astype(net.dtype, copy=False)
    y = y.astype(net.dtype, copy=False)
    has_val = x_val is not None and len(x_val) > 0
    state = AdamState(lr=lr, fixed_bias=fixed_bias)
    history = TrainingLog(_mean_loss(net, x, y, batch))
    log.info("initial train loss %.6g", history.initial_loss)
    best, best_params = math.inf, None
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(x))
        total = 0.0
        for i in range(0, len(x), batch):
            idx = order[i:i + batch]
            net.zero_grad()
            loss, grad = mse_loss(net.forward(x[idx]), y[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch}, batch {i // batch} (lr={lr})")
            net.backward(grad)
            adam_step(state, net.params, net.grads)
            total += loss * len(idx)
        net.clear_cache()
        train_loss = total / len(x)
        val_loss = _mean_loss(net, x_val, y_val, batch) if has_val else None
        history.epochs.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        log.info("epoch %d train %.6g val %s", epoch, train_loss, val_loss)
        score = val_loss if has_val else -epoch
        if score < best:
            best, history.best_epoch = score, epoch
            best_params = [p.copy() for p in net.params]
    if best_params is not None:
        for p, b in zip(net.params, best_params):
            p[...] = b
    if checkpoint is not None:
        save_network(checkpoint, net)
    return history


def _images(arr: np.ndarray) -> np.ndarray:
    return arr[:, None].astype(np.float32)


def train_denoiser(manifest: DatasetManifest, arch: DenoiserArch = DenoiserArch(), epochs: int = 10,
                   batch: int = 8, lr: float = 1e-3, seed: int = 0, checkpoint=None,
                   fixed_bias: bool = False) -> tuple[Network, TrainingLog]:
    """Train ``arch`` to map FBP reconstructions onto their phantoms."""
    x, y = _images(manifest.stack("train", "fbp")), _images(manifest.stack("train", "phantom"))
    if len(x) == 0:
        raise ValueError("manifest has no training samples")
    xv, yv = _images(manifest.stack("val", "fbp")), _images(manifest.stack("val", "phantom"))
    net = arch.build().initialize(np.random.default_rng(seed))
    history = fit(net, x, y, epochs, batch, lr, seed + 1, xv, yv, checkpoint, fixed_bias)
    return net, history


# ---------------------------------------------------------------------------
# End-to-end data
# ---------------------------------------------------------------------------

def automap_geometry(arch: AutomapArch) -> ParallelGeometry:
    return ParallelGeometry.create(arch.n_angles, arch.image, pixel_size=FIELD_OF_VIEW / arch.image,
                                   n_detectors=arch.n_detectors)


def downsample(image: np.ndarray, size: int) -> np.ndarray:
    """Block-average a square image to ``size`` pixels per side."""
    n = image.shape[-1]
    if n == size:
        return image
    if n % size:
        raise ValueError(f"cannot block-average {n} pixels down to {size}")
    f = n // size
    return image.reshape(image.shape[:-2] + (size, f, size, f)).mean(axis=(-3, -1))


def end_to_end_data(manifest: DatasetManifest, arch: AutomapArch, split: str):
    """Noisy sinograms and matching phantoms sized for ``arch``.

    Uses the manifest's noisy sinograms when its geometry already matches;
    otherwise the phantoms are block-averaged to ``arch.image`` and
    re-acquired with the architecture's geometry, the manifest's dose and
    each sample's recorded noise seed.
    """
    phantoms = manifest.stack(split, "phantom")
    g = manifest.geometry
    if (g.n_angles, g.n_detectors, g.grid.width) == (arch.n_angles, arch.n_detectors, arch.image):
        return manifest.stack(split, "noisy").astype(np.float32), _images(phantoms)
    geom = automap_geometry(arch)
    small = downsample(phantoms, arch.image)
    sinos = []
    for s, img in zip(manifest.split(split), small):
        clean = forward_project(ImageGrid(img, geom.grid.pixel_size), geom)
        rec = simulate_intensity(clean, manifest.i0, noisy=True, seed=s["noise_seed"])
        sinos.append(log_normalize(rec).data)
    sinos = np.array(sinos, dtype=np.float32).reshape(len(small), arch.n_angles, arch.n_detectors)
    return sinos, _images(small)


def check_memory_guard(arch: AutomapArch, max_dense_params: int = DENSE_PARAM_GUARD) -> None:
    est = estimate_params(arch)
    if est.params > max_dense_params:
        raise MemoryGuardError(
            f"end-to-end model needs {est.params} dense parameters ({est.memory_bytes} bytes at float32), "
            f"above the guard of {max_dense_params}; shrink the architecture or raise the guard")


def train_end_to_end(manifest: DatasetManifest, arch: AutomapArch, epochs: int = 10, batch: int = 8,
                     lr: float = 1e-4, seed: int = 0, checkpoint=None,
                     max_dense_params: int = DENSE_PARAM_GUARD,
                     fixed_bias: bool = False) -> tuple[Network, TrainingLog]:
    """Train ``arch`` to map noisy sinograms straight onto phantoms."""
    check_memory_guard(arch, max_dense_params)
    x, y = end_to_end_data(manifest, arch, "train")
    if len(x) == 0:
        raise ValueError("manifest has no training samples")
    xv, yv = end_to_end_data(manifest, arch, "val")
    net = arch.build().initialize(np.random.default_rng(seed))
    history = fit(net, x, y, epochs, batch, lr, seed + 1, xv, yv, checkpoint, fixed_bias)
    return net, history
