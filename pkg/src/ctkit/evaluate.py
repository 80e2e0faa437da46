"""Reconstruction metrics and the four-way comparison over a test split."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ctkit.archs import AutomapArch
from ctkit.dataset import DatasetManifest
from ctkit.io import write_pgm
from ctkit.nn import Network
from ctkit.training import end_to_end_data

PSNR_CAP = 99.0

FBP = "fbp"
DENOISED = "fbp+denoiser"
END_TO_END = "end-to-end"


def rmse(estimate, reference) -> float:
    diff = np.asarray(estimate, dtype=np.float64) - np.asarray(reference, dtype=np.float64)
    return float(np.sqrt(np.mean(diff**2)))


def psnr(estimate, reference) -> float:
    """``20 log10(max(reference) / RMSE)`` in dB, capped at ``PSNR_CAP``."""
    err = rmse(estimate, reference)
    peak = float(np.max(reference))
    if err == 0:
        return PSNR_CAP
    if peak <= 0:
        return -PSNR_CAP
    return min(PSNR_CAP, 20.0 * math.log10(peak / err))


@dataclass
class MetricsTable:
    rows: list[dict] = field(default_factory=list)

    def add(self, method: str, item: str, estimate, reference):
        self.rows.append({"method": method, "item": item,
                          "rmse": rmse(estimate, reference), "psnr": psnr(estimate, reference)})

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(r["method"] for r in self.rows if r["item"] != "mean"))

    def mean_rmse(self, method: str) -> float:
        vals = [r["rmse"] for r in self.rows if r["method"] == method and r["item"] != "mean"]
        return float(np.mean(vals))

    def summarize(self):
        """Append one ``item="mean"`` row per method."""
        for m in self.methods:
            vals = [r for r in self.rows if r["method"] == m and r["item"] != "mean"]
            self.rows.append({"method": m, "item": "mean",
                              "rmse": float(np.mean([r["rmse"] for r in vals])),
                              "psnr": float(np.mean([r["psnr"] for r in vals]))})

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["method", "item", "rmse", "psnr"])
            w.writeheader()
            for r in self.rows:
                w.writerow({**r, "rmse": f"{r['rmse']:.9g}", "psnr": f"{r['psnr']:.6f}"})


def upsample(image: np.ndarray, size: int) -> np.ndarray:
    f = size // image.shape[-1]
    return np.kron(image, np.ones((f, f))) if f > 1 else image


def evaluate(manifest: DatasetManifest, denoiser: Network | None = None,
             end_to_end: tuple[Network, AutomapArch] | None = None,
             out_dir=None, batch: int = 8) -> MetricsTable:
    """RMSE/PSNR of every method against the phantoms of the test split.

    End-to-end outputs are scored at the network's own resolution against
    block-averaged phantoms. With ``out_dir`` the table goes to
    ``metrics.csv`` and one PGM panel per item (FBP, FBP+denoiser,
    end-to-end, ground truth, left to right) to ``panels/``.
    """
    items = manifest.split("test")
    if not items:
        raise ValueError("manifest has an empty test split")
    phantoms = manifest.stack("test", "phantom")
    fbps = manifest.stack("test", "fbp")
    table = MetricsTable()
    outputs = {FBP: fbps}
    if denoiser is not None:
        outputs[DENOISED] = denoiser.predict(fbps[:, None].astype(np.float32), batch)[:, 0]
    e2e_ref = None
    if end_to_end is not None:
        net, arch = end_to_end
        sinos, refs = end_to_end_data(manifest, arch, "test")
        outputs[END_TO_END] = net.predict(sinos, batch)[:, 0]
        e2e_ref = refs[:, 0]
    for method, images in outputs.items():
        refs = e2e_ref if method == END_TO_END else phantoms
        for s, img, ref in zip(items, images, refs):
            table.add(method, s["id"], img, ref)
    table.summarize()

    if out_dir is not None:
        out = Path(out_dir)
        (out / "panels").mkdir(parents=True, exist_ok=True)
        table.write_csv(out / "metrics.csv")
        size = phantoms.shape[-1]
        blank = np.zeros_like(phantoms[0])
        for k, s in enumerate(items):
            tiles = [fbps[k],
                     outputs[DENOISED][k] if DENOISED in outputs else blank,
                     upsample(outputs[END_TO_END][k], size) if END_TO_END in outputs else blank,
                     phantoms[k]]
            lo, hi = float(phantoms[k].min()), float(phantoms[k].max())
            write_pgm(out / "panels" / f"{s['id']}.pgm", np.hstack(tiles), lo, hi if hi > lo else lo + 1)
    return table
