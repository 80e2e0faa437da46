"""Synthetic low-dose datasets written as CTR1 files plus a JSON-lines
manifest."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ctkit.fbp import FilterSpec, fbp_reconstruct
from ctkit.io import read_ctr, write_ctr
from ctkit.phantoms import PhantomKind, PhantomSpec, make_phantom
from ctkit.projection import (
    GridShape,
    ParallelGeometry,
    forward_project,
    log_normalize,
    simulate_intensity,
)

SPLITS = ("train", "val", "test")
FILE_KEYS = ("phantom", "clean", "noisy", "fbp")
# the phantom table spans [-1, 1], so a unit-attenuation chord is at most 2
FIELD_OF_VIEW = 2.0
DEFAULT_I0 = 1e4


def default_geometry(size: int = 128, n_angles: int = 20, n_detectors: int | None = None) -> ParallelGeometry:
    """Equispaced parallel beam over a ``FIELD_OF_VIEW``-wide square grid."""
    return ParallelGeometry.create(n_angles, size, pixel_size=FIELD_OF_VIEW / size, n_detectors=n_detectors)


def geometry_record(geom: ParallelGeometry) -> dict:
    g = geom.grid
    return {
        "angles": [float(a) for a in geom.angles],
        "n_detectors": geom.n_detectors,
        "detector_spacing": geom.detector_spacing,
        "width": g.width,
        "height": g.height,
        "pixel_size": g.pixel_size,
    }


def geometry_from_record(rec: dict) -> ParallelGeometry:
    return ParallelGeometry(np.array(rec["angles"]), rec["n_detectors"], rec["detector_spacing"],
                            GridShape(rec["width"], rec["height"], rec["pixel_size"]))


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sample_seeds(seed: int, n: int) -> list[tuple[int, int]]:
    """Independent (phantom, noise) seed pairs split from the master seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [tuple(int(v) for v in c.generate_state(2)) for c in children]


@dataclass
class DatasetManifest:
    root: Path
    geometry: ParallelGeometry
    i0: float
    seed: int
    samples: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    MANIFEST_NAME = "manifest.jsonl"

    def split(self, name: str) -> list[dict]:
        return [s for s in self.samples if s["split"] == name]

    def path(self, sample: dict, key: str) -> Path:
        return self.root / sample[key]

    def stack(self, split: str, key: str) -> np.ndarray:
        """All ``key`` arrays of a split, shape ``(n, H, W)``."""
        items = self.split(split)
        if not items:
            return np.zeros((0,) + self._shape(key))
        return np.stack([read_ctr(self.path(s, key))[0] for s in items])

    def _shape(self, key):
        g = self.geometry
        if key in ("clean", "noisy"):
            return (g.n_angles, g.n_detectors)
        return (g.grid.height, g.grid.width)

    def header(self) -> dict:
        return {"type": "header", "geometry": geometry_record(self.geometry), "i0": self.i0,
                "seed": self.seed, **self.extra}

    def write(self) -> Path:
        path = self.root / self.MANIFEST_NAME
        with open(path, "w") as fh:
            fh.write(json.dumps(self.header(), sort_keys=True) + "\n")
            for s in self.samples:
                fh.write(json.dumps({"type": "sample", **s}, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / cls.MANIFEST_NAME
        lines = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        if not lines or lines[0].get("type") != "header":
            raise ValueError(f"{path}: manifest must start with a header record")
        head = dict(lines[0])
        geom = geometry_from_record(head.pop("geometry"))
        i0, seed = head.pop("i0"), head.pop("seed")
        head.pop("type")
        samples = [{k: v for k, v in rec.items() if k != "type"} for rec in lines[1:]]
        return cls(path.parent, geom, i0, seed, samples, head)

    def verify(self) -> list[str]:
        """Paths whose recorded hash no longer matches."""
        bad = []
        for s in self.samples:
            for key in FILE_KEYS:
                if sha256_file(self.path(s, key)) != s["sha256"][key]:
                    bad.append(s[key])
        return bad


def build_dataset(out_dir, n_train: int, n_test: int, geom: ParallelGeometry | None = None,
                  i0: float = DEFAULT_I0, seed: int = 0, n_val: int = 0,
                  phantom: PhantomSpec | None = None,
                  filter_spec: FilterSpec = FilterSpec()) -> DatasetManifest:
    """Generate phantoms, clean and noisy sinograms and FBP reconstructions.

    Sample ``k`` always gets the ``k``-th seed pair split from ``seed``, in
    the order train, val, test.
    """
    if n_train < 1 or n_test < 1 or n_val < 0:
        raise ValueError("need n_train >= 1, n_test >= 1, n_val >= 0")
    geom = default_geometry() if geom is None else geom
    g = geom.grid
    if g.width != g.height:
        raise ValueError("dataset phantoms are square")
    template = phantom or PhantomSpec(kind=PhantomKind.RANDOM_ELLIPSES)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    plan = [("train", n_train), ("val", n_val), ("test", n_test)]
    seeds = sample_seeds(seed, n_train + n_val + n_test)
    manifest = DatasetManifest(out, geom, float(i0), int(seed),
                               extra={"filter": template_filter(filter_spec),
                                      "phantom_kind": template.kind.value})
    k = 0
    for split, count in plan:
        for j in range(count):
            phantom_seed, noise_seed = seeds[k]
            k += 1
            spec = PhantomSpec(kind=template.kind, size=g.width, n_ellipses=template.n_ellipses,
                               attenuation=template.attenuation, clip_max=template.clip_max,
                               seed=phantom_seed, pixel_size=g.pixel_size)
            image = make_phantom(spec)
            clean = forward_project(image, geom)
            noisy = log_normalize(simulate_intensity(clean, i0, noisy=True, seed=noise_seed))
            recon = fbp_reconstruct(noisy, filter_spec)
            stem = f"{split}_{j:04d}"
            record = {"id": stem, "split": split, "phantom_seed": phantom_seed, "noise_seed": noise_seed,
                      "sha256": {}}
            for key, arr in zip(FILE_KEYS, (image.data, clean.data, noisy.data, recon.data)):
                name = f"{stem}_{key}.ctr"
                try:
                    write_ctr(out / name, arr)
                except OSError as err:
                    raise OSError(f"could not write {out / name}: {err}") from err
                record[key] = name
                record["sha256"][key] = sha256_file(out / name)
            manifest.samples.append(record)
    manifest.write()
    return manifest


def template_filter(spec: FilterSpec) -> dict:
    return {"kind": spec.kind.value, "cutoff": spec.cutoff, "padded_length": spec.padded_length}
