"""CTR1 raster files, sinogram sidecar headers and PGM export.

CTR1 layout (little-endian): magic ``CTR1``, u32 width, u32 height,
u32 channels, then ``channels * height * width`` float32 values,
channel-major then row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ctkit.projection import GridShape, ImageGrid, IntensityRecord, ParallelGeometry, Sinogram

MAGIC = b"CTR1"
_HEADER = struct.Struct("<4sIII")


class CTRFormatError(ValueError):
    pass


def write_ctr(path, array) -> None:
    """Write a ``(H, W)`` or ``(C, H, W)`` array as CTR1."""
    arr = np.asarray(array)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"CTR1 holds 2-D or 3-D arrays, got shape {arr.shape}")
    c, h, w = arr.shape
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(_HEADER.pack(MAGIC, w, h, c) + payload)


def read_ctr(path) -> np.ndarray:
    """Read a CTR1 file as float64, shape ``(C, H, W)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CTRFormatError(f"{path}: file too short for a CTR1 header")
    magic, w, h, c = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CTRFormatError(f"{path}: bad magic {magic!r}")
    n = w * h * c
    if len(raw) != _HEADER.size + 4 * n:
        raise CTRFormatError(f"{path}: expected {n} float32 values, got {(len(raw) - _HEADER.size) / 4:g}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size, count=n)
    return data.reshape(c, h, w).astype(np.float64)


def read_ctr_image(path, pixel_size: float = 1.0) -> ImageGrid:
    arr = read_ctr(path)
    if arr.shape[0] != 1:
        raise CTRFormatError(f"{path}: expected a single-channel image, got {arr.shape[0]} channels")
    return ImageGrid(arr[0], pixel_size)


def header_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".hdr")


def write_sinogram(path, sino: Sinogram, i0: float | None = None) -> None:
    """Sinogram as CTR1 (width = detectors, height = angles) plus sidecar."""
    write_ctr(path, sino.data)
    write_header(path, sino.geometry, i0=i0)


def write_header(path, geom: ParallelGeometry, i0: float | None = None, **extra) -> None:
    g = geom.grid
    lines = [
        "angles=" + ",".join(repr(float(a)) for a in geom.angles),
        f"n_detectors={geom.n_detectors}",
        f"detector_spacing={geom.detector_spacing!r}",
        f"pixel_size={g.pixel_size!r}",
        f"image_width={g.width}",
        f"image_height={g.height}",
    ]
    if i0 is not None:
        lines.append(f"i0={float(i0)!r}")
    lines += [f"{k}={v}" for k, v in extra.items()]
    header_path(path).write_text("\n".join(lines) + "\n")


def read_header(path) -> dict:
    hdr = {}
    for line in header_path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        hdr[key.strip()] = value.strip()
    return hdr


def geometry_from_header(hdr: dict) -> ParallelGeometry:
    angles = np.array([float(a) for a in hdr["angles"].split(",")])
    grid = GridShape(int(hdr["image_width"]), int(hdr["image_height"]), float(hdr["pixel_size"]))
    return ParallelGeometry(angles, int(hdr["n_detectors"]), float(hdr["detector_spacing"]), grid)


def read_sinogram(path, geom: ParallelGeometry | None = None) -> Sinogram:
    """Read a sinogram; geometry comes from ``geom`` or the sidecar header."""
    arr = read_ctr(path)
    if arr.shape[0] != 1:
        raise CTRFormatError(f"{path}: sinograms are single-channel")
    if geom is None:
        geom = geometry_from_header(read_header(path))
    return Sinogram(geom, arr[0])


def write_intensity(path, rec: IntensityRecord) -> None:
    write_ctr(path, rec.counts)
    write_header(path, rec.geometry, i0=rec.i0, noisy=int(rec.noisy))


def read_intensity(path) -> IntensityRecord:
    hdr = read_header(path)
    arr = read_ctr(path)
    return IntensityRecord(geometry_from_header(hdr), float(hdr["i0"]), arr[0],
                           bool(int(hdr.get("noisy", "0"))))


def read_angles_file(path) -> np.ndarray:
    """One radian value per line; blank lines and ``#`` comments ignored."""
    values = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            values.append(float(line))
    return np.array(values)


def to_pgm_bytes(array, vmin: float | None = None, vmax: float | None = None) -> bytes:
    """16-bit binary PGM (P5), min-max windowed to 0..65535."""
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("PGM export needs a 2-D array")
    lo = float(arr.min()) if vmin is None else vmin
    hi = float(arr.max()) if vmax is None else vmax
    if hi > lo:
        scaled = np.clip((arr - lo) / (hi - lo), 0.0, 1.0)
    else:
        scaled = np.zeros_like(arr)
    pixels = np.round(scaled * 65535).astype(">u2")
    h, w = arr.shape
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + pixels.tobytes()


def write_pgm(path, array, vmin=None, vmax=None) -> None:
    Path(path).write_bytes(to_pgm_bytes(array, vmin, vmax))
