"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from ctkit import io
from ctkit.archs import AutomapArch, DenoiserArch, estimate_params
from ctkit.dataset import DEFAULT_I0, DatasetManifest, build_dataset, default_geometry
from ctkit.fbp import FilterSpec, fbp_reconstruct
from ctkit.phantoms import PhantomKind, PhantomSpec, make_phantom
from ctkit.projection import (
    ParallelGeometry,
    Sinogram,
    forward_project,
    log_normalize,
    simulate_intensity,
)
from ctkit.sirt import sirt_reconstruct

log = logging.getLogger("ctkit")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _geometry_flags(p, with_size=True):
    """Geometry overrides; reconstruction commands take the detector count
    from the sinogram itself."""
    g = p.add_argument_group("geometry")
    if with_size:
        g.add_argument("--size", type=int, default=None,
                       help="image side in pixels (default: from the input file)")
    g.add_argument("--n-angles", type=int, default=None,
                   help="number of equispaced angles in [0, pi) (default 180 for project)")
    g.add_argument("--angles-file", type=Path, default=None,
                   help="text file with one angle in radians per line; overrides --n-angles")
    if not with_size:
        g.add_argument("--n-detectors", type=int, default=None,
                       help="detector bins (default: ceil(sqrt(2)*size) rounded up to even)")
    g.add_argument("--detector-spacing", type=float, default=None,
                   help="bin spacing in length units (default: pixel size)")
    g.add_argument("--pixel-size", type=float, default=None,
                   help="pixel side in length units (default 1.0)")


def _angles(args, default_n=None):
    if args.angles_file is not None:
        return io.read_angles_file(args.angles_file)
    n = args.n_angles if args.n_angles is not None else default_n
    if n is None:
        return None
    return np.arange(n) * (np.pi / n)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ctkit", description="Parallel-beam CT simulation, reconstruction and learning.")
    p.add_argument("--threads", type=int, default=None,
                   help="cap on worker threads (default: $CTKIT_THREADS, else library default)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("phantom", help="rasterize a phantom to CTR1")
    s.add_argument("--kind", choices=[k.value for k in PhantomKind], default="shepp",
                   help="shepp (modified Shepp-Logan) or ellipses (random); default shepp")
    s.add_argument("--size", type=int, default=128, help="side in pixels (default 128)")
    s.add_argument("--n-ellipses", type=int, nargs=2, default=(3, 8), metavar=("MIN", "MAX"),
                   help="ellipse count range for --kind ellipses (default 3 8)")
    s.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    s.add_argument("--out", type=Path, required=True, help="output CTR1 path")

    s = sub.add_parser("project", help="forward-project an image into a sinogram")
    s.add_argument("--image", type=Path, required=True, help="input CTR1 image")
    _geometry_flags(s, with_size=False)
    s.add_argument("--out", type=Path, required=True, help="output sinogram (CTR1 + .hdr sidecar)")

    s = sub.add_parser("acquire", help="detected intensities I0*exp(-p), optionally with Poisson noise")
    s.add_argument("--sino", type=Path, required=True, help="input sinogram with sidecar")
    s.add_argument("--i0", type=float, default=DEFAULT_I0, help="photons per bin (default 1e4)")
    s.add_argument("--noiseless", action="store_true", help="skip Poisson sampling")
    s.add_argument("--seed", type=int, default=0, help="noise seed (default 0)")
    s.add_argument("--out", type=Path, required=True, help="output intensity CTR1 + sidecar")

    s = sub.add_parser("lognorm", help="projection values -ln(I/I0) from intensities")
    s.add_argument("--counts", type=Path, required=True, help="intensity CTR1 with sidecar (from acquire)")
    s.add_argument("--out", type=Path, required=True, help="output sinogram")

    s = sub.add_parser("fbp", help="filtered back projection")
    s.add_argument("--sino", type=Path, required=True, help="input sinogram")
    _geometry_flags(s)
    s.add_argument("--filter", choices=["ramlak", "hann"], default="ramlak", help="default ramlak")
    s.add_argument("--cutoff", type=float, default=1.0, help="fraction of Nyquist in (0, 1] (default 1)")
    s.add_argument("--padded-length", type=int, default=None,
                   help="FFT length, power of two >= 2*detectors (default smallest such)")
    s.add_argument("--out", type=Path, required=True, help="output CTR1 image")

    s = sub.add_parser("sirt", help="SIRT reconstruction")
    s.add_argument("--sino", type=Path, required=True, help="input sinogram")
    _geometry_flags(s)
    s.add_argument("--n-iter", type=int, default=100, help="iterations (default 100)")
    s.add_argument("--nonneg", action="store_true", help="clamp the estimate at 0 after each step")
    s.add_argument("--tol", type=float, default=0.0,
                   help="stop once residual/initial residual < tol (default 0 = off)")
    s.add_argument("--residual-csv", type=Path, default=None, help="write iteration,residual CSV")
    s.add_argument("--out", type=Path, required=True, help="output CTR1 image")

    s = sub.add_parser("dataset", help="build a synthetic low-dose dataset")
    s.add_argument("--out", type=Path, required=True, help="output directory")
    s.add_argument("--n-train", type=int, default=200, help="training samples (default 200)")
    s.add_argument("--n-val", type=int, default=0, help="validation samples (default 0)")
    s.add_argument("--n-test", type=int, default=20, help="test samples (default 20)")
    s.add_argument("--size", type=int, default=128, help="image side in pixels (default 128)")
    s.add_argument("--n-angles", type=int, default=20, help="equispaced angles (default 20)")
    s.add_argument("--i0", type=float, default=DEFAULT_I0, help="photons per bin (default 1e4)")
    s.add_argument("--kind", choices=[k.value for k in PhantomKind], default="ellipses",
                   help="phantom family (default ellipses)")
    s.add_argument("--seed", type=int, default=0, help="master seed (default 0)")

    for name, helptext in (("train-denoiser", "train the FBP post-processing denoiser"),
                           ("train-e2e", "train the end-to-end sinogram-to-image network")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--dataset", type=Path, required=True, help="dataset directory or manifest")
        s.add_argument("--epochs", type=int, default=10, help="epochs (default 10)")
        s.add_argument("--batch", type=int, default=8, help="minibatch size (default 8)")
        s.add_argument("--lr", type=float, default=None,
                       help="ADAM learning rate (default 1e-3 denoiser, 1e-4 end-to-end)")
        s.add_argument("--seed", type=int, default=0, help="init/shuffle seed (default 0)")
        s.add_argument("--adam-fixed-bias", action="store_true",
                       help="bias-correct with 1-beta instead of 1-beta^n")
        s.add_argument("--out", type=Path, required=True, help="output CTN1 checkpoint")
        s.add_argument("--log", type=Path, default=None, help="per-epoch loss CSV")
        if name == "train-denoiser":
            s.add_argument("--depth", type=int, default=32, help="dilated layers (default 32)")
        else:
            _automap_flags(s)
            s.add_argument("--max-dense-params", type=int, default=2**26,
                           help="refuse larger dense layers (default 2^26)")

    s = sub.add_parser("eval", help="score FBP, denoiser and end-to-end outputs on the test split")
    s.add_argument("--dataset", type=Path, required=True, help="dataset directory or manifest")
    s.add_argument("--denoiser", type=Path, default=None, help="denoiser CTN1 checkpoint")
    s.add_argument("--e2e", type=Path, default=None, help="end-to-end CTN1 checkpoint")
    _automap_flags(s)
    s.add_argument("--out", type=Path, required=True, help="output directory (metrics.csv, panels/)")

    s = sub.add_parser("estimate-params", help="parameter count and memory of an architecture")
    kind = s.add_mutually_exclusive_group(required=True)
    kind.add_argument("--automap", action="store_true", help="end-to-end architecture")
    kind.add_argument("--denoiser", action="store_true", help="mixed-scale dense denoiser")
    s.add_argument("--det", type=int, default=512, help="detector bins (default 512)")
    s.add_argument("--angles", type=int, default=128, help="projection angles (default 128)")
    s.add_argument("--img", type=int, default=512, help="image side in pixels (default 512)")
    s.add_argument("--depth", type=int, default=32, help="denoiser depth (default 32)")
    s.add_argument("--bytes-per-param", type=int, default=4, help="bytes per parameter (default 4)")

    s = sub.add_parser("export-pgm", help="min-max windowed 16-bit PGM of a CTR1 file")
    s.add_argument("--in", dest="inp", type=Path, required=True, help="input CTR1")
    s.add_argument("--channel", type=int, default=0, help="channel to export (default 0)")
    s.add_argument("--vmin", type=float, default=None, help="window low end (default data min)")
    s.add_argument("--vmax", type=float, default=None, help="window high end (default data max)")
    s.add_argument("--out", type=Path, required=True, help="output PGM")
    return p


def _automap_flags(s):
    s.add_argument("--img", type=int, default=64, help="end-to-end image side (default 64)")
    s.add_argument("--angles", type=int, default=16, help="end-to-end angles (default 16)")
    s.add_argument("--det", type=int, default=64, help="end-to-end detector bins (default 64)")
    s.add_argument("--channels", type=int, default=64, help="conv channels (default 64)")


def _write_run_json(args, out_dir: Path):
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.json").write_text(json.dumps(cfg, indent=2, sort_keys=True, default=list) + "\n")


def _sino_geometry(args, data: np.ndarray) -> ParallelGeometry:
    """Geometry from the sidecar, with command-line overrides."""
    hdr_file = io.header_path(args.sino)
    hdr = io.read_header(args.sino) if hdr_file.exists() else {}
    angles = _angles(args)
    if angles is None and "angles" in hdr:
        angles = np.array([float(a) for a in hdr["angles"].split(",")])
    if angles is None:
        raise UsageError("no angles: give --n-angles/--angles-file or a sinogram sidecar")
    n_det = data.shape[1]
    size = args.size or (int(hdr["image_width"]) if "image_width" in hdr else None)
    if size is None:
        raise UsageError("no image size: give --size or a sinogram sidecar")
    ps = args.pixel_size or float(hdr.get("pixel_size", 1.0))
    spacing = args.detector_spacing or float(hdr.get("detector_spacing", ps))
    if len(angles) != data.shape[0]:
        raise UsageError(f"{len(angles)} angles given but the sinogram has {data.shape[0]} rows")
    return ParallelGeometry.create(angles=angles, width=size, pixel_size=ps,
                                   n_detectors=n_det, detector_spacing=spacing)


def cmd_phantom(args):
    spec = PhantomSpec(kind=args.kind, size=args.size, n_ellipses=tuple(args.n_ellipses), seed=args.seed)
    io.write_ctr(args.out, make_phantom(spec).data)
    return args.out.parent


def cmd_project(args):
    ps = args.pixel_size or 1.0
    image = io.read_ctr_image(args.image, ps)
    if image.width != image.height:
        raise UsageError("project expects a square image")
    geom = ParallelGeometry.create(angles=_angles(args, 180), width=image.width, pixel_size=ps,
                                   n_detectors=args.n_detectors, detector_spacing=args.detector_spacing)
    io.write_sinogram(args.out, forward_project(image, geom))
    return args.out.parent


def cmd_acquire(args):
    sino = io.read_sinogram(args.sino)
    io.write_intensity(args.out, simulate_intensity(sino, args.i0, not args.noiseless, args.seed))
    return args.out.parent


def cmd_lognorm(args):
    io.write_sinogram(args.out, log_normalize(io.read_intensity(args.counts)))
    return args.out.parent


def _read_sino_for_recon(args) -> Sinogram:
    data = io.read_ctr(args.sino)[0]
    return Sinogram(_sino_geometry(args, data), data)


def cmd_fbp(args):
    spec = FilterSpec(args.filter, args.padded_length, args.cutoff)
    io.write_ctr(args.out, fbp_reconstruct(_read_sino_for_recon(args), spec).data)
    return args.out.parent


def cmd_sirt(args):
    image, state = sirt_reconstruct(_read_sino_for_recon(args), args.n_iter, args.nonneg, args.tol)
    io.write_ctr(args.out, image.data)
    if args.residual_csv:
        state.write_residual_csv(args.residual_csv)
    return args.out.parent


def cmd_dataset(args):
    geom = default_geometry(args.size, args.n_angles)
    build_dataset(args.out, args.n_train, args.n_test, geom, args.i0, args.seed, args.n_val,
                  PhantomSpec(kind=args.kind, size=args.size))
    return args.out


def _automap(args) -> AutomapArch:
    return AutomapArch(args.det, args.angles, args.img, args.channels)


def cmd_train_denoiser(args):
    from ctkit.training import train_denoiser
    manifest = DatasetManifest.load(args.dataset)
    _, history = train_denoiser(manifest, DenoiserArch(args.depth), args.epochs, args.batch,
                                1e-3 if args.lr is None else args.lr, args.seed, args.out,
                                args.adam_fixed_bias)
    if args.log:
        history.write_csv(args.log)
    return args.out.parent


def cmd_train_e2e(args):
    from ctkit.training import train_end_to_end
    manifest = DatasetManifest.load(args.dataset)
    _, history = train_end_to_end(manifest, _automap(args), args.epochs, args.batch,
                                  1e-4 if args.lr is None else args.lr, args.seed, args.out,
                                  args.max_dense_params, args.adam_fixed_bias)
    if args.log:
        history.write_csv(args.log)
    return args.out.parent


def cmd_eval(args):
    from ctkit.evaluate import evaluate
    from ctkit.nn import load_network
    manifest = DatasetManifest.load(args.dataset)
    for path in (args.denoiser, args.e2e):
        if path is not None and not path.exists():
            raise FileNotFoundError(f"missing checkpoint {path}")
    denoiser = load_network(args.denoiser) if args.denoiser else None
    e2e = (load_network(args.e2e), _automap(args)) if args.e2e else None
    table = evaluate(manifest, denoiser, e2e, args.out)
    for m in table.methods:
        print(f"{m}\tmean RMSE {table.mean_rmse(m):.6g}")
    return args.out


def cmd_estimate_params(args):
    if args.automap:
        arch = AutomapArch(args.det, args.angles, args.img)
    else:
        arch = DenoiserArch(args.depth)
    est = estimate_params(arch, args.bytes_per_param)
    print(est.params)
    print(f"memory_bytes {est.memory_bytes} ({est.memory_bytes / 1e9:.1f} GB)")
    return None


def cmd_export_pgm(args):
    arr = io.read_ctr(args.inp)
    if not 0 <= args.channel < arr.shape[0]:
        raise UsageError(f"channel {args.channel} out of range (file has {arr.shape[0]})")
    io.write_pgm(args.out, arr[args.channel], args.vmin, args.vmax)
    return args.out.parent


COMMANDS = {
    "phantom": cmd_phantom,
    "project": cmd_project,
    "acquire": cmd_acquire,
    "lognorm": cmd_lognorm,
    "fbp": cmd_fbp,
    "sirt": cmd_sirt,
    "dataset": cmd_dataset,
    "train-denoiser": cmd_train_denoiser,
    "train-e2e": cmd_train_e2e,
    "eval": cmd_eval,
    "estimate-params": cmd_estimate_params,
    "export-pgm": cmd_export_pgm,
}


def _thread_limit(args):
    n = args.threads
    if n is None and os.environ.get("CTKIT_THREADS"):
        n = int(os.environ["CTKIT_THREADS"])
    if n is None:
        return contextlib.nullcontext()
    if n < 1:
        raise UsageError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        with _thread_limit(args):
            out_dir = COMMANDS[args.command](args)
        if out_dir is not None:
            _write_run_json(args, Path(out_dir))
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"ctkit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
