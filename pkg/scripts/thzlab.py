#!/usr/bin/env python3
"""THz computational imaging lab command line.

Usage examples:

    # Build a phantom, scan it and extract features
    python scripts/thzlab.py phantom gen --preset deer --size 64 --run-dir runs/deer
    python scripts/thzlab.py simulate ct --phantom runs/deer/phantom.thzt --seed 7 --run-dir runs/deer
    python scripts/thzlab.py extract features --scan runs/deer/scan.thzt --run-dir runs/deer

    # Whole pipeline, four worker threads, settings from a file
    python scripts/thzlab.py --threads 4 --config config/thzlab.example.toml pipeline demo --seed 7 --size 64

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

REPO_ROOT = Path(__file__).resolve().parents[1]
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

from lib import settings  # noqa: E402

LOGGER = logging.getLogger("thzlab")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageExit(Exception):
    """Raised by the parser instead of exiting so ``main`` returns a code."""


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageExit(message)


def _run_dir(parser: argparse.ArgumentParser, default: str = "runs/latest") -> None:
    parser.add_argument("--run-dir", default=default, help="Directory receiving outputs and manifest.yml (default: %(default)s).")


def _scan_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-views", type=int, default=30, help="Number of projection angles (default: %(default)s).")
    parser.add_argument("--angle-step", type=float, default=6.0, help="Angular step in degrees (default: %(default)s).")


def build_parser() -> CliParser:
    parser = CliParser(prog="thzlab", description="THz computational imaging lab.")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads (fallback: THZLAB_THREADS, then 1).")
    parser.add_argument("--config", type=Path, default=None, help="Flat key = value settings file (TOML syntax).")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level.")
    parser.add_argument("--quiet", action="store_true", help="Log warnings only and hide progress bars.")
    parser.add_argument("--no-dotenv", action="store_true", help="Do not load a .env file.")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    # phantom
    phantom = commands.add_parser("phantom", help="Build phantoms and their ground truths.")
    phantom_sub = phantom.add_subparsers(dest="action", metavar="ACTION")
    phantom_sub.required = True
    gen = phantom_sub.add_parser("gen", help="Compose a preset phantom.")
    gen.add_argument("--preset", default="sphere", help="Preset name from the presets file (default: %(default)s).")
    gen.add_argument("--size", type=int, default=64, help="Grid edge in voxels (default: %(default)s).")
    gen.add_argument("--pitch", type=float, default=0.25, help="Voxel pitch in mm (default: %(default)s).")
    gen.add_argument("--presets", default=None, help="Alternative presets YAML file.")
    _run_dir(gen)
    gen.set_defaults(handler="phantom_gen")
    project = phantom_sub.add_parser("project", help="Binary ground-truth silhouettes for every scan angle.")
    project.add_argument("--phantom", required=True, help="Phantom THZT file.")
    _scan_flags(project)
    _run_dir(project)
    project.set_defaults(handler="phantom_project")

    # simulate
    simulate = commands.add_parser("simulate", help="Synthesize measurements.")
    simulate_sub = simulate.add_subparsers(dest="action", metavar="ACTION")
    simulate_sub.required = True
    ct = simulate_sub.add_parser("ct", help="Raster-scan THz-TDS computed tomography.")
    ct.add_argument("--phantom", required=True, help="Phantom THZT file.")
    ct.add_argument("--seed", type=int, default=None, help="Noise seed (required).")
    _scan_flags(ct)
    ct.add_argument("--n-samples", type=int, default=1024, help="Samples per trace, a power of two (default: %(default)s).")
    ct.add_argument("--noise-db", type=float, default=41.7, help="Dynamic range in dB; 300 disables noise (default: %(default)s).")
    ct.add_argument("--psf-waist", type=float, default=None, help="Beam waist at 1 THz in mm; enables PSF blurring.")
    ct.add_argument("--no-fresnel", action="store_true", help="Skip interface transmission losses.")
    ct.add_argument("--flip", action="store_true", help="Append horizontally flipped views.")
    _run_dir(ct)
    ct.set_defaults(handler="simulate_ct", _required=("seed",))

    # extract
    extract = commands.add_parser("extract", help="Per-pixel feature extraction.")
    extract_sub = extract.add_subparsers(dest="action", metavar="ACTION")
    extract_sub.required = True
    features = extract_sub.add_parser("features", help="Time-max and water-band amplitude/phase stacks.")
    features.add_argument("--scan", required=True, help="Scan THZT file.")
    features.add_argument("--thickness", action="store_true", help="Also write time-of-flight thickness maps.")
    features.add_argument("--material", default=str(settings.CONFIG_DIR / "hips.csv"), help="freq_THz,n,alpha table for thickness maps (default: config/hips.csv).")
    features.add_argument("--index", type=float, default=None, help="Refractive index for thickness maps; overrides n(f) of --material at the pulse centre frequency.")
    _run_dir(features)
    features.set_defaults(handler="extract_features")

    # reconstruct
    recon = commands.add_parser("reconstruct", help="Single-slice tomography.")
    recon.add_argument("method", choices=("fbp", "sart"), help="Reconstruction algorithm.")
    recon.add_argument("--input", required=True, help="Sinogram (2-D) or projections (3-D) THZT file.")
    recon.add_argument("--row", type=int, default=None, help="Detector row for 3-D inputs (default: middle).")
    recon.add_argument("--filter", default="ram-lak", choices=("ram-lak", "shepp-logan", "hann"), help="FBP filter (default: %(default)s).")
    recon.add_argument("--iters", type=int, default=10, help="SART sweeps (default: %(default)s).")
    recon.add_argument("--relax", type=float, default=0.25, help="SART relaxation in [0, 1] (default: %(default)s).")
    _run_dir(recon)
    recon.set_defaults(handler="reconstruct")

    # volume
    vol = commands.add_parser("volume", help="Row-by-row FBP volume from projections.")
    vol.add_argument("--projections", required=True, help="Projections THZT file (views, H, W).")
    vol.add_argument("--filter", default="ram-lak", choices=("ram-lak", "shepp-logan", "hann"), help="FBP filter (default: %(default)s).")
    vol.add_argument("--binarize", action="store_true", help="Threshold and hole-fill every slice.")
    _run_dir(vol)
    vol.set_defaults(handler="volume")

    # cs
    cs = commands.add_parser("cs", help="Compressive single-pixel imaging.")
    cs_sub = cs.add_subparsers(dest="action", metavar="ACTION")
    cs_sub.required = True
    solve = cs_sub.add_parser("solve", help="Measure an image and recover it by L1 minimisation.")
    solve.add_argument("--image", required=True, help="2-D image THZT file.")
    solve.add_argument("--pattern", default="hadamard_subsampled", choices=("bernoulli_pm1", "binary01", "hadamard_subsampled"), help="Sensing patterns (default: %(default)s).")
    solve.add_argument("--ratio", type=float, default=0.5, help="Measurements per pixel (default: %(default)s).")
    solve.add_argument("--lambda", "--lam", dest="lam", type=float, default=0.01, help="L1 weight (default: %(default)s).")
    solve.add_argument("--tol", type=float, default=1e-10, help="Relative objective change that stops a solve (default: %(default)s).")
    solve.add_argument("--solver", default="fista", choices=("ista", "fista"), help="Solver (default: %(default)s).")
    solve.add_argument("--iters", type=int, default=500, help="Iteration cap per solve (default: %(default)s).")
    solve.add_argument("--continuation", action="store_true", help="Warm-started lambda continuation.")
    solve.add_argument("--seed", type=int, default=0, help="Pattern and noise seed (default: %(default)s).")
    solve.add_argument("--noise-db", type=float, default=None, help="Measurement dynamic range in dB.")
    solve.add_argument("--fresnel-z", type=float, default=None, help="Diffraction distance in mm before the patterns.")
    solve.add_argument("--freq", type=float, default=0.5, help="Frequency in THz for --fresnel-z (default: %(default)s).")
    _run_dir(solve)
    solve.set_defaults(handler="cs_solve")

    # holo
    holo = commands.add_parser("holo", help="Off-axis holography.")
    holo_sub = holo.add_subparsers(dest="action", metavar="ACTION")
    holo_sub.required = True
    for name, help_text in (("sim", "Record a hologram of an amplitude object."), ("reconstruct", "Recover the object field from a hologram.")):
        sp = holo_sub.add_parser(name, help=help_text)
        if name == "sim":
            sp.add_argument("--image", required=True, help="Object amplitude THZT file.")
        else:
            sp.add_argument("--hologram", required=True, help="Hologram THZT file.")
            sp.add_argument("--window", default="rect", choices=("rect", "hann"), help="Order window (default: %(default)s).")
        sp.add_argument("--freq", type=float, default=0.6, help="Frequency in THz (default: %(default)s).")
        sp.add_argument("--tilt", type=float, default=10.0, help="Reference tilt in degrees (default: %(default)s).")
        sp.add_argument("--ref-amp", type=float, default=1.0, help="Reference amplitude (default: %(default)s).")
        sp.add_argument("--z", type=float, default=20.0, help="Object-to-sensor distance in mm (default: %(default)s).")
        _run_dir(sp)
        sp.set_defaults(handler=f"holo_{name}")

    # restore
    restore = commands.add_parser("restore", help="Subspace-attention restoration network.")
    restore_sub = restore.add_subparsers(dest="action", metavar="ACTION")
    restore_sub.required = True
    tr = restore_sub.add_parser("train", help="Fit the network to feature stacks and ground truths.")
    tr.add_argument("--features", required=True, help="Feature views THZT file.")
    tr.add_argument("--truth", required=True, help="Ground-truth projections THZT file.")
    tr.add_argument("--epochs", type=int, default=200, help="Training epochs (default: %(default)s).")
    tr.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate (default: %(default)s).")
    tr.add_argument("--seed", type=int, default=0, help="Initialisation and shuffle seed (default: %(default)s).")
    tr.add_argument("--batch-size", type=int, default=4, help="Mini-batch size (default: %(default)s).")
    tr.add_argument("--every", type=int, default=3, help="Train on every N-th view (default: %(default)s).")
    tr.add_argument("--flip", action="store_true", help="Add horizontally flipped training samples.")
    tr.add_argument("--base-channels", type=int, default=16, help="Finest-branch width (default: %(default)s).")
    tr.add_argument("--subspace-dim", type=int, default=4, help="SAFM basis size (default: %(default)s).")
    _run_dir(tr)
    tr.set_defaults(handler="restore_train")
    inf = restore_sub.add_parser("infer", help="Restore every view of a feature file.")
    inf.add_argument("--params", required=True, help="Parameter archive directory.")
    inf.add_argument("--features", required=True, help="Feature views THZT file.")
    _run_dir(inf)
    inf.set_defaults(handler="restore_infer")

    # metrics
    met = commands.add_parser("metrics", help="PSNR / SSIM / cross-section MSE table.")
    met.add_argument("--truth", default=None, help="Ground-truth projections THZT file.")
    met.add_argument("--projections", nargs="*", default=[], metavar="NAME=PATH", help="Projections to score against --truth.")
    met.add_argument("--volume-truth", default=None, help="Reference volume THZT file.")
    met.add_argument("--volumes", nargs="*", default=[], metavar="NAME=PATH", help="Volumes to score against --volume-truth.")
    met.add_argument("--object", default="object", help="Object label for the table (default: %(default)s).")
    _run_dir(met)
    met.set_defaults(handler="metrics")

    # pipeline
    pipe = commands.add_parser("pipeline", help="End-to-end experiments.")
    pipe_sub = pipe.add_subparsers(dest="action", metavar="ACTION")
    pipe_sub.required = True
    demo = pipe_sub.add_parser("demo", help="Phantom to metrics CSV in one run.")
    demo.add_argument("--seed", type=int, default=None, help="Noise, initialisation and shuffle seed (required).")
    demo.add_argument("--size", type=int, default=64, help="Grid edge in voxels, divisible by 16 (default: %(default)s).")
    demo.add_argument("--preset", default="deer", help="Phantom preset (default: %(default)s).")
    demo.add_argument("--epochs", type=int, default=100, help="Training epochs (default: %(default)s).")
    demo.add_argument("--lr", type=float, default=2e-3, help="Adam learning rate (default: %(default)s).")
    demo.add_argument("--n-samples", type=int, default=512, help="Samples per trace (default: %(default)s).")
    demo.add_argument("--psf-waist", type=float, default=0.5, help="Beam waist at 1 THz in mm (default: %(default)s).")
    _run_dir(demo, "runs/demo")
    demo.set_defaults(handler="pipeline_demo", _required=("seed",))
    return parser


def _leaf_parser(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.ArgumentParser:
    """The innermost sub-parser selected by ``argv``."""
    current = parser
    remaining = list(argv)
    while True:
        actions = [a for a in current._actions if isinstance(a, argparse._SubParsersAction)]
        if not actions:
            return current
        choices = actions[0].choices
        picked = next((i for i, token in enumerate(remaining) if token in choices), None)
        if picked is None:
            return current
        current = choices[remaining[picked]]
        remaining = remaining[picked + 1 :]


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse flags; config-file values sit between built-in defaults and explicit flags."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    leaf = _leaf_parser(parser, argv)

    if args.config is not None:
        try:
            values: Dict[str, Any] = settings.load_config_file(args.config)
        except (OSError, ValueError) as exc:
            parser.error(f"cannot use config file {args.config}: {exc}")
        # keys may name the dest or any long flag (``lambda`` for ``--lambda``)
        known: Dict[str, str] = {}
        for action in list(parser._actions) + list(leaf._actions):
            known[action.dest] = action.dest
            for option in action.option_strings:
                if option.startswith("--"):
                    known[option[2:].replace("-", "_")] = action.dest
        unknown = sorted(set(values) - set(known))
        if unknown:
            LOGGER.warning("Ignoring config keys not used by this command: %s", ", ".join(unknown))
        values = {known[k]: v for k, v in values.items() if k in known}
        parser.set_defaults(**values)
        leaf.set_defaults(**values)
        args = parser.parse_args(argv)

    missing: List[str] = [name for name in getattr(args, "_required", ()) if getattr(args, name, None) is None]
    if missing:
        leaf.error("the following arguments are required: " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except UsageExit:
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    settings.configure_logging(args.verbose, args.quiet)
    settings.load_dotenv_if_available(not args.no_dotenv)
    try:
        threads = settings.resolve_threads(args.threads)
    except ValueError as exc:
        LOGGER.error("%s", exc)
        return EXIT_USAGE
    settings.pin_native_threads(threads)

    from lib import runtime, tensorio
    from scripts import commands

    runtime.configure(threads, progress=not args.quiet)
    args.threads = threads
    try:
        return commands.dispatch(args)
    except tensorio.ThztFormatError as exc:
        LOGGER.error("Malformed THZT input: %s", exc)
    except OSError as exc:
        LOGGER.error("I/O error: %s", exc)
    except ValueError as exc:
        LOGGER.error("Invalid data: %s", exc)
    return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
