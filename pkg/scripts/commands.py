"""
Subcommand handlers for ``thzlab``.

Every handler takes the parsed namespace, reads its THZT inputs, writes its
outputs under ``--run-dir`` together with a ``manifest.yml`` and returns an
exit code. Data problems surface as exceptions; ``thzlab.main`` maps them to
exit code 2.
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from imaging import cs, forward_sim, holo, metrics, phantom, physics, spectral, tomo
from imaging.physics import PulseModel
from lib import runtime, settings, tensorio
from lib.tensorio import Image2D
from restoration import train as training
from restoration.sarnet import SarnetConfig
from scripts import pipeline

LOGGER = logging.getLogger(__name__)


def _flags(args: argparse.Namespace) -> Dict[str, object]:
    return {k: v for k, v in vars(args).items() if k not in ("handler", "config")}


def _finish(args: argparse.Namespace, command: str, inputs: Sequence[Path], outputs: Sequence[Path]) -> int:
    settings.write_manifest(args.run_dir, command, _flags(args), inputs, outputs)
    for path in outputs:
        LOGGER.info("Wrote %s", path)
    return 0


def _run_dir(args: argparse.Namespace) -> Path:
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


# ---------------------------------------------------------------------------
# phantom
# ---------------------------------------------------------------------------


def phantom_gen(args: argparse.Namespace) -> int:
    run_dir = _run_dir(args)
    presets = phantom.load_presets(args.presets) if args.presets else None
    p = phantom.build_preset(args.preset, args.size, args.pitch, presets=presets)
    out = run_dir / "phantom.thzt"
    phantom.save_phantom(p, out)
    preview = run_dir / "phantom_mid.pgm"
    tensorio.export_pgm(p.occupancy[p.shape[0] // 2], preview)
    inputs = [Path(args.presets)] if args.presets else []
    return _finish(args, "phantom gen", inputs, [out, preview])


def phantom_project(args: argparse.Namespace) -> int:
    run_dir = _run_dir(args)
    p = phantom.load_phantom(args.phantom)
    angles = np.arange(args.n_views) * args.angle_step
    truths = [phantom.ground_truth_projection(p, float(a) % 360.0) for a in angles]
    out = run_dir / "ground_truth.thzt"
    tomo.save_projections(truths, angles, p.pitch_mm, out)
    return _finish(args, "phantom project", [Path(args.phantom)], [out])


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def scan_config_from_args(args: argparse.Namespace, p: phantom.Phantom) -> forward_sim.ScanConfig:
    return forward_sim.scaled_config(
        p.shape[2],
        p.pitch_mm,
        n_views=args.n_views,
        angle_step_deg=args.angle_step,
        angular_range_deg=args.n_views * args.angle_step,
        pulse=PulseModel(n_samples=args.n_samples),
        noise_dynamic_range_db=args.noise_db,
        rng_seed=args.seed,
        fresnel=not args.no_fresnel,
        psf_waist_mm=args.psf_waist,
    )


def simulate_ct(args: argparse.Namespace) -> int:
    run_dir = _run_dir(args)
    p = phantom.load_phantom(args.phantom)
    cube = forward_sim.simulate_scan(p, scan_config_from_args(args, p))
    if args.flip:
        cube = forward_sim.augment_flip(cube)
    out = run_dir / "scan.thzt"
    forward_sim.save_scan(cube, out)
    return _finish(args, "simulate ct", [Path(args.phantom)], [out])


# ---------------------------------------------------------------------------
# extract
# ---------------------------------------------------------------------------


def view_features(
    traces: np.ndarray,
    bands: np.ndarray,
    reference: spectral.Spectrum,
) -> Tuple[spectral.FeatureStack, np.ndarray]:
    return spectral.feature_stack(traces, bands, reference), spectral.raw_projection(traces)


def extract_features(args: argparse.Namespace) -> int:
    run_dir = _run_dir(args)
    cube = forward_sim.load_scan(args.scan)
    cfg = cube.config
    bands = spectral.select_water_bands(cfg.water)
    reference = spectral.fft_trace(forward_sim.reference_trace(cfg))

    results = runtime.parallel_map(
        lambda v: view_features(cube.view(v), bands, reference),
        list(range(cube.n_views)),
        desc="features",
    )
    stacks = [stack for stack, _ in results]
    raws = [raw for _, raw in results]

    features_path = run_dir / "features.thzt"
    raw_path = run_dir / "raw_projections.thzt"
    bands_path = run_dir / "bands.csv"
    spectral.save_feature_views(stacks, features_path, cube.angles_deg, cfg.x_step_mm)
    tomo.save_projections(raws, cube.angles_deg, cfg.x_step_mm, raw_path, source="time-max")
    tensorio.export_csv([(str(i), [f]) for i, f in enumerate(bands)], bands_path, header=("band", "freq_thz"))
    outputs = [features_path, raw_path, bands_path]
    inputs = [Path(args.scan)]
    if args.thickness:
        thickness_path = run_dir / "thickness.thzt"
        ref_trace = forward_sim.reference_trace(cfg)
        f_center = physics.center_frequency(ref_trace)
        if args.index is not None:
            material, index = "explicit", float(args.index)
        else:
            spec = physics.load_material_csv(args.material)
            material, index = spec.name, physics.time_of_flight_index(spec, ref_trace)
            inputs.append(Path(args.material))
        LOGGER.info("Thickness maps use n = %.4f (%s at %.3f THz)", index, material, f_center)
        maps = [spectral.thickness_image(cube.view(v), ref_trace, index) for v in range(cube.n_views)]
        tomo.save_projections(
            maps,
            cube.angles_deg,
            cfg.x_step_mm,
            thickness_path,
            source="time-of-flight",
            material=material,
            index=index,
            center_freq_thz=f_center,
        )
        outputs.append(thickness_path)
    return _finish(args, "extract features", inputs, outputs)


# ---------------------------------------------------------------------------
# reconstruct / volume
# ---------------------------------------------------------------------------


def _sinogram_from(path: Path, row: int) -> tomo.Sinogram:
    data, meta = tensorio.load_tensor(path)
    if data.ndim == 2:
        if "angles_deg" not in meta:
            raise tensorio.ThztFormatError(f"{path}: sidecar lacks angles_deg")
        return tomo.Sinogram(data, meta["angles_deg"], float(meta.get("bin_pitch_mm", meta.get("pitch_mm", 1.0))))
    views, angles, pitch = tomo.load_projections(path)
    z = views.shape[1] // 2 if row is None else row
    if not 0 <= z < views.shape[1]:
        raise ValueError(f"row {z} outside projections of height {views.shape[1]}")
    data, angles = tomo.wrap_angles(views[:, z, :], angles)
    return tomo.Sinogram(data, angles, pitch)


def reconstruct(args: argparse.Namespace) -> int:
    run_dir = _run_dir(args)
    sino = _sinogram_from(Path(args.input), args.row)
    outputs: List[Path] = []
    if args.method == "fbp":
        image = tomo.fbp(sino, args.filter)
    else:
        residuals: List[float] = []
        image = tomo.sart(sino, args.iters, args.relax, residuals=residuals)
        residual_path = run_dir / "sart_residuals.csv"
        tensorio.export_csv([(str(k + 1), [r]) for k, r in enumerate(residuals)], residual_path, header=("sweep", "residual"))
        outputs.append(residual_path)
    out = run_dir / f"{args.method}.thzt"
    tensorio.save_image(image, out, method=args.method)
    preview = run_dir / f"{args.method}.pgm"
    tensorio.export_pgm(image, preview)
    return _finish(args, f"reconstruct {args.method}", [Path(args.input)], [out, preview] + outputs)


def volume(args: argparse.Namespace) -> int:
    run_dir = _run_dir(args)
    views, angles, pitch = tomo.load_projections(args.projections)
    vol = tomo.reconstruct_volume(list(views), angles, args.filter, binarize=args.binarize, pitch_mm=pitch)
    out = run_dir / "volume.thzt"
    tensorio.save_volume(vol, out, binarized=args.binarize)
    preview = run_dir / "volume_mid.pgm"
    tensorio.export_pgm(vol.slice(vol.shape[0] // 2), preview)
    return _finish(args, "volume", [Path(args.projections)], [out, preview])


# ---------------------------------------------------------------------------
# cs / holo
# ---------------------------------------------------------------------------


def cs_solve(args: argparse.Namespace) -> int:
    run_dir = _run_dir(args)
    image = tensorio.load_image(args.image)
    n = image.data.size
    m = max(1, int(round(args.ratio * n)))
    masks = cs.make_sensing_matrix(args.pattern, m, n, seed=args.seed)
    rng = runtime.item_rng(args.seed, 0) if args.noise_db is not None else None
    if args.fresnel_z is not None:
        op = cs.fresnel_operator(masks, args.fresnel_z, args.freq, image.shape, image.pitch_mm)
        s = op.matvec(image.data.reshape(-1))
        if rng is not None:
            peak = float(np.max(np.abs(s)))
            s = forward_sim.add_noise(s.real, args.noise_db, rng, peak) + 1j * forward_sim.add_noise(s.imag, args.noise_db, rng, peak)
    else:
        op = masks
        s = forward_sim.cs_measure(masks, image, args.noise_db, rng)

    if args.continuation:
        result = cs.solve_continuation(op, s, args.lam, args.solver, iters=args.iters, tol=args.tol)
    else:
        result = cs.SOLVERS[args.solver](op, s, args.lam, args.iters, args.tol)
    recon = Image2D(result.x.reshape(image.shape), image.pitch_mm)
    LOGGER.info("%s finished after %d objective evaluations: %.6g", args.solver, len(result.history), result.history[-1])

    out = run_dir / "cs_recon.thzt"
    history = run_dir / "cs_history.csv"
    preview = run_dir / "cs_recon.pgm"
    tensorio.save_image(recon, out, solver=args.solver, lam=args.lam, m=m, n=n)
    cs.write_history(result.history, history)
    tensorio.export_pgm(recon, preview)
    return _finish(args, "cs solve", [Path(args.image)], [out, history, preview])


def holo_sim(args: argparse.Namespace) -> int:
    run_dir = _run_dir(args)
    image = tensorio.load_image(args.image)
    obj = holo.ComplexField2D(image.data.astype(np.complex128), image.pitch_mm, args.freq)
    at_sensor = holo.angular_spectrum_propagate(obj, args.z)
    hologram = holo.synthesize_hologram(at_sensor, args.tilt, args.ref_amp)
    out = run_dir / "hologram.thzt"
    tensorio.save_image(hologram, out, freq_thz=args.freq, tilt_deg=args.tilt, ref_amp=args.ref_amp, z_mm=args.z)
    preview = run_dir / "hologram.pgm"
    tensorio.export_pgm(hologram, preview)
    return _finish(args, "holo sim", [Path(args.image)], [out, preview])


def holo_reconstruct(args: argparse.Namespace) -> int:
    run_dir = _run_dir(args)
    hologram = tensorio.load_image(args.hologram)
    field = holo.reconstruct_offaxis(hologram, args.tilt, args.ref_amp, args.z, args.freq, holo.OrderWindow(args.window))
    out = run_dir / "object_field.thzt"
    tensorio.save_tensor(out, field.field, kind="complex_field", pitch_mm=field.pitch_mm, freq_thz=field.freq_thz)
    preview = run_dir / "object_amplitude.pgm"
    tensorio.export_pgm(np.abs(field.field), preview)
    return _finish(args, "holo reconstruct", [Path(args.hologram)], [out, preview])


# ---------------------------------------------------------------------------
# restore
# ---------------------------------------------------------------------------


def _truths(path: Path, expected: int) -> List[Image2D]:
    views, _, pitch = tomo.load_projections(path)
    if views.shape[0] != expected:
        raise ValueError(f"{path}: {views.shape[0]} ground truths for {expected} feature stacks")
    return [Image2D(v, pitch) for v in views]


def restore_train(args: argparse.Namespace) -> int:
    run_dir = _run_dir(args)
    stacks, _, _ = spectral.load_feature_views(args.features)
    truths = _truths(Path(args.truth), len(stacks))
    chosen = [i for i in range(len(stacks)) if i % args.every == 0]
    dataset = [(stacks[i], truths[i]) for i in chosen]
    if args.flip:
        dataset += [(stacks[i].flipped(), Image2D(truths[i].data[:, ::-1].copy(), truths[i].pitch_mm)) for i in chosen]
    cfg = SarnetConfig(base_channels=args.base_channels, subspace_dim=args.subspace_dim)
    result = training.train(dataset, args.epochs, args.lr, args.seed, cfg, args.batch_size)

    params_dir = run_dir / "params"
    training.save_parameters(result.net, params_dir)
    losses = run_dir / "losses.csv"
    tensorio.export_csv([(str(k + 1), [loss]) for k, loss in enumerate(result.losses)], losses, header=("epoch", "loss"))
    return _finish(args, "restore train", [Path(args.features), Path(args.truth)], [params_dir / training.MANIFEST_NAME, losses])


def restore_infer(args: argparse.Namespace) -> int:
    run_dir = _run_dir(args)
    net = training.load_parameters(args.params)
    stacks, angles, pitch = spectral.load_feature_views(args.features)
    restored = training.infer(net, stacks, pitch)
    out = run_dir / "restored_projections.thzt"
    tomo.save_projections(restored, angles, pitch, out, source="sarnet")
    inputs = [Path(args.params) / training.MANIFEST_NAME, Path(args.features)]
    return _finish(args, "restore infer", inputs, [out])


# ---------------------------------------------------------------------------
# metrics / pipeline
# ---------------------------------------------------------------------------


def _named_paths(values: Sequence[str]) -> List[Tuple[str, Path]]:
    pairs = []
    for value in values:
        name, sep, path = value.partition("=")
        if not sep or not name or not path:
            raise ValueError(f"expected NAME=PATH, got {value!r}")
        pairs.append((name, Path(path)))
    return pairs


def metrics_cmd(args: argparse.Namespace) -> int:
    run_dir = _run_dir(args)
    results: Dict[str, Dict[str, Dict[str, float]]] = {}
    inputs: List[Path] = []

    if args.truth:
        truth, _, _ = tomo.load_projections(args.truth)
        inputs.append(Path(args.truth))
        for name, path in _named_paths(args.projections):
            views, _, _ = tomo.load_projections(path)
            inputs.append(path)
            if views.shape != truth.shape:
                raise ValueError(f"{path}: shape {views.shape} differs from ground truth {truth.shape}")
            entry = results.setdefault(name, {}).setdefault(args.object, {})
            entry["psnr"] = float(np.mean([metrics.psnr(v, t) for v, t in zip(views, truth)]))
            entry["ssim"] = float(np.mean([metrics.ssim(v, t) for v, t in zip(views, truth)]))

    if args.volume_truth:
        reference = tensorio.load_volume(args.volume_truth)
        inputs.append(Path(args.volume_truth))
        for name, path in _named_paths(args.volumes):
            vol = tensorio.load_volume(path)
            inputs.append(path)
            results.setdefault(name, {}).setdefault(args.object, {})["mse"] = metrics.mse_cross_sections(vol, reference)

    if not results:
        raise ValueError("nothing to score: give --truth with --projections and/or --volume-truth with --volumes")
    out = run_dir / "metrics.csv"
    tensorio.export_csv(metrics.metrics_table(results), out, header=("method", "object") + metrics.METRIC_NAMES)
    return _finish(args, "metrics", inputs, [out])


def pipeline_demo(args: argparse.Namespace) -> int:
    result = pipeline.run_demo(
        seed=args.seed,
        size=args.size,
        run_dir=Path(args.run_dir),
        preset=args.preset,
        epochs=args.epochs,
        lr=args.lr,
        n_samples=args.n_samples,
        psf_waist_mm=args.psf_waist,
    )
    settings.write_manifest(args.run_dir, "pipeline demo", _flags(args), [], result.outputs)
    for method, per_object in sorted(result.metrics.items()):
        for obj, values in per_object.items():
            LOGGER.info("%s/%s: %s", method, obj, ", ".join(f"{k}={v:.4g}" for k, v in sorted(values.items())))
    return 0


HANDLERS = {
    "phantom_gen": phantom_gen,
    "phantom_project": phantom_project,
    "simulate_ct": simulate_ct,
    "extract_features": extract_features,
    "reconstruct": reconstruct,
    "volume": volume,
    "cs_solve": cs_solve,
    "holo_sim": holo_sim,
    "holo_reconstruct": holo_reconstruct,
    "restore_train": restore_train,
    "restore_infer": restore_infer,
    "metrics": metrics_cmd,
    "pipeline_demo": pipeline_demo,
}


def dispatch(args: argparse.Namespace) -> int:
    return HANDLERS[args.handler](args)
