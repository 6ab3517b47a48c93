"""
Command implementations behind ``python -m src.main``: render, train, bench, compose and
make-toy. Each ``cmd_*`` takes the parsed argparse namespace and returns an exit code;
library errors propagate to the entry point, which maps them to exit codes.
"""
import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from src.particle_tracer.exceptions import ConfigError
from src.particle_tracer.models.camera import CameraModel
from src.particle_tracer.models.dataset import Dataset
from src.particle_tracer.models.particles import KernelType
from src.particle_tracer.models.settings import ProxyKind, RenderSettings, TracingAlgorithm
from src.particle_tracer.models.train_config import TrainConfig
from src.particle_tracer.optim.losses import psnr
from src.particle_tracer.optim.state import init_from_points, scene_extent
from src.particle_tracer.optim.trainer import Trainer, load_checkpoint
from src.particle_tracer.orchestrator import RenderOrchestrator
from src.particle_tracer.services.acceleration.geometry import SceneGeometry
from src.particle_tracer.services.cameras.loader import load_cameras
from src.particle_tracer.services.io.compose_loader import build_settings, load_compose
from src.particle_tracer.services.io.dataset import load_dataset
from src.particle_tracer.services.io.images import write_image
from src.particle_tracer.services.io.ply import load_ply
from src.particle_tracer.services.io.synthetic import write_toy_dataset
from src.particle_tracer.utils.config_files import load_model, parse_model

logger = logging.getLogger(__name__)

KERNEL_NAMES = {
    "gaussian": KernelType.GAUSSIAN,
    "generalized_gaussian": KernelType.GENERALIZED_GAUSSIAN,
    "gg": KernelType.GENERALIZED_GAUSSIAN,
    "surface": KernelType.SURFACE_2D,
    "cosine": KernelType.COSINE_MODULATED,
}

BENCH_COLUMNS = ["algorithm", "k", "proxy_kind", "wall_seconds", "psnr_vs_reference", "mean_hits",
                 "bvh_build_seconds", "rays"]


def _kernel(name: str) -> KernelType:
    try:
        return KERNEL_NAMES[name.lower()]
    except KeyError:
        raise argparse.ArgumentTypeError(f"unknown kernel {name!r}; choose from {', '.join(KERNEL_NAMES)}")


def add_common_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, default=None, help="Seed for every random choice")
    parser.add_argument("--deterministic", action="store_true",
                        help="Single worker so results are reproducible bit for bit")
    parser.add_argument("--threads", type=int, default=None, help="Worker processes (default: logical cores)")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--stats-json", action="store_true", help="Print run statistics as JSON on stdout")


def add_render_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--algorithm", choices=[a.value for a in TracingAlgorithm], default=None)
    parser.add_argument("--k", type=int, default=None, help="Hit buffer capacity")
    parser.add_argument("--kernel", type=_kernel, default=None, help="Render every particle with this kernel")
    parser.add_argument("--kernel-degree", type=float, default=None)
    parser.add_argument("--tmin", type=float, default=None, help="Early termination transmittance")
    parser.add_argument("--alpha-min", type=float, default=None)
    parser.add_argument("--spp", type=int, default=None, help="Samples per pixel")
    parser.add_argument("--proxy", choices=[p.value for p in ProxyKind], default=None)
    parser.add_argument("--sh-degree", type=int, default=None)
    parser.add_argument("--tile-size", type=int, default=None)
    parser.add_argument("--background", type=float, nargs=3, default=None)


def settings_overrides(args: argparse.Namespace, threads: int, seed: int) -> Dict[str, Any]:
    """RenderSettings keys from the flags; None means the flag was not given."""
    overrides = {
        "algorithm": getattr(args, "algorithm", None), "k": getattr(args, "k", None),
        "kernel": getattr(args, "kernel", None), "kernel_degree": getattr(args, "kernel_degree", None),
        "t_min_transmittance": getattr(args, "tmin", None), "alpha_min": getattr(args, "alpha_min", None),
        "spp": getattr(args, "spp", None), "proxy_kind": getattr(args, "proxy", None),
        "sh_degree": getattr(args, "sh_degree", None), "tile_size": getattr(args, "tile_size", None),
        "background": tuple(args.background) if getattr(args, "background", None) else None,
        "threads": threads, "seed": seed,
    }
    return overrides


def run_threads(args: argparse.Namespace, default: int) -> int:
    if args.deterministic:
        return 1
    threads = args.threads if args.threads is not None else default
    if threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {threads}")
    return threads


def emit_stats(args: argparse.Namespace, stats: Dict[str, Any]):
    if args.stats_json:
        json.dump(stats, sys.stdout, default=float)
        sys.stdout.write("\n")
        sys.stdout.flush()


def _output_paths(out: Path, cameras: List[CameraModel]) -> List[Path]:
    if len(cameras) == 1:
        return [out]
    return [out.with_name(f"{out.stem}_{i:03d}{out.suffix or '.png'}") for i in range(len(cameras))]


def cmd_render(args: argparse.Namespace, threads: int, seed: int) -> int:
    """Renders ``scene.ply`` from every camera in the camera file."""
    settings = build_settings({}, settings_overrides(args, threads, seed))
    scene = load_ply(args.scene, dtype=np.float64)
    cameras = load_cameras(args.camera)
    geometry = SceneGeometry.from_settings(scene, settings)
    orchestrator = RenderOrchestrator(geometry, settings)
    frames = []
    for camera, path in zip(cameras, _output_paths(Path(args.out), cameras)):
        output = orchestrator.render_image(camera)
        write_image(output.image, path)
        if args.sample_count_out:
            counts = output.sample_count.astype(np.float64) / max(settings.spp, 1)
            write_image(counts, Path(args.sample_count_out).with_name(f"{path.stem}_samples.png"))
        frames.append({"image": str(path), **output.stats})
    emit_stats(args, {
        "frames": frames, "bvh_build_seconds": geometry.build_seconds,
        "rays": sum(f["rays"] for f in frames), "wall_seconds": sum(f["wall_seconds"] for f in frames),
        "mean_hits": float(np.mean([f["mean_hits"] for f in frames])) if frames else 0.0,
    })
    return 0


def _train_config(args: argparse.Namespace, seed: int) -> TrainConfig:
    config = load_model(TrainConfig, args.config) if args.config else TrainConfig()
    updates = {} if args.seed is None else {"seed": seed}
    if args.iters is not None:
        updates["total_iters"] = args.iters
    # re-validate so the schedule clamps to the new iteration count
    return parse_model(TrainConfig, {**config.model_dump(), **updates}, "train config")


def cmd_train(args: argparse.Namespace, threads: int, seed: int) -> int:
    """Fits a scene to a dataset directory, writing checkpoints and metrics.csv to ``--out``."""
    config = _train_config(args, seed)
    dataset: Dataset = load_dataset(args.dataset)
    extent = scene_extent([v.camera for v in dataset.views])
    if args.resume:
        state = load_checkpoint(args.resume, config, extent)
    else:
        if dataset.points is None:
            raise ConfigError(f"{args.dataset} has no initialisation points; pass --resume with a checkpoint")
        state = init_from_points(dataset.points, dataset.point_colors, [v.camera for v in dataset.views], config)
    trainer = Trainer(state, dataset, args.out, threads)
    started = time.perf_counter()
    history = trainer.run()
    wall = time.perf_counter() - started
    test_psnr = trainer.evaluate(dataset.test_views)
    finished = [m for m in history if not m.skipped]
    emit_stats(args, {
        "iterations": trainer.state.iteration, "particles": len(trainer.state), "wall_seconds": wall,
        "final_loss": finished[-1].loss if finished else None,
        "train_psnr": finished[-1].psnr if finished else None,
        "test_psnr": test_psnr, "skipped_steps": len(history) - len(finished),
    })
    logger.info(f"Training finished after {trainer.state.iteration} iterations; held-out PSNR {test_psnr:.2f} dB.")
    return 0


def bench_rows(scene, camera: CameraModel, algorithms: List[TracingAlgorithm], ks: List[int],
               proxies: List[ProxyKind], base: RenderSettings) -> List[Dict[str, Any]]:
    """
    Sweeps algorithm x k x proxy kind on one camera. PSNR is measured against the k-buffer
    render with the default icosahedron proxy.
    """
    reference_settings = base.model_copy(update={"algorithm": TracingAlgorithm.KBUFFER,
                                                 "proxy_kind": ProxyKind.ICOSAHEDRON_CLAMPED})
    reference_geometry = SceneGeometry.from_settings(scene, reference_settings)
    reference = RenderOrchestrator(reference_geometry, reference_settings).render_image(camera).image
    rows = []
    for proxy in proxies:
        geometry = SceneGeometry.from_settings(scene, base.model_copy(update={"proxy_kind": proxy}))
        for algorithm in algorithms:
            for k in ks:
                settings = base.model_copy(update={"algorithm": algorithm, "k": k, "proxy_kind": proxy})
                output = RenderOrchestrator(geometry, settings).render_image(camera)
                rows.append({
                    "algorithm": algorithm.value, "k": k, "proxy_kind": proxy.value,
                    "wall_seconds": output.stats["wall_seconds"], "psnr_vs_reference": psnr(output.image, reference),
                    "mean_hits": output.mean_hits, "bvh_build_seconds": geometry.build_seconds,
                    "rays": output.stats["rays"],
                })
                logger.info(f"bench {algorithm.value} k={k} {proxy.value}: {rows[-1]['wall_seconds']:.2f}s, "
                            f"PSNR {rows[-1]['psnr_vs_reference']:.2f} dB")
    return rows


def cmd_bench(args: argparse.Namespace, threads: int, seed: int) -> int:
    """Writes one CSV row per swept configuration, averaged over the cameras of the path."""
    base = build_settings({}, settings_overrides(args, threads, seed))
    scene = load_ply(args.scene, dtype=np.float64)
    cameras = load_cameras(args.camera)
    algorithms = [TracingAlgorithm(a) for a in args.algorithms]
    proxies = [ProxyKind(p) for p in args.proxies]
    per_camera = [bench_rows(scene, cam, algorithms, args.ks, proxies, base) for cam in cameras]
    rows = []
    for i, first in enumerate(per_camera[0]):
        group = [rows_for_cam[i] for rows_for_cam in per_camera]
        row = dict(first)
        for key in ("wall_seconds", "psnr_vs_reference", "mean_hits"):
            row[key] = float(np.mean([g[key] for g in group]))
        row["rays"] = int(sum(g["rays"] for g in group))
        rows.append(row)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.DictWriter(handle, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    logger.info(f"Wrote {len(rows)} bench rows to {out}.")
    emit_stats(args, {"rows": rows})
    return 0


def cmd_compose(args: argparse.Namespace, threads: int, seed: int) -> int:
    """Renders a compose file (instances, meshes, lights, lens) from each of its cameras."""
    composed = load_compose(args.compose, settings_overrides(args, threads, seed))
    out = Path(args.out) if args.out else composed.output
    if out is None:
        raise ConfigError("no output path: pass --out or set 'output' in the compose file")
    orchestrator = RenderOrchestrator(composed.traceable, composed.settings, composed.meshes,
                                      composed.lights, composed.max_bounces)
    frames = []
    for camera, path in zip(composed.cameras, _output_paths(out, composed.cameras)):
        output = orchestrator.render_image(camera)
        write_image(output.image, path)
        frames.append({"image": str(path), **output.stats})
    emit_stats(args, {"frames": frames})
    return 0


def cmd_make_toy(args: argparse.Namespace, threads: int, seed: int) -> int:
    """Writes the synthetic toy dataset (views, dataset.json, ground-truth scene.ply)."""
    write_toy_dataset(args.out, count=args.particles, views=args.views, test_views=args.test_views,
                      resolution=args.resolution, seed=seed, threads=threads)
    emit_stats(args, {"dataset": str(args.out), "particles": args.particles, "views": args.views,
                      "test_views": args.test_views, "resolution": args.resolution})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m src.main",
                                     description="Differentiable ray tracing of volumetric particle scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    render = sub.add_parser("render", help="Render a particle scene")
    render.add_argument("scene", help="Particle checkpoint (.ply)")
    render.add_argument("camera", help="Camera file (JSON/TOML)")
    render.add_argument("--out", default="render.png")
    render.add_argument("--sample-count-out", default=None, help="Also write per-pixel sample counts next to this path")
    add_render_flags(render)
    add_common_flags(render)
    render.set_defaults(handler=cmd_render)

    train = sub.add_parser("train", help="Fit a particle scene to a dataset")
    train.add_argument("dataset", help="Dataset directory (dataset.json or COLMAP text model)")
    train.add_argument("--config", default=None, help="TrainConfig file (JSON/TOML)")
    train.add_argument("--out", default="runs/train")
    train.add_argument("--resume", default=None, help="Checkpoint .ply (with its .npz sidecar) to continue from")
    train.add_argument("--iters", type=int, default=None, help="Override total_iters")
    add_common_flags(train)
    train.set_defaults(handler=cmd_train)

    bench = sub.add_parser("bench", help="Sweep tracing algorithms, k and proxy kinds")
    bench.add_argument("scene")
    bench.add_argument("camera", help="Camera file; every camera in it is benchmarked")
    bench.add_argument("--out", default="bench.csv")
    bench.add_argument("--algorithms", nargs="+", default=[a.value for a in TracingAlgorithm],
                       choices=[a.value for a in TracingAlgorithm])
    bench.add_argument("--ks", nargs="+", type=int, default=[1, 4, 16, 64])
    bench.add_argument("--proxies", nargs="+", default=[ProxyKind.ICOSAHEDRON_CLAMPED.value],
                       choices=[p.value for p in ProxyKind])
    add_render_flags(bench)
    add_common_flags(bench)
    bench.set_defaults(handler=cmd_bench)

    compose = sub.add_parser("compose", help="Render a composition with meshes, instances and lights")
    compose.add_argument("compose", help="Compose file (JSON/TOML)")
    compose.add_argument("--out", default=None)
    add_render_flags(compose)
    add_common_flags(compose)
    compose.set_defaults(handler=cmd_compose)

    toy = sub.add_parser("make-toy", help="Write the synthetic toy dataset")
    toy.add_argument("out")
    toy.add_argument("--particles", type=int, default=200)
    toy.add_argument("--views", type=int, default=30)
    toy.add_argument("--test-views", type=int, default=5)
    toy.add_argument("--resolution", type=int, default=128)
    add_common_flags(toy)
    toy.set_defaults(handler=cmd_make_toy)
    return parser
