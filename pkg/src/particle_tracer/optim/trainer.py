"""
Scene fitting loop: render, loss, backward, Adam, then the schedule (SH degree, densify and
prune, opacity reset) and BVH maintenance (refit every step, rebuild after topology changes).
"""
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from src.particle_tracer.exceptions import NumericalError, SceneFormatError
from src.particle_tracer.grad import GradientBuffers, backward_image, backward_rays
from src.particle_tracer.models.dataset import Dataset, TrainingView
from src.particle_tracer.models.settings import RenderSettings
from src.particle_tracer.models.train_config import TrainConfig
from src.particle_tracer.optim.densify import TopologyDelta, densify_and_prune, reset_opacity
from src.particle_tracer.optim.losses import image_loss, l1_loss, psnr
from src.particle_tracer.optim.state import PARAM_NAMES, TrainState, make_optimizer
from src.particle_tracer.orchestrator import RenderOrchestrator
from src.particle_tracer.services.acceleration.geometry import SceneGeometry
from src.particle_tracer.services.cameras.raygen import sample_incoherent_batch
from src.particle_tracer.services.io.ply import load_ply, save_ply

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["iter", "loss", "psnr", "particles", "mean_hits"]
_STATISTICS = ("grad_accum", "grad_vector_accum", "observations", "weight_accum")


@dataclass
class StepMetrics:
    iteration: int
    loss: float
    psnr: float
    particles: int
    mean_hits: float
    phase: str = "image"
    skipped: bool = False


def raw_gradients(state: TrainState, grads: GradientBuffers) -> Dict[str, np.ndarray]:
    """Chain rule from activated-parameter gradients to the stored raw parameters."""
    q_raw = state.params["quaternion"]
    norm = np.linalg.norm(q_raw, axis=1, keepdims=True)
    safe = np.where(norm > 0.0, norm, 1.0)
    q_unit = q_raw / safe
    g_quat = (grads.quaternion - q_unit * np.sum(q_unit * grads.quaternion, axis=1, keepdims=True)) / safe
    scales = np.exp(state.params["scale"])
    active = (state.sh_degree + 1) ** 2
    sh_rest = grads.sh[:, 1:].copy()
    sh_rest[:, active - 1:] = 0.0
    return {
        "position": grads.position,
        "quaternion": np.where(norm > 0.0, g_quat, 0.0),
        "scale": np.where(np.isfinite(state.params["scale"]), grads.scale * scales, 0.0),
        "opacity": grads.opacity_logit,
        "sh_dc": grads.sh[:, :1],
        "sh_rest": sh_rest,
        "psi": grads.psi,
    }


def accumulate_statistics(state: TrainState, grads: GradientBuffers, camera_center: np.ndarray):
    """Positional-gradient norm scaled by half the particle-to-camera distance, in units of the scene extent."""
    seen = grads.hit_count > 0
    distance = np.linalg.norm(state.params["position"] - camera_center, axis=1)
    norm = np.linalg.norm(grads.position, axis=1) * 0.5 * distance / state.scene_extent
    state.grad_accum[seen] += norm[seen]
    state.grad_vector_accum[seen] += grads.position[seen]
    state.observations[seen] += 1
    state.weight_accum += grads.weight


class Trainer:
    """Runs the optimisation schedule of a TrainState against a dataset."""

    def __init__(self, state: TrainState, dataset: Dataset, out_dir: Optional[Union[str, Path]] = None,
                 threads: int = 1):
        if not dataset.views:
            raise ValueError("training needs at least one view")
        self.state = state
        self.dataset = dataset
        self.config: TrainConfig = state.config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.threads = threads
        self.history: List[StepMetrics] = []
        self.geometry = SceneGeometry(state.to_scene(), self.config.proxy_kind, self.config.alpha_min)
        logger.info(f"Trainer ready: {len(state)} particles, {len(dataset.views)} views, "
                    f"extent {state.scene_extent:.3f}.")

    @property
    def settings(self) -> RenderSettings:
        c = self.config
        return RenderSettings(k=c.k, alpha_min=c.alpha_min, t_min_transmittance=c.t_min_transmittance,
                              sh_degree=self.state.sh_degree, proxy_kind=c.proxy_kind, background=c.background,
                              seed=c.seed, threads=self.threads)

    def _image_step(self, settings: RenderSettings):
        view: TrainingView = self.dataset.views[int(self.state.rng.integers(len(self.dataset.views)))]
        output = RenderOrchestrator(self.geometry, settings).render_image(view.camera, self.threads)
        loss, g_image = image_loss(output.image, view.image, self.config.lambda_ssim)
        if not math.isfinite(loss):
            return loss, None, 0.0, output.mean_hits
        grads = backward_image(self.geometry, len(self.state), view.camera, settings, g_image, threads=self.threads)
        accumulate_statistics(self.state, grads, view.camera.pose0.center)
        return loss, grads, psnr(output.image, view.image), output.mean_hits

    def _ray_batch_step(self, settings: RenderSettings):
        views = self.dataset.views
        rays, colors = sample_incoherent_batch(views, self.config.incoherent_batch, self.state.rng)
        result = RenderOrchestrator(self.geometry, settings).trace_bundle(rays, self.threads)
        background = np.asarray(settings.background, dtype=np.float64)
        pred = result["radiance"] + result["transmittance"][:, None] * background
        live = rays.valid
        loss, g_pred = l1_loss(pred[live], colors[live])
        if not math.isfinite(loss):
            return loss, None, 0.0, float(result["hits"].mean())
        grads = GradientBuffers.zeros(len(self.state))
        for view_id in np.unique(rays.view_ids[live]):
            picked = live & (rays.view_ids == view_id)
            g = g_pred[picked[live]]
            part = backward_rays(self.geometry, len(self.state), rays.origins[picked], rays.directions[picked],
                                 settings, g, g @ background, self.threads)
            accumulate_statistics(self.state, part, views[view_id].camera.pose0.center)
            grads.add(part)
        return loss, grads, psnr(pred[live][None], colors[live][None]), float(result["hits"].mean())

    def _snapshot(self) -> dict:
        return {"params": {name: values.copy() for name, values in self.state.params.items()},
                "adam": {key: np.array(value, copy=True) for key, value in self.state.optimizer.state_dict().items()},
                "stats": {name: getattr(self.state, name).copy() for name in _STATISTICS}}

    def _restore(self, snapshot: dict):
        self.state.params = snapshot["params"]
        self.state.optimizer.load_state_dict(snapshot["adam"])
        for name, values in snapshot["stats"].items():
            setattr(self.state, name, values)

    def _apply_schedule(self) -> Optional[TopologyDelta]:
        c = self.config
        it = self.state.iteration
        if it % c.sh_increase_interval == 0 and self.state.sh_degree < c.max_sh_degree:
            self.state.sh_degree += 1
            logger.info(f"SH degree raised to {self.state.sh_degree} at iteration {it}.")
        delta = None
        if c.densify_from < it <= c.densify_until and it % c.densify_interval == 0:
            delta = densify_and_prune(self.state)
        if it % c.opacity_reset_interval == 0 and it <= c.densify_until:
            reset_opacity(self.state)
        return delta

    def train_step(self) -> StepMetrics:
        """One iteration; a non-finite loss skips the update and restores the previous parameters."""
        state = self.state
        settings = self.settings
        phase = "rays" if state.iteration >= self.config.incoherent_from else "image"
        snapshot = self._snapshot()
        try:
            step = self._ray_batch_step if phase == "rays" else self._image_step
            loss, grads, quality, mean_hits = step(settings)
            if grads is None:
                raise NumericalError(f"non-finite loss {loss}")
            state.optimizer.groups["position"].lr = state.position_lr()
            state.optimizer.step(state.params, raw_gradients(state, grads))
            if not all(np.all(np.isfinite(state.params[name][np.isfinite(snapshot['params'][name])]))
                       for name in PARAM_NAMES):
                raise NumericalError("parameter update produced non-finite values")
        except NumericalError as e:
            self._restore(snapshot)
            state.iteration += 1
            logger.warning(f"Iteration {state.iteration} skipped: {e}")
            metrics = StepMetrics(state.iteration, float('nan'), float('nan'), len(state), 0.0, phase, True)
            self.history.append(metrics)
            return metrics

        state.iteration += 1
        self._apply_schedule()
        if not self.geometry.update(state.to_scene()):
            logger.debug(f"BVH rebuilt at iteration {state.iteration}.")
        metrics = StepMetrics(state.iteration, loss, quality, len(state), mean_hits, phase)
        self.history.append(metrics)
        if state.iteration % self.config.log_interval == 0:
            logger.info(f"iter {state.iteration}: loss {loss:.5f}, PSNR {quality:.2f} dB, "
                        f"{len(state)} particles, mean hits {mean_hits:.2f}")
        return metrics

    def evaluate(self, views: Sequence[TrainingView]) -> float:
        """Mean PSNR over ``views``."""
        if not views:
            return float('nan')
        orchestrator = RenderOrchestrator(self.geometry, self.settings)
        scores = [psnr(orchestrator.render_image(v.camera, self.threads).image, v.image) for v in views]
        return float(np.mean(scores))

    def run(self, iterations: Optional[int] = None) -> List[StepMetrics]:
        """Trains until ``iterations`` more steps or total_iters, writing metrics and checkpoints to out_dir."""
        end = self.config.total_iters if iterations is None else min(self.state.iteration + iterations,
                                                                      self.config.total_iters)
        writer = None
        handle = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            metrics_path = self.out_dir / "metrics.csv"
            fresh = not metrics_path.exists() or self.state.iteration == 0
            handle = open(metrics_path, 'w' if fresh else 'a', newline='', encoding='utf-8')
            writer = csv.writer(handle)
            if fresh:
                writer.writerow(METRICS_COLUMNS)
        produced = []
        try:
            while self.state.iteration < end:
                m = self.train_step()
                produced.append(m)
                if writer is not None:
                    writer.writerow([m.iteration, m.loss, m.psnr, m.particles, m.mean_hits])
                interval = self.config.checkpoint_interval
                if self.out_dir is not None and interval and m.iteration % interval == 0:
                    save_checkpoint(self.state, self.out_dir / f"checkpoint_{m.iteration:06d}.ply")
        finally:
            if handle is not None:
                handle.close()
        if self.out_dir is not None:
            save_checkpoint(self.state, self.out_dir / "checkpoint.ply")
        return produced


def _sidecar(path: Path) -> Path:
    return path.with_suffix('.npz')


def save_checkpoint(state: TrainState, path: Union[str, Path]):
    """PLY scene plus an .npz sidecar with raw parameters, optimizer moments, statistics and RNG state."""
    path = Path(path)
    save_ply(state.to_scene(np.float32), path, sh_degree=3)
    arrays = {f"param_{name}": values for name, values in state.params.items()}
    arrays.update(state.optimizer.state_dict())
    arrays.update({
        "kernels": state.kernels, "degrees": state.degrees, "iteration": np.array(state.iteration),
        "sh_degree": np.array(state.sh_degree), "scene_extent": np.array(state.scene_extent),
        "grad_accum": state.grad_accum, "grad_vector_accum": state.grad_vector_accum,
        "observations": state.observations, "weight_accum": state.weight_accum,
        "rng_state": np.array(json.dumps(state.rng.bit_generator.state)),
    })
    np.savez(_sidecar(path), **arrays)
    logger.info(f"Checkpoint written to {path} at iteration {state.iteration}.")


def load_checkpoint(path: Union[str, Path], config: TrainConfig, scene_extent: Optional[float] = None) -> TrainState:
    """
    Restores a TrainState. With the .npz sidecar the state is exact; a bare PLY starts a fresh
    optimizer at iteration 0 (``scene_extent`` is then required).
    """
    path = Path(path)
    sidecar = _sidecar(path)
    if not sidecar.exists():
        if scene_extent is None:
            raise SceneFormatError(f"{sidecar} not found and no scene extent given")
        return TrainState.from_scene(load_ply(path, dtype=np.float64), config, scene_extent)
    with np.load(sidecar) as data:
        params = {name: np.array(data[f"param_{name}"]) for name in PARAM_NAMES}
        extent = float(data["scene_extent"])
        optimizer = make_optimizer(config, extent, len(params["position"]))
        optimizer.load_state_dict({key: data[key] for key in data.files if key.startswith("adam_")})
        rng = np.random.default_rng()
        rng.bit_generator.state = json.loads(str(data["rng_state"]))
        state = TrainState(
            params=params, kernels=np.array(data["kernels"]), degrees=np.array(data["degrees"]),
            optimizer=optimizer, scene_extent=extent, config=config, iteration=int(data["iteration"]),
            sh_degree=int(data["sh_degree"]), grad_accum=np.array(data["grad_accum"]),
            grad_vector_accum=np.array(data["grad_vector_accum"]), observations=np.array(data["observations"]),
            weight_accum=np.array(data["weight_accum"]), rng=rng,
        )
    logger.info(f"Resumed from {path} at iteration {state.iteration} with {len(state)} particles.")
    return state


def metrics_rows(history: Sequence[StepMetrics]) -> List[dict]:
    return [asdict(m) for m in history]
