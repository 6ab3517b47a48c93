"""Turns a compose file into traceable geometry, meshes, lights and cameras."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from src.particle_tracer.exceptions import ComposeError
from src.particle_tracer.interfaces.traceable import ITraceable
from src.particle_tracer.models.camera import CameraModel
from src.particle_tracer.models.compose import ComposeSpec, InstanceSpec
from src.particle_tracer.models.meshes import PointLight
from src.particle_tracer.models.particles import ParticleScene
from src.particle_tracer.models.settings import RenderSettings
from src.particle_tracer.services.acceleration.geometry import SceneGeometry
from src.particle_tracer.services.acceleration.instancing import Instance, InstancedGeometry
from src.particle_tracer.services.cameras.loader import load_cameras
from src.particle_tracer.services.io.obj import load_mesh
from src.particle_tracer.services.io.ply import load_ply
from src.particle_tracer.services.tracing.effects import MeshScene
from src.particle_tracer.utils.config_files import load_model, parse_model

logger = logging.getLogger(__name__)


@dataclass
class ComposedScene:
    traceable: ITraceable
    meshes: Optional[MeshScene]
    lights: List[PointLight]
    cameras: List[CameraModel]
    settings: RenderSettings
    max_bounces: int
    output: Optional[Path] = None


def _resolve(base: Path, relative: str) -> Path:
    path = Path(relative)
    path = path if path.is_absolute() else base / path
    if not path.exists():
        raise ComposeError(f"referenced file not found: {path}")
    return path


def _crop(scene: ParticleScene, spec: InstanceSpec) -> ParticleScene:
    """Particles centred inside the crop box; the instance then also clips hits to the box."""
    if spec.crop_min is None:
        return scene
    lo, hi = np.asarray(spec.crop_min), np.asarray(spec.crop_max)
    inside = np.all((scene.positions >= lo) & (scene.positions <= hi), axis=1)
    return scene.subset(np.nonzero(inside)[0])


def build_settings(base: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> RenderSettings:
    """RenderSettings from file values, with non-None ``overrides`` taking precedence."""
    merged = dict(base)
    merged.update({key: value for key, value in (overrides or {}).items() if value is not None})
    return parse_model(RenderSettings, merged, "render settings")


def transform_triangles(triangles: np.ndarray, transform: Sequence[Sequence[float]]) -> np.ndarray:
    m = np.asarray(transform, dtype=np.float64)
    return triangles @ m[:3, :3].T + m[:3, 3]


def build_composition(spec: ComposeSpec, base_dir: Union[str, Path],
                      overrides: Optional[Dict[str, Any]] = None) -> ComposedScene:
    base_dir = Path(base_dir)
    settings = build_settings(spec.settings, overrides)
    scenes: Dict[Path, ParticleScene] = {}

    def scene_for(relative: Optional[str]) -> ParticleScene:
        path = _resolve(base_dir, relative or spec.scene)
        if path not in scenes:
            scenes[path] = load_ply(path, dtype=np.float64)
        return scenes[path]

    if not spec.instances:
        traceable: ITraceable = SceneGeometry.from_settings(scene_for(None), settings)
    else:
        # instances sharing a scene file and crop share one child BVH
        children: Dict[tuple, SceneGeometry] = {}
        instances = []
        for inst in spec.instances:
            key = (inst.scene or spec.scene, inst.crop_min, inst.crop_max)
            if key not in children:
                children[key] = SceneGeometry.from_settings(_crop(scene_for(inst.scene), inst), settings)
            crop = (inst.crop_min, inst.crop_max) if inst.crop_min is not None else None
            instances.append(Instance(transform=np.asarray(inst.transform, dtype=np.float64),
                                      geometry=children[key], crop=crop))
        traceable = InstancedGeometry(instances)
        logger.info(f"Composed {len(instances)} instances over {len(children)} shared geometries.")

    meshes = None
    if spec.meshes:
        parts = [(transform_triangles(load_mesh(_resolve(base_dir, m.path)), m.transform), m.material)
                 for m in spec.meshes]
        meshes = MeshScene.from_meshes(parts)

    cameras = load_cameras(_resolve(base_dir, spec.camera))
    output = base_dir / spec.output if spec.output else None
    return ComposedScene(traceable=traceable, meshes=meshes, lights=list(spec.lights), cameras=cameras,
                         settings=settings, max_bounces=spec.max_bounces, output=output)


def load_compose(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> ComposedScene:
    """Loads a JSON/TOML compose file; unknown keys and missing referenced files raise ComposeError."""
    path = Path(path)
    spec = load_model(ComposeSpec, path, ComposeError)
    return build_composition(spec, path.parent, overrides)
