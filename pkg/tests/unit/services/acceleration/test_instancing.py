import numpy as np
import pytest

from src.particle_tracer.exceptions import ComposeError
from src.particle_tracer.models.particles import ParticleScene
from src.particle_tracer.models.settings import RenderSettings
from src.particle_tracer.services.acceleration.geometry import SceneGeometry
from src.particle_tracer.services.acceleration.instancing import Instance, InstancedGeometry, transform_box
from src.particle_tracer.services.tracing.kbuffer import collect_hit_sequence, march
from tests.conftest import make_column, make_scene


def _placed(scene: ParticleScene, scale: float, offset) -> ParticleScene:
    return ParticleScene(positions=scene.positions * scale + offset, quaternions=scene.quaternions,
                         scales=scene.scales * scale, opacities=scene.opacities, sh=scene.sh,
                         sh_degree=scene.sh_degree, dtype=np.float64)


def _transform(scale: float, offset) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] *= scale
    m[:3, 3] = offset
    return m


def _rays(count: int, seed: int, lo: np.ndarray, hi: np.ndarray):
    # origins inside the scene box, so both layouts start marching at t = 0
    rng = np.random.default_rng(seed)
    origins = 0.5 * (lo + hi) + rng.uniform(-0.1, 0.1, (count, 3)) * (hi - lo)
    directions = rng.standard_normal((count, 3))
    return origins, directions / np.linalg.norm(directions, axis=1, keepdims=True)


def test_instances_match_duplicated_particles():
    scene = make_scene(8, seed=4, sh_degree=0)
    child = SceneGeometry(scene)
    placements = [(1.0, np.zeros(3)), (1.5, np.array([2.0, 0.0, 0.5]))]
    instanced = InstancedGeometry([Instance(_transform(s, off), child) for s, off in placements])
    flat = SceneGeometry(_placed(scene, *placements[0]).concat(_placed(scene, *placements[1])))
    settings = RenderSettings(t_min_transmittance=0.0, sh_degree=0)
    for o, d in zip(*_rays(25, 1, *flat.bounds())):
        a = march(instanced, o, d, settings)
        b = march(flat, o, d, settings)
        np.testing.assert_allclose(a.radiance, b.radiance, atol=1e-9)
        assert a.transmittance == pytest.approx(b.transmittance, abs=1e-9)
        assert a.hit_count == b.hit_count


def test_child_geometry_is_shared():
    child = SceneGeometry(make_scene(3, seed=1))
    instanced = InstancedGeometry([Instance(_transform(1.0, [i * 3.0, 0.0, 0.0]), child) for i in range(4)])
    assert len(instanced) == 4 * len(child)
    assert all(inst.geometry is child for inst in instanced.instances)


def test_resolve_maps_global_primitives():
    child = SceneGeometry(make_scene(3, seed=1))
    instanced = InstancedGeometry([Instance(_transform(1.0, np.zeros(3)), child),
                                   Instance(_transform(2.0, [5.0, 0.0, 0.0]), child)])
    hit = instanced.resolve(len(child) + 21, np.array([5.0, 0.0, -4.0]), np.array([0.0, 0.0, 2.0]))
    assert hit.instance == 1
    assert hit.particle == 1
    assert hit.key == 3 + 1
    np.testing.assert_allclose(hit.origin, [0.0, 0.0, -2.0])
    np.testing.assert_allclose(hit.direction, [0.0, 0.0, 1.0])


def test_hit_sequence_is_ordered_across_instances():
    child = SceneGeometry(make_scene(6, seed=2))
    instanced = InstancedGeometry([Instance(_transform(1.0, [0.0, 0.0, z]), child) for z in (0.0, 0.7, 1.4)])
    sequence = collect_hit_sequence(instanced, np.array([0.0, 0.0, -6.0]), np.array([0.0, 0.0, 1.0]), k=3)
    assert sequence == sorted(sequence)
    assert len(set(sequence)) == len(sequence)


def test_bounds_cover_transformed_children():
    child = SceneGeometry(make_scene(3, seed=1))
    m = _transform(2.0, [1.0, 2.0, 3.0])
    instanced = InstancedGeometry([Instance(m, child)])
    expected_lo, expected_hi = transform_box(m, *child.bounds())
    lo, hi = instanced.bounds()
    assert np.all(lo <= expected_lo) and np.all(hi >= expected_hi)


def test_singular_transform_rejected():
    child = SceneGeometry(make_scene(2, seed=1))
    with pytest.raises(ComposeError):
        InstancedGeometry([Instance(np.diag([1.0, 0.0, 1.0, 1.0]), child)])


def test_empty_children_are_skipped():
    empty = SceneGeometry(make_scene(0))
    full = SceneGeometry(make_scene(2, seed=1))
    instanced = InstancedGeometry([Instance(np.eye(4), empty), Instance(np.eye(4), full)])
    result = march(instanced, np.array([0.0, 0.0, -6.0]), np.array([0.0, 0.0, 1.0]), RenderSettings())
    assert np.isfinite(result.transmittance)


# entries along z of the column particles sit near -2.3, -1.3, -0.3, 0.7 and 1.7
CROP_Z = (np.array([-1.0, -1.0, -1.5]), np.array([1.0, 1.0, 1.5]))


def test_crop_box_clips_hits():
    column = make_column(5, spacing=1.0, scale=0.1)
    cropped = InstancedGeometry([Instance(np.eye(4), SceneGeometry(column), crop=CROP_Z)])
    inside = SceneGeometry(column.subset(np.array([1, 2, 3])))
    settings = RenderSettings(t_min_transmittance=0.0, sh_degree=0)
    o, d = np.array([0.01, 0.02, -6.0]), np.array([0.0, 0.0, 1.0])
    a = march(cropped, o, d, settings)
    b = march(inside, o, d, settings)
    assert a.hit_count == b.hit_count == 3
    np.testing.assert_allclose(a.radiance, b.radiance, atol=1e-9)
    assert a.transmittance == pytest.approx(b.transmittance, abs=1e-9)


def test_crop_box_follows_the_instance_transform():
    column = make_column(5, spacing=1.0, scale=0.1)
    shifted = InstancedGeometry([Instance(_transform(1.0, [3.0, 0.0, 0.0]), SceneGeometry(column), crop=CROP_Z)])
    hits = collect_hit_sequence(shifted, np.array([3.01, 0.02, -6.0]), np.array([0.0, 0.0, 1.0]), k=8)
    particles = [shifted.resolve(prim, np.zeros(3), np.ones(3)).particle for _, prim in hits]
    assert particles == [1, 2, 3]
    lo, hi = shifted.bounds()
    assert lo[2] >= -1.5 - 1e-3 and hi[2] <= 1.5 + 1e-3
    assert lo[0] >= 2.0 - 1e-3


def test_crop_box_missing_the_child_leaves_nothing_to_trace():
    column = make_column(3, spacing=1.0, scale=0.1)
    far = (np.array([5.0, 5.0, 5.0]), np.array([6.0, 6.0, 6.0]))
    instanced = InstancedGeometry([Instance(np.eye(4), SceneGeometry(column), crop=far)])
    assert collect_hit_sequence(instanced, np.array([0.0, 0.0, -6.0]), np.array([0.0, 0.0, 1.0]), k=4) == []


def test_inverted_crop_box_rejected():
    child = SceneGeometry(make_column(2))
    with pytest.raises(ComposeError):
        InstancedGeometry([Instance(np.eye(4), child, crop=(np.ones(3), np.zeros(3)))])
