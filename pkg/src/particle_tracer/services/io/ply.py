"""
Binary little-endian PLY checkpoints in the 3D Gaussian Splatting vertex layout:

    x y z nx ny nz f_dc_0..2 f_rest_0..(3*(K-1)-1) opacity scale_0..2 rot_0..3

``f_rest`` is channel-major (all red coefficients, then green, then blue), opacity is stored
as a logit, scales as logs and rotations as raw w-first quaternions. Scenes holding
non-Gaussian particles append ``kernel_type kernel_degree psi_0 psi_1 psi_2``.
"""
import logging
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.special import expit, logit

from src.particle_tracer.exceptions import SceneFormatError
from src.particle_tracer.models.particles import SH_COEFFS, KernelType, ParticleScene

logger = logging.getLogger(__name__)

_PLY_TYPES = {
    'char': 'i1', 'int8': 'i1', 'uchar': 'u1', 'uint8': 'u1',
    'short': '<i2', 'int16': '<i2', 'ushort': '<u2', 'uint16': '<u2',
    'int': '<i4', 'int32': '<i4', 'uint': '<u4', 'uint32': '<u4',
    'float': '<f4', 'float32': '<f4', 'double': '<f8', 'float64': '<f8',
}
_SH_REST_COUNTS = {0: 0, 9: 1, 24: 2, 45: 3}
_REQUIRED = ['x', 'y', 'z', 'f_dc_0', 'f_dc_1', 'f_dc_2', 'opacity',
             'scale_0', 'scale_1', 'scale_2', 'rot_0', 'rot_1', 'rot_2', 'rot_3']
OPACITY_EPS = 1e-7


def vertex_properties(sh_degree: int = 3, with_kernels: bool = False) -> List[Tuple[str, str]]:
    """(name, PLY type) of every vertex property written for a scene."""
    rest = 3 * ((sh_degree + 1) ** 2 - 1)
    names = ['x', 'y', 'z', 'nx', 'ny', 'nz', 'f_dc_0', 'f_dc_1', 'f_dc_2']
    names += [f'f_rest_{i}' for i in range(rest)]
    names += ['opacity', 'scale_0', 'scale_1', 'scale_2', 'rot_0', 'rot_1', 'rot_2', 'rot_3']
    props = [(name, 'float') for name in names]
    if with_kernels:
        props += [('kernel_type', 'uchar'), ('kernel_degree', 'float'),
                  ('psi_0', 'float'), ('psi_1', 'float'), ('psi_2', 'float')]
    return props


def ply_header(count: int, properties: List[Tuple[str, str]]) -> bytes:
    lines = ['ply', 'format binary_little_endian 1.0', f'element vertex {count}']
    lines += [f'property {ptype} {name}' for name, ptype in properties]
    lines.append('end_header')
    return ('\n'.join(lines) + '\n').encode('ascii')


def _parse_header(data: bytes) -> Tuple[int, List[Tuple[str, str]], int]:
    """Returns (vertex count, properties, byte offset of the body)."""
    end = data.find(b'end_header\n')
    if not data.startswith(b'ply\n') or end < 0:
        raise SceneFormatError("not a PLY file (missing 'ply' magic or 'end_header')", byte_offset=0)
    body_offset = end + len(b'end_header\n')
    count = None
    properties: List[Tuple[str, str]] = []
    in_vertex = False
    offset = 0
    for raw in data[:end].split(b"\n"):
        line = raw.decode('ascii', errors='replace').strip()
        fields = line.split()
        line_offset = offset
        offset += len(raw) + 1
        if not fields or fields[0] in ('ply', 'comment', 'obj_info'):
            continue
        if fields[0] == 'format':
            if len(fields) < 2 or fields[1] != 'binary_little_endian':
                raise SceneFormatError(f"unsupported PLY encoding {line!r}; only binary_little_endian is read",
                                       byte_offset=line_offset)
        elif fields[0] == 'element':
            if len(fields) != 3 or not fields[2].isdigit():
                raise SceneFormatError(f"malformed element line {line!r}", byte_offset=line_offset)
            in_vertex = fields[1] == 'vertex'
            if in_vertex:
                count = int(fields[2])
            elif int(fields[2]) != 0:
                raise SceneFormatError(f"unexpected non-empty element {fields[1]!r}", byte_offset=line_offset)
        elif fields[0] == 'property' and in_vertex:
            if fields[1] == 'list' or fields[1] not in _PLY_TYPES:
                raise SceneFormatError(f"unsupported vertex property {line!r}", byte_offset=line_offset)
            properties.append((fields[2], fields[1]))
    if count is None:
        raise SceneFormatError("PLY header has no vertex element", byte_offset=0)
    return count, properties, body_offset


def read_ply_vertices(path: Union[str, Path]) -> np.ndarray:
    """The raw vertex table as a numpy structured array (stored values, no activations)."""
    data = Path(path).read_bytes()
    count, properties, body_offset = _parse_header(data)
    dtype = np.dtype([(name, _PLY_TYPES[ptype]) for name, ptype in properties])
    available = (len(data) - body_offset) // dtype.itemsize if dtype.itemsize else 0
    if available < count:
        raise SceneFormatError(f"expected {count} vertices but the file holds {available}",
                               byte_offset=body_offset + available * dtype.itemsize)
    missing = [name for name in _REQUIRED if name not in (dtype.names or ())]
    if missing:
        raise SceneFormatError(f"missing vertex properties: {', '.join(missing)}", byte_offset=0)
    if count == 0:
        return np.zeros(0, dtype=dtype)
    return np.frombuffer(data, dtype=dtype, count=count, offset=body_offset)


def load_ply(path: Union[str, Path], dtype: type = np.float32) -> ParticleScene:
    """
    Loads a checkpoint, applying activations: exp to scales, sigmoid to opacity,
    normalization to rotations.
    """
    vertices = read_ply_vertices(path)
    names = vertices.dtype.names
    n = len(vertices)
    rest_names = sorted((name for name in names if name.startswith('f_rest_')), key=lambda s: int(s[7:]))
    if len(rest_names) not in _SH_REST_COUNTS:
        raise SceneFormatError(f"{len(rest_names)} f_rest properties do not match any SH degree", byte_offset=0)
    sh_degree = _SH_REST_COUNTS[len(rest_names)]
    per_channel = len(rest_names) // 3

    def column(name: str) -> np.ndarray:
        return vertices[name].astype(np.float64)

    sh = np.zeros((n, SH_COEFFS, 3))
    for c in range(3):
        sh[:, 0, c] = column(f'f_dc_{c}')
        for k in range(per_channel):
            sh[:, 1 + k, c] = column(rest_names[c * per_channel + k])

    kernels = degrees = None
    psi = np.zeros((n, 3))
    if 'kernel_type' in names:
        kernels = vertices['kernel_type'].astype(np.int8)
        unknown = set(np.unique(kernels)) - {int(k) for k in KernelType}
        if unknown:
            raise SceneFormatError(f"unknown kernel types {sorted(unknown)}", byte_offset=0)
        degrees = column('kernel_degree') if 'kernel_degree' in names else None
        if all(f'psi_{i}' in names for i in range(3)):
            psi = np.stack([column(f'psi_{i}') for i in range(3)], axis=1)

    with np.errstate(over='ignore'):
        scales = np.exp(np.stack([column(f'scale_{i}') for i in range(3)], axis=1))
    scene = ParticleScene(
        positions=np.stack([column('x'), column('y'), column('z')], axis=1),
        quaternions=np.stack([column(f'rot_{i}') for i in range(4)], axis=1),
        scales=scales,
        opacities=expit(column('opacity')),
        sh=sh, psi=psi, kernels=kernels, degrees=degrees,
        sh_degree=sh_degree, dtype=dtype,
    )
    logger.info(f"Loaded {n} particles (SH degree {sh_degree}) from {path}.")
    return scene


def save_ply(scene: ParticleScene, path: Union[str, Path], sh_degree: Optional[int] = None):
    """Writes ``scene`` in the layout above; raw values are the inverse activations."""
    sh_degree = scene.sh_degree if sh_degree is None else sh_degree
    with_kernels = bool(np.any(scene.kernels != KernelType.GAUSSIAN)) or bool(np.any(scene.psi != 0.0))
    properties = vertex_properties(sh_degree, with_kernels)
    dtype = np.dtype([(name, _PLY_TYPES[ptype]) for name, ptype in properties])
    n = len(scene)
    table = np.zeros(n, dtype=dtype)
    for i, axis in enumerate('xyz'):
        table[axis] = scene.positions[:, i]
    per_channel = (sh_degree + 1) ** 2 - 1
    for c in range(3):
        table[f'f_dc_{c}'] = scene.sh[:, 0, c]
        for k in range(per_channel):
            table[f'f_rest_{c * per_channel + k}'] = scene.sh[:, 1 + k, c]
    opacity = np.clip(scene.opacities.astype(np.float64), OPACITY_EPS, 1.0 - OPACITY_EPS)
    table['opacity'] = logit(opacity)
    with np.errstate(divide='ignore'):
        log_scales = np.log(scene.scales.astype(np.float64))
    for i in range(3):
        table[f'scale_{i}'] = log_scales[:, i]
    for i in range(4):
        table[f'rot_{i}'] = scene.quaternions[:, i]
    if with_kernels:
        table['kernel_type'] = scene.kernels
        table['kernel_degree'] = scene.degrees
        for i in range(3):
            table[f'psi_{i}'] = scene.psi[:, i]
    with open(path, 'wb') as f:
        f.write(ply_header(n, properties))
        f.write(table.tobytes())
    logger.info(f"Wrote {n} particles to {path}.")
