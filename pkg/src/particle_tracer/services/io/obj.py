"""Wavefront OBJ subset: ``v`` and ``f`` records; n-gon faces are fan-triangulated."""
import logging
from pathlib import Path
from typing import List, Union

import numpy as np

from src.particle_tracer.exceptions import MeshFormatError

logger = logging.getLogger(__name__)


def _vertex_index(token: str, vertex_count: int, line_number: int) -> int:
    # "7", "7/2", "7//3" and negative (relative) indices
    head = token.split('/')[0]
    try:
        index = int(head)
    except ValueError as e:
        raise MeshFormatError(f"bad face index {token!r}", line_number=line_number) from e
    if index < 0:
        index = vertex_count + index
    else:
        index -= 1
    if not 0 <= index < vertex_count:
        raise MeshFormatError(f"face index {token!r} out of range (have {vertex_count} vertices)",
                              line_number=line_number)
    return index


def parse_obj(text: str, source: str = "<string>") -> np.ndarray:
    """Triangles (T, 3, 3) from OBJ text; faces may only reference earlier vertices."""
    vertices: List[List[float]] = []
    triangles: List[List[int]] = []
    for number, line in enumerate(text.splitlines(), start=1):
        fields = line.split('#', 1)[0].split()
        if not fields:
            continue
        if fields[0] == 'v':
            try:
                vertices.append([float(v) for v in fields[1:4]])
            except ValueError as e:
                raise MeshFormatError(f"bad vertex record {line.strip()!r}", line_number=number) from e
            if len(vertices[-1]) != 3:
                raise MeshFormatError("vertex needs three coordinates", line_number=number)
        elif fields[0] == 'f':
            corners = [_vertex_index(token, len(vertices), number) for token in fields[1:]]
            if len(corners) < 3:
                raise MeshFormatError(f"face with {len(corners)} vertices", line_number=number)
            for i in range(1, len(corners) - 1):
                triangles.append([corners[0], corners[i], corners[i + 1]])
    if not triangles:
        logger.warning(f"{source} contains no faces.")
        return np.zeros((0, 3, 3))
    return np.asarray(vertices, dtype=np.float64)[np.asarray(triangles)]


def load_mesh(path: Union[str, Path]) -> np.ndarray:
    """Loads an OBJ file as a triangle list (T, 3, 3)."""
    triangles = parse_obj(Path(path).read_text(encoding='utf-8'), str(path))
    logger.info(f"Loaded {len(triangles)} triangles from {path}.")
    return triangles
