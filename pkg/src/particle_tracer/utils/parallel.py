"""
Process pool for per-ray work. The read-only payload (scene geometry, settings) is handed to
each worker once through the pool initializer; chunks then carry only ray indices.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, List, Sequence, TypeVar

logger = logging.getLogger(__name__)

ChunkT = TypeVar('ChunkT')
ResultT = TypeVar('ResultT')

_shared: Any = None


def _install(shared: Any):
    global _shared
    _shared = shared


def shared_payload() -> Any:
    """The payload passed to run_chunks, as seen from inside a worker."""
    return _shared


def split_range(count: int, parts: int) -> List[range]:
    """Splits range(count) into at most ``parts`` contiguous, nearly equal ranges."""
    parts = max(1, min(parts, count))
    bounds = [count * i // parts for i in range(parts + 1)]
    return [range(bounds[i], bounds[i + 1]) for i in range(parts) if bounds[i] < bounds[i + 1]]


def run_chunks(worker: Callable[[ChunkT], ResultT], shared: Any, chunks: Sequence[ChunkT],
               threads: int = 1) -> List[ResultT]:
    """
    Applies ``worker`` to every chunk, returning results in chunk order.

    ``worker`` must be a module-level function reading its payload via shared_payload().
    With threads <= 1 (or a single chunk) everything runs in the calling process.
    """
    if threads <= 1 or len(chunks) <= 1:
        previous = _shared
        _install(shared)
        try:
            return [worker(chunk) for chunk in chunks]
        finally:
            _install(previous)
    workers = min(threads, len(chunks))
    logger.debug(f"Dispatching {len(chunks)} chunks to {workers} worker processes.")
    with ProcessPoolExecutor(max_workers=workers, initializer=_install, initargs=(shared,)) as pool:
        return list(pool.map(worker, chunks))
