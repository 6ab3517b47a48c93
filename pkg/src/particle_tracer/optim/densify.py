"""Topology changes during training: clone, split, opacity pruning, the particle cap and opacity reset."""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logit

from src.particle_tracer.optim.state import TrainState
from src.particle_tracer.utils.rotations import normalize_quaternions, quat_to_rotmat

logger = logging.getLogger(__name__)


@dataclass
class TopologyDelta:
    before: int
    cloned: int = 0
    split: int = 0
    pruned_opacity: int = 0
    pruned_visibility: int = 0
    after: int = 0

    @property
    def changed(self) -> bool:
        return self.before != self.after or self.cloned > 0 or self.split > 0


def densify_candidates(state: TrainState) -> np.ndarray:
    """Particles whose mean accumulated positional gradient reaches the threshold."""
    seen = state.observations > 0
    mean = np.where(seen, state.grad_accum / np.maximum(state.observations, 1), 0.0)
    return seen & (mean >= state.config.densify_grad_threshold)


def _clone_rows(state: TrainState, index: np.ndarray) -> dict:
    rows = state.rows(index)
    # one plain gradient step ahead of the parent along the mean positional gradient
    mean_grad = state.grad_vector_accum[index] / np.maximum(state.observations[index], 1)[:, None]
    rows["position"] = rows["position"] - state.position_lr() * mean_grad
    return rows


def _split_rows(state: TrainState, index: np.ndarray) -> dict:
    c = state.config
    children = c.split_children
    rows = {name: np.repeat(values, children, axis=0) for name, values in state.rows(index).items()}
    scales = np.exp(rows["scale"])
    rot = quat_to_rotmat(normalize_quaternions(rows["quaternion"]))
    # children are drawn from the parent's density
    local = state.rng.standard_normal(scales.shape) * np.where(np.isfinite(scales), scales, 0.0)
    rows["position"] = rows["position"] + np.einsum('nij,nj->ni', rot, local)
    rows["scale"] = rows["scale"] - np.log(c.split_scale_divisor)
    return rows


def densify_and_prune(state: TrainState) -> TopologyDelta:
    """
    Clones small candidates, splits large ones (parent replaced by its children), prunes
    transparent particles and enforces the particle cap by removing the lowest accumulated
    weight contributions. Statistics are reset afterwards.
    """
    c = state.config
    delta = TopologyDelta(before=len(state))
    candidates = densify_candidates(state)
    max_scale = np.exp(state.params["scale"]).max(axis=1)
    large = max_scale > c.split_scale_fraction * state.scene_extent
    clone_idx = np.nonzero(candidates & ~large)[0]
    split_idx = np.nonzero(candidates & large)[0]

    clones = _clone_rows(state, clone_idx)
    children = _split_rows(state, split_idx)
    new_kernels = np.concatenate([state.kernels[clone_idx], np.repeat(state.kernels[split_idx], c.split_children)])
    new_degrees = np.concatenate([state.degrees[clone_idx], np.repeat(state.degrees[split_idx], c.split_children)])
    new_weight = np.concatenate([state.weight_accum[clone_idx],
                                 np.repeat(state.weight_accum[split_idx] / c.split_children, c.split_children)])

    keep = np.ones(len(state), dtype=bool)
    keep[split_idx] = False
    state.select(keep)
    state.append({name: np.concatenate([clones[name], children[name]]) for name in clones},
                 new_kernels, new_degrees)
    state.weight_accum[len(state) - len(new_weight):] = new_weight
    delta.cloned = len(clone_idx)
    delta.split = len(split_idx)

    # compared in the logit domain so particles sitting exactly at the reset value survive
    opaque = state.params["opacity"] >= logit(c.prune_opacity)
    delta.pruned_opacity = int(np.count_nonzero(~opaque))
    state.select(opaque)

    if len(state) > c.particle_cap:
        excess = len(state) - c.prune_target
        order = np.argsort(state.weight_accum, kind='stable')
        keep = np.ones(len(state), dtype=bool)
        keep[order[:excess]] = False
        state.select(keep)
        delta.pruned_visibility = excess

    state.reset_statistics()
    delta.after = len(state)
    logger.info(f"Densify at iteration {state.iteration}: {delta.before} -> {delta.after} particles "
                f"(cloned {delta.cloned}, split {delta.split}, pruned {delta.pruned_opacity} transparent, "
                f"{delta.pruned_visibility} over the cap).")
    return delta


def reset_opacity(state: TrainState):
    """
    Lowers every opacity to at most the configured reset value and clears its optimizer moments.

    The reset value sits above ``alpha_min``, so each particle keeps a non-empty proxy and still
    receives gradients on the next iteration.
    """
    value = state.config.opacity_reset_value
    np.minimum(state.params["opacity"], float(logit(value)), out=state.params["opacity"])
    state.optimizer.reset("opacity")
    logger.info(f"Opacity reset to at most {value} at iteration {state.iteration}.")
