"""Adam over named numpy parameter groups whose row count follows the particle count."""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Optional

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class ParamGroup:
    lr: float
    eps: float = 1e-8


class Adam:
    """
    Adam with one learning rate and epsilon per group.

    Moments are indexed like the parameters (first axis = particle), so they can be sliced
    with ``select`` and grown with ``append`` when particles are pruned or added.
    """

    def __init__(self, groups: Dict[str, ParamGroup], shapes: Dict[str, tuple],
                 betas=(0.9, 0.999)):
        if not 0.0 <= betas[0] < 1.0 or not 0.0 <= betas[1] < 1.0:
            raise ValueError(f"Invalid betas: {betas}")
        self.groups = dict(groups)
        self.beta1, self.beta2 = betas
        self.step_count = 0
        self.exp_avg = {name: np.zeros(shape) for name, shape in shapes.items()}
        self.exp_avg_sq = {name: np.zeros(shape) for name, shape in shapes.items()}

    def learning_rates(self) -> Dict[str, float]:
        return {name: group.lr for name, group in self.groups.items()}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
             only: Optional[Iterable[str]] = None):
        """Updates ``params`` in place."""
        self.step_count += 1
        bias1 = 1.0 - self.beta1 ** self.step_count
        bias2 = 1.0 - self.beta2 ** self.step_count
        for name in (only if only is not None else self.groups):
            group = self.groups[name]
            grad = grads[name]
            m = self.exp_avg[name]
            v = self.exp_avg_sq[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            params[name] -= group.lr * (m / bias1) / (np.sqrt(v / bias2) + group.eps)

    def select(self, keep: np.ndarray):
        for moments in (self.exp_avg, self.exp_avg_sq):
            for name in moments:
                moments[name] = moments[name][keep]

    def append(self, count: int):
        """Zero moments for ``count`` new rows."""
        for moments in (self.exp_avg, self.exp_avg_sq):
            for name, values in moments.items():
                moments[name] = np.concatenate([values, np.zeros((count,) + values.shape[1:])])

    def reset(self, name: str):
        self.exp_avg[name][...] = 0.0
        self.exp_avg_sq[name][...] = 0.0

    def state_dict(self) -> Dict[str, np.ndarray]:
        out = {"adam_step": np.array(self.step_count)}
        for name in self.groups:
            out[f"adam_m_{name}"] = self.exp_avg[name]
            out[f"adam_v_{name}"] = self.exp_avg_sq[name]
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        self.step_count = int(state["adam_step"])
        for name in self.groups:
            self.exp_avg[name] = np.array(state[f"adam_m_{name}"], dtype=np.float64)
            self.exp_avg_sq[name] = np.array(state[f"adam_v_{name}"], dtype=np.float64)
