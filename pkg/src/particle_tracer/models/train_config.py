from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.particle_tracer.models.particles import KernelType
from src.particle_tracer.models.settings import ProxyKind


class TrainConfig(BaseModel):
    """
    Optimisation schedule and learning rates. Unknown keys are rejected so a misspelt key in
    a config file is reported by name. Schedule boundaries past ``total_iters`` are clamped to it.
    """
    model_config = ConfigDict(extra='forbid')

    total_iters: int = Field(default=30000, ge=1)
    seed: int = Field(default=0, ge=0)

    # learning rates
    lr_position_init: float = Field(default=1.6e-4, gt=0.0, description="Multiplied by scene_extent")
    lr_position_final: float = Field(default=1.6e-6, gt=0.0, description="Multiplied by scene_extent")
    lr_rotation: float = Field(default=1e-3, gt=0.0)
    lr_scale: float = Field(default=5e-3, gt=0.0)
    lr_albedo: float = Field(default=2.5e-3, gt=0.0)
    lr_sh_rest: Optional[float] = Field(default=None, gt=0.0, description="Defaults to lr_albedo / 20")
    lr_opacity: float = Field(default=0.05, gt=0.0, description="0.05 reference, 0.09 fast")
    lr_psi: float = Field(default=1e-3, gt=0.0)

    # densification and pruning
    densify_from: int = Field(default=500, ge=0)
    densify_until: int = Field(default=15000, ge=0)
    densify_interval: int = Field(default=100, ge=1)
    densify_grad_threshold: float = Field(default=2e-4, gt=0.0)
    split_scale_fraction: float = Field(default=0.01, gt=0.0, description="Split above this fraction of the scene extent")
    split_children: int = Field(default=2, ge=2)
    split_scale_divisor: float = Field(default=1.6, gt=1.0)
    prune_opacity: float = Field(default=0.01, ge=0.0, lt=1.0)
    opacity_reset_interval: int = Field(default=3000, ge=1)
    opacity_reset_value: float = Field(default=0.05, gt=0.0, lt=1.0, description="Must exceed alpha_min and prune_opacity")
    particle_cap: int = Field(default=3_000_000, ge=1)
    prune_target: int = Field(default=2_700_000, ge=1)

    # appearance schedule and loss
    sh_increase_interval: int = Field(default=1000, ge=1)
    max_sh_degree: int = Field(default=3, ge=0, le=3)
    lambda_ssim: float = Field(default=0.2, ge=0.0, le=1.0)

    # incoherent-ray phase
    incoherent_from: int = Field(default=15000, ge=0)
    incoherent_batch: int = Field(default=2 ** 19, ge=1)

    # renderer used while training
    k: int = Field(default=16, ge=1)
    alpha_min: float = Field(default=0.01, gt=0.0, lt=1.0)
    t_min_transmittance: float = Field(default=0.001, ge=0.0, lt=1.0)
    proxy_kind: ProxyKind = ProxyKind.ICOSAHEDRON_CLAMPED
    kernel: Optional[KernelType] = None
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    init_opacity: float = Field(default=0.1, gt=0.0, lt=1.0)

    # bookkeeping
    log_interval: int = Field(default=100, ge=1)
    checkpoint_interval: Optional[int] = Field(default=None, ge=1)
    eval_interval: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode='after')
    def clamp_schedule(self) -> 'TrainConfig':
        for name in ('densify_from', 'densify_until', 'incoherent_from'):
            setattr(self, name, min(getattr(self, name), self.total_iters))
        if self.densify_from > self.densify_until:
            raise ValueError(f"densify_from ({self.densify_from}) is after densify_until ({self.densify_until})")
        if self.prune_target > self.particle_cap:
            raise ValueError(f"prune_target ({self.prune_target}) exceeds particle_cap ({self.particle_cap})")
        if self.lr_position_final > self.lr_position_init:
            raise ValueError("lr_position_final must not exceed lr_position_init")
        if self.opacity_reset_value <= max(self.alpha_min, self.prune_opacity):
            raise ValueError(f"opacity_reset_value ({self.opacity_reset_value}) must exceed alpha_min ({self.alpha_min}) "
                             f"and prune_opacity ({self.prune_opacity})")
        return self

    @property
    def sh_rest_lr(self) -> float:
        return self.lr_sh_rest if self.lr_sh_rest is not None else self.lr_albedo / 20.0
