"""Flow-matching math shared by both model stages.

The probability path is the straight line x_t = (1 - t) * x0 + t * eps with
data at t = 0 and noise at t = 1, so the regression target is the constant
path velocity eps - x0 and sampling integrates t from 1 down to 0 with
x <- x - dt * v(x, t). Noise is per-coordinate uniform on [-1, 1], which
pairs with training clouds normalized into that cube.

The elementwise operations accept numpy arrays or torch tensors alike; the
Euler sampler is numpy-facing and adapts any velocity callback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import PointCloud

T_SAMPLING_MODES = ("uniform", "cosine")


@dataclass
class FlowConfig:
    """Inference step size and training timestep-sampling mode."""

    step_size: float = 0.04
    t_sampling: str = "uniform"

    def __post_init__(self):
        if not 0 < self.step_size <= 1:
            raise ValueError("step_size must be in (0, 1]")
        if self.t_sampling not in T_SAMPLING_MODES:
            raise ValueError(f"t_sampling must be one of {T_SAMPLING_MODES}")

    @property
    def n_steps(self) -> int:
        # tiny guard so 1/0.04 style float noise still yields 25
        return math.ceil(1.0 / self.step_size - 1e-9)


def _check_same_shape(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def interpolate(x0, eps, t: float):
    """Point on the linear noise path: (1 - t) * x0 + t * eps."""
    _check_same_shape(x0, eps)
    if not 0.0 <= float(t) <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    return (1.0 - t) * x0 + t * eps


def velocity_target(x0, eps):
    """Regression target of the flow loss: the path derivative eps - x0."""
    _check_same_shape(x0, eps)
    return eps - x0


def fm_loss(pred_v, target_v):
    """Mean squared error over all entries of the velocity prediction."""
    _check_same_shape(pred_v, target_v)
    return ((pred_v - target_v) ** 2).mean()


def sample_timestep(rng: np.random.Generator, config: FlowConfig) -> float:
    """Draw a training timestep in [0, 1] per the configured schedule."""
    u = rng.random()
    if config.t_sampling == "uniform":
        return float(u)
    return float(1.0 - math.cos(u * math.pi / 2.0))  # biased toward small t


def euler_sample(
    velocity_fn: Callable[[np.ndarray, float], np.ndarray],
    n_points: int,
    config: FlowConfig,
    rng: np.random.Generator,
) -> PointCloud:
    """Integrate the learned field from uniform noise back to data.

    Starts at x ~ U(-1, 1)^(n_points x 3) at t = 1 and takes
    ceil(1 / step_size) explicit Euler steps, the last one clamped so t
    lands exactly on 0.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    x = rng.uniform(-1.0, 1.0, size=(n_points, 3))
    t = 1.0
    for step in range(config.n_steps):
        dt = min(config.step_size, t)
        v = np.asarray(velocity_fn(x, t), dtype=np.float64)
        if v.shape != x.shape:
            raise ValueError(
                f"velocity_fn returned shape {v.shape}, expected {x.shape} (step {step})"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError(f"velocity_fn returned non-finite values at step {step}")
        x = x - dt * v
        t -= dt
    return PointCloud(x)
