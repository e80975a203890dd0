"""Forward mean-reverting SDE: drift toward the source, exponential noise schedule.

    dx = gamma * (y - x) dt + g(t) dw,
    g(t) = sigma_min * (sigma_max / sigma_min) ** t * sqrt(2 log(sigma_max / sigma_min))

The perturbation kernel is Gaussian with closed-form mean and variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INTERP_MODES = ("exponential", "linear")


@dataclass(frozen=True)
class SdeSchedule:
    gamma: float = 1.5
    sigma_min: float = 0.05
    sigma_max: float = 0.5
    t_min: float = 0.03
    t_max: float = 1.0
    interp_mode: str = "exponential"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if not 0 <= self.t_min < self.t_max <= 1:
            raise ValueError("need 0 <= t_min < t_max <= 1")
        if self.interp_mode not in INTERP_MODES:
            raise ValueError(f"interp_mode must be one of {INTERP_MODES}")

    @property
    def log_ratio(self) -> float:
        return float(np.log(self.sigma_max / self.sigma_min))

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "t_min": self.t_min,
            "t_max": self.t_max,
            "interp_mode": self.interp_mode,
        }


@dataclass(frozen=True)
class KernelMoments:
    mean: np.ndarray
    std: float


def _check_time(t):
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time {t} outside [0, 1]")


def _same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def drift(x_t, y, t: float, sched: SdeSchedule):
    _same_shape(x_t, y)
    _check_time(t)
    return sched.gamma * (np.asarray(y) - np.asarray(x_t))


def diffusion_coeff(t, sched: SdeSchedule):
    ratio = sched.sigma_max / sched.sigma_min
    return sched.sigma_min * ratio**t * np.sqrt(2.0 * sched.log_ratio)


def variance(t, sched: SdeSchedule):
    ratio = sched.sigma_max / sched.sigma_min
    lr = sched.log_ratio
    num = sched.sigma_min**2 * (ratio ** (2.0 * t) - np.exp(-2.0 * sched.gamma * t)) * lr
    return num / (sched.gamma + lr)


def std(t, sched: SdeSchedule):
    return np.sqrt(np.maximum(variance(t, sched), 0.0))


def mean_weight(t, sched: SdeSchedule):
    """Weight on x0 in the kernel mean; the source y gets 1 - weight."""
    if sched.interp_mode == "linear":
        return 1.0 - t
    return np.exp(-sched.gamma * t)


def kernel_moments(x0, y, t: float, sched: SdeSchedule) -> KernelMoments:
    _same_shape(x0, y)
    _check_time(t)
    a = mean_weight(t, sched)
    mean = a * np.asarray(x0) + (1.0 - a) * np.asarray(y)
    return KernelMoments(mean=mean, std=float(std(t, sched)))


def standard_normal_like(shape, dtype, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance Gaussian noise; complex states get independent N(0,1) real and imaginary parts."""
    if np.issubdtype(dtype, np.complexfloating):
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return rng.standard_normal(shape)


def sample_forward(x0, y, t: float, sched: SdeSchedule, rng: np.random.Generator):
    if not sched.t_min <= t <= sched.t_max and t != 0.0:
        raise ValueError(f"time {t} outside [{sched.t_min}, {sched.t_max}]")
    mom = kernel_moments(x0, y, t, sched)
    z = standard_normal_like(np.shape(mom.mean), np.result_type(mom.mean, np.float64), rng)
    return mom.mean + mom.std * z, z
