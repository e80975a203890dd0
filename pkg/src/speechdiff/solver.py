"""Reverse-time predictor-corrector sampler.

A score function is any callable ``score(x_t, y, t, cond) -> array`` returning an
array shaped like ``x_t``.  Norms used for Langevin step sizing are taken over the
whole state array, so a caller that stacks independent scalar tasks into one
vector gets a pooled step size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .sde import SdeSchedule, diffusion_coeff, drift, standard_normal_like, std

ScoreFunction = Callable[..., np.ndarray]


@dataclass(frozen=True)
class SolverConfig:
    num_steps: int = 30
    corrector_steps: int = 1
    corrector_snr: float = 0.16
    final_denoise: bool = True

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if self.corrector_steps < 0:
            raise ValueError("corrector_steps must be >= 0")
        if not self.corrector_snr > 0:
            raise ValueError("corrector_snr must be positive")


def _noise(x, rng):
    return standard_normal_like(np.shape(x), np.result_type(x, np.float64), rng)


def init_state(y, sched: SdeSchedule, rng: np.random.Generator):
    y = np.asarray(y)
    return y + std(sched.t_max, sched) * _noise(y, rng)


def predictor_step(x_t, y, t, dt, score: ScoreFunction, cond, sched: SdeSchedule, rng, noise=True):
    """One Euler-Maruyama step of the reverse SDE from t to t - |dt|."""
    step = abs(dt)
    if t > sched.t_max + 1e-12 or t - step < sched.t_min - 1e-12:
        raise ValueError(f"step from t={t} by {step} leaves [{sched.t_min}, {sched.t_max}]")
    return _em_update(x_t, y, t, step, score, cond, sched, rng if noise else None)


def _em_update(x_t, y, t, step, score, cond, sched, rng):
    g = diffusion_coeff(t, sched)
    s = score(x_t, y, t, cond)
    x = x_t - (drift(x_t, y, t, sched) - g**2 * s) * step
    if rng is not None:
        x = x + g * np.sqrt(step) * _noise(x_t, rng)
    return x


def corrector_step(x_t, y, t, score: ScoreFunction, cond, sched: SdeSchedule, rng, snr: float = 0.16):
    """Annealed Langevin step with the norm-ratio step size 2 (r |z| / |s|)^2."""
    if not sched.t_min - 1e-12 <= t <= sched.t_max + 1e-12:
        raise ValueError(f"time {t} outside [{sched.t_min}, {sched.t_max}]")
    s = score(x_t, y, t, cond)
    s_norm = np.linalg.norm(s)
    if s_norm == 0.0:
        return x_t
    z = _noise(x_t, rng)
    eps = 2.0 * (snr * np.linalg.norm(z) / s_norm) ** 2
    return x_t + eps * s + np.sqrt(2.0 * eps) * z


def sample(y, score: ScoreFunction, cond, sched: SdeSchedule, cfg: SolverConfig, rng, callback=None):
    y = np.asarray(y)
    x = init_state(y, sched, rng)
    times = np.linspace(sched.t_max, sched.t_min, cfg.num_steps + 1)
    for i in range(cfg.num_steps):
        t, t_next = times[i], times[i + 1]
        for _ in range(cfg.corrector_steps):
            x = corrector_step(x, y, t, score, cond, sched, rng, cfg.corrector_snr)
        x = predictor_step(x, y, t, t - t_next, score, cond, sched, rng)
        if callback is not None:
            callback(i, t_next, x)
    if cfg.final_denoise and sched.t_min > 0:
        # noiseless step across the residual [0, t_min] gap
        x = _em_update(x, y, sched.t_min, sched.t_min, score, cond, sched, None)
    return x
