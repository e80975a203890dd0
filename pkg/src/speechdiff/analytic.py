"""Closed-form Gaussian scores used as oracles for the sampler and the learned network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sde import SdeSchedule, mean_weight, variance


@dataclass(frozen=True)
class AnalyticGaussianScore:
    """Exact score of the perturbed density for a Gaussian (or point-mass) clean prior.

    With ``prior_std=None`` the clean state is known (``prior_mean`` is x0) and the
    score is that of the perturbation kernel itself.  Otherwise x0 ~ N(prior_mean,
    prior_std**2) independently per element and the score is that of the marginal.
    """

    prior_mean: np.ndarray | float
    y: np.ndarray | float
    sched: SdeSchedule
    prior_std: np.ndarray | float | None = None

    def moments(self, t):
        a = mean_weight(t, self.sched)
        mean = a * np.asarray(self.prior_mean) + (1.0 - a) * np.asarray(self.y)
        var = variance(t, self.sched)
        if self.prior_std is not None:
            var = var + a**2 * np.asarray(self.prior_std) ** 2
        return mean, var

    def log_density(self, x_t, t):
        mean, var = self.moments(t)
        x_t = np.asarray(x_t)
        return -0.5 * (x_t - mean) ** 2 / var - 0.5 * np.log(2.0 * np.pi * var)

    def __call__(self, x_t, y=None, t=None, cond=None):
        return analytic_score(x_t, t, self)


def analytic_score(x_t, t, task: AnalyticGaussianScore):
    if t < task.sched.t_min and task.prior_std is None:
        raise ValueError(f"kernel std vanishes below t_min={task.sched.t_min} (t={t})")
    mean, var = task.moments(t)
    if np.any(np.asarray(var) <= 0):
        raise ValueError(f"degenerate variance at t={t}")
    return -(np.asarray(x_t) - mean) / var
