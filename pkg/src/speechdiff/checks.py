"""Numerical self-checks: Monte-Carlo kernel moments, analytic reverse recovery, gradients."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .analytic import AnalyticGaussianScore
from .conditioning import TextVocab
from .scorenet import OptimizerConfig, ScoreNet, ScoreNetConfig, TrainItem, context_features, train
from .sde import SdeSchedule, diffusion_coeff, drift, kernel_moments, variance
from .solver import SolverConfig, sample

# gradients smaller than this are compared in absolute terms; central differences
# at eps=1e-4 carry roundoff of order loss * 1e-16 / eps, far below it
GRAD_FLOOR = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(fn):
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        return CheckResult(res.name, res.passed, res.detail, time.perf_counter() - t0)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def check_kernel_moments(sched: SdeSchedule = SdeSchedule(), n_paths=10_000, dt=1e-3, times=(0.25, 0.5, 1.0),
                         x0=2.0, y=1.0, seed=0, mean_tol=0.01, var_tol=0.05,
                         variance_fn: Callable = variance) -> CheckResult:
    """Euler-Maruyama paths of the forward SDE against the closed-form kernel."""
    rng = np.random.default_rng(seed)
    x = np.full(n_paths, x0, dtype=np.float64)
    yv = np.full(n_paths, y, dtype=np.float64)
    n_steps = int(round(max(times) / dt))
    marks = {int(round(t / dt)): t for t in times}
    worst_m = worst_v = 0.0
    parts = []
    for k in range(n_steps):
        t = k * dt
        x = x + drift(x, yv, t, sched) * dt + diffusion_coeff(t, sched) * np.sqrt(dt) * rng.standard_normal(n_paths)
        if k + 1 in marks:
            tm = marks[k + 1]
            mean = float(kernel_moments(x0, y, tm, sched).mean)
            var = float(variance_fn(tm, sched))
            em = abs(x.mean() - mean) / abs(mean)
            ev = abs(x.var() - var) / var
            worst_m, worst_v = max(worst_m, em), max(worst_v, ev)
            parts.append(f"t={tm:g} mean {em:.2%} var {ev:.2%}")
    ok = worst_m <= mean_tol and worst_v <= var_tol
    detail = "; ".join(parts) + f" (tol {mean_tol:.0%}/{var_tol:.0%})"
    return CheckResult("kernel moments", ok, detail)


@_timed
def check_reverse_recovery(sched: SdeSchedule = SdeSchedule(), n_runs=5000, num_steps=200, mean=2.0, sd=0.3,
                           seed=0, mean_tol=0.05, std_rtol=0.10) -> CheckResult:
    """Sample the scalar Gaussian task with its exact marginal score."""
    y = np.zeros(n_runs)
    task = AnalyticGaussianScore(mean, y, sched, sd)
    cfg = SolverConfig(num_steps=num_steps, corrector_steps=1)
    x = sample(y, task, None, sched, cfg, np.random.default_rng(seed))
    m, s = float(x.mean()), float(x.std())
    ok = abs(m - mean) <= mean_tol and abs(s - sd) <= std_rtol * sd
    return CheckResult("reverse recovery", ok,
                       f"mean {m:.4f} (target {mean} +/- {mean_tol}), std {s:.4f} (target {sd} +/- {std_rtol:.0%})")


def grad_check_setup(seed=0, state_dim=4, frames=2, hidden=64, attn_dim=32, text_dim=32):
    """Small network that still has every parameter family, plus a one-item batch of `frames` frames.

    Half the default widths keeps the one-parameter-at-a-time sweep well under a minute
    on a single core.
    """
    vocab = TextVocab("remove noise add reverberation with small room size".split())
    cfg = ScoreNetConfig(state_dim=state_dim, vocab=vocab.tokens, hidden=hidden, attn_dim=attn_dim,
                         text_dim=text_dim)
    net = ScoreNet(cfg, SdeSchedule())
    rng = np.random.default_rng(seed)
    p = net.init_params(rng)
    # move off the initial point so no parameter family has an all-zero gradient
    p.flat += 0.05 * rng.standard_normal(p.size)
    shape = (frames, state_dim)
    x0 = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    y = x0 + 0.5 * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    item = TrainItem(x0, y, rng.standard_normal((frames, cfg.acoustic_width)),
                     vocab.ids("add reverberation with small room size"), context=context_features(y, cfg))
    batch = net.make_batch([item], rng)
    return net, p, batch


def finite_difference_grads(net: ScoreNet, p, batch, eps=1e-4) -> np.ndarray:
    num = np.zeros(p.size)
    for i in range(p.size):
        old = p.flat[i]
        p.flat[i] = old + eps
        lp = net.dsm_loss(p, batch, with_grad=False)[0]
        p.flat[i] = old - eps
        lm = net.dsm_loss(p, batch, with_grad=False)[0]
        p.flat[i] = old
        num[i] = (lp - lm) / (2 * eps)
    return num


def gradient_errors(analytic: np.ndarray, numeric: np.ndarray, floor=GRAD_FLOOR) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


@_timed
def check_gradients(seed=0, eps=1e-4, rtol=1e-4) -> CheckResult:
    net, p, batch = grad_check_setup(seed)
    _, grads = net.dsm_loss(p, batch)
    err = gradient_errors(grads.flat, finite_difference_grads(net, p, batch, eps))
    bad = [name for name, (lo, hi, _) in grads.slices.items() if np.any(err[lo:hi] > rtol)]
    detail = f"{p.size} parameters, max rel err {err.max():.2e} (tol {rtol:g})"
    if bad:
        detail += ", failing: " + ", ".join(bad)
    return CheckResult("gradients", not bad, detail)


TOY_MEAN = np.array([1.0, -0.5])
TOY_STD = np.array([0.5, 0.3])


def grid_cosine(score, task: AnalyticGaussianScore, t: float, n=21, span=2.5) -> float:
    """Mean cosine between `score(x)` and the exact score over an n x n grid covering
    mean +/- span std of the marginal at time t. Points where the exact score vanishes
    are skipped."""
    mean, var = task.moments(t)
    sd = np.sqrt(var)
    axes = [np.linspace(m - span * s, m + span * s, n) for m, s in zip(mean, sd)]
    cos = []
    for u in axes[0]:
        for v in axes[1]:
            x = np.array([u, v])
            exact, est = task(x, None, t), score(x)
            ne, ns = np.linalg.norm(exact), np.linalg.norm(est)
            if ne > 0:
                cos.append(float(est @ exact) / (ne * ns) if ns > 0 else 0.0)
    return float(np.mean(cos))


def train_toy(sched: SdeSchedule = SdeSchedule(), steps=5000, batch_size=16, lr=1e-3, seed=0):
    """DSM on a 2-D Gaussian with y = 0, drawing fresh clean samples every step."""
    cfg = ScoreNetConfig(state_dim=2, complex_state=False, acoustic_width=0)
    net = ScoreNet(cfg, sched)
    y = np.zeros(2)

    def draw(rng, k):
        return [TrainItem(TOY_MEAN + TOY_STD * rng.standard_normal(2), y, np.zeros((1, 0))) for _ in range(k)]

    opt = OptimizerConfig(steps=steps, batch_size=batch_size, learning_rate=lr, schedule="cosine")
    params, _, _ = train(net, net.init_params(np.random.default_rng(seed)), draw, opt, seed)
    return net, params, AnalyticGaussianScore(TOY_MEAN, y, sched, TOY_STD)


@_timed
def check_toy_dsm(sched: SdeSchedule = SdeSchedule(), steps=5000, times=(0.25, 0.5, 0.75, 1.0), seed=0,
                  threshold=0.95) -> CheckResult:
    net, params, task = train_toy(sched, steps=steps, seed=seed)
    y = np.zeros(2)
    per_t = [grid_cosine(lambda x: net.forward(params, x, y, t, None), task, t) for t in times]
    mean = float(np.mean(per_t))
    detail = f"{steps} steps, mean cosine {mean:.4f} (" + ", ".join(
        f"t={t:g}: {c:.4f}" for t, c in zip(times, per_t)) + f"; need >= {threshold})"
    return CheckResult("toy score matching", mean >= threshold, detail)


def run_all(sched: SdeSchedule = SdeSchedule(), seed=0, variance_fn: Callable = variance, gradients=True):
    results = [
        check_kernel_moments(sched, seed=seed, variance_fn=variance_fn),
        check_reverse_recovery(sched, seed=seed),
    ]
    if gradients:
        results.append(check_gradients(seed))
    return results
