"""Small conditional score network with hand-written backpropagation.

Per frame, the encoder sees the noisy state, the source, the interpolated source
and the acoustic frame (complex bins enter as real/imag channels).  Frame codes
attend over the prompt embeddings with a single cross-attention head.  The decoder
predicts two per-bin gains and an additive term that form a clean estimate

    x0_hat = G1 * (x_t - (1 - a) y) / a + G2 * y + C,

which is turned into a score through the Gaussian kernel: with kernel mean weight
a(t) and std sigma(t), score = (a x0_hat + (1 - a) y - x_t) / sigma**2.  The gain
logits also receive per-bin log powers of the source and of the state, plus
causal leaky sums of source power at several time constants, with frame-wise
coefficients produced by the decoder.
"""

from __future__ import annotations

import csv
import functools
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.signal import lfilter
from scipy.special import expit

from .conditioning import ACOUSTIC_WIDTH, TEXT_WIDTH, ConditionBundle, TextVocab, interpolate
from .sde import SdeSchedule, mean_weight, std

POWER_FLOOR = 1e-6
FEATURE_SCALE = 0.1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScoreNetConfig:
    state_dim: int
    complex_state: bool = True
    acoustic_width: int = ACOUSTIC_WIDTH
    hidden: int = 128
    attn_dim: int = 64
    text_dim: int = TEXT_WIDTH
    vocab: tuple = ()
    time_features: int = 16
    use_source: bool = True
    use_interp: bool = True
    context_taus: tuple = (0.01, 0.02, 0.04, 0.08, 0.16, 0.32)
    frame_seconds: float = 0.02
    acoustic_scale: float = 0.1
    floor_quantile: float | None = 0.1

    @property
    def channels(self) -> int:
        return 2 * self.state_dim if self.complex_state else self.state_dim

    @property
    def input_dim(self) -> int:
        copies = 1 + int(self.use_source) + int(self.use_interp)
        return copies * self.channels + self.acoustic_width

    @property
    def num_local(self) -> int:
        return 2 + len(self.context_taus) + int(self.floor_quantile is not None)

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        h, a, d = self.hidden, self.attn_dim, self.text_dim
        n, c, k = self.state_dim, self.channels, self.num_local
        return [
            ("enc.w1", (self.input_dim, h)),
            ("enc.b1", (h,)),
            ("enc.wt", (2 * self.time_features, h)),
            ("enc.w2", (h, h)),
            ("enc.b2", (h,)),
            ("text.table", (max(len(self.vocab), 1), d)),
            ("att.wq", (h, a)),
            ("att.wk", (d, a)),
            ("att.wv", (d, a)),
            ("att.wo", (a, h)),
            ("dec.w", (h, 2 * n + c)),
            ("dec.b", (2 * n + c,)),
            ("dec.wc", (h, 2 * k)),
            ("dec.bc", (2 * k,)),
        ]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vocab"] = list(self.vocab)
        d["context_taus"] = list(self.context_taus)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreNetConfig":
        d = dict(d)
        d["vocab"] = tuple(d.get("vocab", ()))
        d["context_taus"] = tuple(d.get("context_taus", ()))
        return cls(**d)


class ScoreNetParams:
    """Flat float64 vector with named, shaped views."""

    def __init__(self, layout, flat=None):
        self.layout = [(name, tuple(shape)) for name, shape in layout]
        self.slices = {}
        offset = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            self.slices[name] = (offset, offset + size, shape)
            offset += size
        self.size = offset
        if flat is None:
            flat = np.zeros(offset)
        flat = np.asarray(flat)
        # float32 copies are used for reduced-precision training steps
        self.flat = flat if flat.dtype in (np.float32, np.float64) else flat.astype(np.float64)
        if self.flat.shape != (offset,):
            raise ValueError(f"flat vector has {self.flat.shape}, layout needs ({offset},)")

    def __getitem__(self, name) -> np.ndarray:
        lo, hi, shape = self.slices[name]
        return self.flat[lo:hi].reshape(shape)

    def zeros_like(self) -> "ScoreNetParams":
        return ScoreNetParams(self.layout)

    def copy(self) -> "ScoreNetParams":
        return ScoreNetParams(self.layout, self.flat.copy())

    def astype(self, dtype) -> "ScoreNetParams":
        return ScoreNetParams(self.layout, self.flat.astype(dtype))


# -- helpers -------------------------------------------------------------------------


def to_channels(x, complex_state: bool) -> np.ndarray:
    x = np.asarray(x)
    if complex_state:
        return np.concatenate([x.real, x.imag], axis=-1)
    return x if x.dtype in (np.float32, np.float64) else x.astype(np.float64)


def from_channels(r, complex_state: bool):
    if complex_state:
        n = r.shape[-1] // 2
        return r[..., :n] + 1j * r[..., n:]
    return r


def _power(x):
    return np.abs(x) ** 2 if np.iscomplexobj(x) else np.asarray(x) ** 2


def _silu(x):
    s = expit(x)
    return x * s, s


def _silu_grad(x, s):
    return s * (1.0 + x * (1.0 - s))


@functools.lru_cache(maxsize=8)
def _time_freqs(n: int) -> np.ndarray:
    return np.exp(np.linspace(0.0, np.log(100.0), n))


def time_embedding(t: float, n: int) -> np.ndarray:
    freqs = _time_freqs(n)
    return np.concatenate([np.sin(freqs * t), np.cos(freqs * t)])


def context_features(y, cfg: ScoreNetConfig) -> np.ndarray:
    """Per-bin log source power, its causal leaky sums and (optionally) a per-bin noise
    floor taken as a low quantile of the power over the whole item.

    Shape (T, bins, num_local - 1).
    """
    p = _power(y)
    feats = [np.log(p + POWER_FLOOR)]
    for tau in cfg.context_taus:
        rho = math.exp(-cfg.frame_seconds / tau)
        acc = lfilter([1.0 - rho], [1.0, -rho], p, axis=0)
        feats.append(np.log(np.maximum(acc, 0.0) + POWER_FLOOR))
    if cfg.floor_quantile is not None:
        floor = np.quantile(p, cfg.floor_quantile, axis=0)
        feats.append(np.broadcast_to(np.log(floor + POWER_FLOOR), p.shape))
    return FEATURE_SCALE * np.stack(feats, axis=-1)


def _as_frames(x):
    x = np.asarray(x)
    return x[None, :] if x.ndim == 1 else x


@dataclass
class TrainItem:
    x0: np.ndarray
    y: np.ndarray
    acoustic: np.ndarray
    text_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    context: np.ndarray | None = None


@dataclass
class TrainBatch:
    items: list
    t: np.ndarray
    z: list

    def __post_init__(self):
        if not self.items:
            raise ValueError("empty batch")
        if len(self.items) != len(self.t) or len(self.items) != len(self.z):
            raise ValueError("batch members have inconsistent lengths")


class ScoreNet:
    def __init__(self, cfg: ScoreNetConfig, sched: SdeSchedule):
        self.cfg = cfg
        self.sched = sched

    # -- parameters --------------------------------------------------------------

    def init_params(self, rng: np.random.Generator) -> ScoreNetParams:
        p = ScoreNetParams(self.cfg.layout())
        for name, shape in p.layout:
            if name.endswith((".b1", ".b2", ".b", ".bc")):
                continue
            if name == "text.table":
                p[name][...] = rng.uniform(-1.0, 1.0, size=shape)
                continue
            bound = 1.0 / math.sqrt(shape[0])
            if name.startswith("dec."):
                bound *= 0.1
            p[name][...] = rng.uniform(-bound, bound, size=shape)
        return p

    # -- forward / backward --------------------------------------------------------

    def _forward(self, p: ScoreNetParams, x_t, y, t, acoustic, ids, interp, context):
        cfg = self.cfg
        x_t, y = _as_frames(x_t), _as_frames(y)
        if acoustic is None:
            acoustic = np.zeros((x_t.shape[0], cfg.acoustic_width))
        acoustic = _as_frames(acoustic) if np.ndim(acoustic) == 1 else np.asarray(acoustic)
        if acoustic.shape[0] != x_t.shape[0] or y.shape != x_t.shape:
            raise ValueError(f"frame count mismatch: state {x_t.shape}, source {y.shape}, acoustic {acoustic.shape}")
        a = float(mean_weight(t, self.sched))
        sig = float(std(t, self.sched))
        if sig <= 0:
            raise ValueError(f"kernel std vanishes at t={t}")
        cplx = cfg.complex_state
        xr, yr = to_channels(x_t, cplx), to_channels(y, cplx)
        parts = [xr]
        if cfg.use_source:
            parts.append(yr)
        if cfg.use_interp:
            parts.append(to_channels(_as_frames(interp) if interp is not None else x_t, cplx))
        parts.append(acoustic * cfg.acoustic_scale)
        dtype = p.flat.dtype
        inp = np.concatenate(parts, axis=1).astype(dtype, copy=False)
        temb = time_embedding(t, cfg.time_features).astype(dtype)

        a1 = inp @ p["enc.w1"] + p["enc.b1"] + temb @ p["enc.wt"]
        h1, s1 = _silu(a1)
        a2 = h1 @ p["enc.w2"] + p["enc.b2"]
        z_enc, s2 = _silu(a2)

        ids = np.asarray(ids, dtype=np.int64) if ids is not None else np.zeros(0, dtype=np.int64)
        att = None
        if len(ids):
            emb = p["text.table"][ids]
            q = z_enc @ p["att.wq"]
            k = emb @ p["att.wk"]
            v = emb @ p["att.wv"]
            scores = q @ k.T / math.sqrt(cfg.attn_dim)
            scores -= scores.max(axis=1, keepdims=True)
            w = np.exp(scores)
            w /= w.sum(axis=1, keepdims=True)
            o = w @ v
            z2 = z_enc + o @ p["att.wo"]
            att = (emb, q, k, v, w, o)
        else:
            z2 = z_enc

        n, c, nl = cfg.state_dim, cfg.channels, cfg.num_local
        head = z2 @ p["dec.w"] + p["dec.b"]
        coef = z2 @ p["dec.wc"] + p["dec.bc"]
        d = x_t - (1.0 - a) * y
        if context is None:
            context = context_features(y, cfg)
        phi = np.concatenate([context[..., :1], FEATURE_SCALE * np.log(_power(d) + POWER_FLOOR)[..., None],
                              context[..., 1:]], axis=-1).astype(dtype, copy=False)
        l1 = head[:, :n] + np.einsum("tkj,tj->tk", phi, coef[:, :nl])
        l2 = head[:, n : 2 * n] + np.einsum("tkj,tj->tk", phi, coef[:, nl:])
        add = head[:, 2 * n :]
        g1, g2 = expit(l1), expit(l2)
        rep = 2 if cplx else 1
        g1t, g2t = np.tile(g1, rep), np.tile(g2, rep)
        dr = to_channels(d, cplx)
        raw = ((g1t - 1.0) * dr + a * (g2t * yr + add)) / sig
        cache = dict(inp=inp, temb=temb, a1=a1, h1=h1, s1=s1, a2=a2, s2=s2, z=z_enc, z2=z2, att=att, ids=ids,
                     phi=phi, g1=g1, g2=g2, dr=dr, yr=yr, a=a, sig=sig, rep=rep)
        return raw, cache

    def _backward(self, p: ScoreNetParams, cache, draw, grads: ScoreNetParams, scale=1.0):
        cfg = self.cfg
        n, nl = cfg.state_dim, cfg.num_local
        a, sig, rep = cache["a"], cache["sig"], cache["rep"]
        draw = draw * scale
        dg1t = draw * cache["dr"] / sig
        dg2t = draw * a * cache["yr"] / sig
        dadd = draw * a / sig
        dg1 = dg1t.reshape(dg1t.shape[0], rep, n).sum(axis=1)
        dg2 = dg2t.reshape(dg2t.shape[0], rep, n).sum(axis=1)
        g1, g2 = cache["g1"], cache["g2"]
        dl1 = dg1 * g1 * (1.0 - g1)
        dl2 = dg2 * g2 * (1.0 - g2)
        phi = cache["phi"]
        dcoef = np.concatenate([np.einsum("tk,tkj->tj", dl1, phi), np.einsum("tk,tkj->tj", dl2, phi)], axis=1)
        dhead = np.concatenate([dl1, dl2, dadd], axis=1)

        z2 = cache["z2"]
        grads["dec.w"][...] += z2.T @ dhead
        grads["dec.b"][...] += dhead.sum(axis=0)
        grads["dec.wc"][...] += z2.T @ dcoef
        grads["dec.bc"][...] += dcoef.sum(axis=0)
        dz2 = dhead @ p["dec.w"].T + dcoef @ p["dec.wc"].T

        dz = dz2
        if cache["att"] is not None:
            emb, q, k, v, w, o = cache["att"]
            grads["att.wo"][...] += o.T @ dz2
            do = dz2 @ p["att.wo"].T
            dw = do @ v.T
            dv = w.T @ do
            ds = w * (dw - np.sum(dw * w, axis=1, keepdims=True)) / math.sqrt(cfg.attn_dim)
            dq = ds @ k
            dk = ds.T @ q
            grads["att.wq"][...] += cache["z"].T @ dq
            grads["att.wk"][...] += emb.T @ dk
            grads["att.wv"][...] += emb.T @ dv
            demb = dk @ p["att.wk"].T + dv @ p["att.wv"].T
            np.add.at(grads["text.table"], cache["ids"], demb)
            dz = dz2 + dq @ p["att.wq"].T

        da2 = dz * _silu_grad(cache["a2"], cache["s2"])
        grads["enc.w2"][...] += cache["h1"].T @ da2
        grads["enc.b2"][...] += da2.sum(axis=0)
        dh1 = da2 @ p["enc.w2"].T
        da1 = dh1 * _silu_grad(cache["a1"], cache["s1"])
        grads["enc.w1"][...] += cache["inp"].T @ da1
        da1_sum = da1.sum(axis=0)
        grads["enc.b1"][...] += da1_sum
        grads["enc.wt"][...] += np.outer(cache["temb"], da1_sum)

    def forward(self, p: ScoreNetParams, x_t, y, t, cond: ConditionBundle | None):
        """Score estimate shaped like x_t."""
        acoustic = ids = interp = None
        if cond is not None:
            acoustic, ids, interp = cond.acoustic_frames, cond.text_ids, cond.interp_spec
        raw, cache = self._forward(p, x_t, y, t, acoustic, ids, interp, None)
        out = from_channels(raw, self.cfg.complex_state) / cache["sig"]
        return out.reshape(np.shape(x_t))

    def score_fn(self, p: ScoreNetParams) -> Callable:
        """ScoreFunction for the sampler; the interpolated condition is refreshed each call."""
        sched = self.sched
        cache = {"y": None, "context": None}

        def score(x_t, y, t, cond):
            if cache["y"] is not y:
                cache["y"], cache["context"] = y, context_features(_as_frames(y), self.cfg)
            acoustic = ids = None
            interp = interpolate(np.asarray(y), np.asarray(x_t), t, sched)
            if cond is not None:
                acoustic, ids = cond.acoustic_frames, cond.text_ids
            raw, c = self._forward(p, x_t, y, t, acoustic, ids, interp, cache["context"])
            return (from_channels(raw, self.cfg.complex_state) / c["sig"]).reshape(np.shape(x_t))

        return score

    def dsm_loss(self, p: ScoreNetParams, batch: TrainBatch, with_grad=True):
        """Mean over items of |sigma(t) s(x_t) + z|^2, and its gradient (None if not requested)."""
        sched = self.sched
        if np.any((batch.t < sched.t_min) | (batch.t > sched.t_max)):
            raise ValueError(f"batch times must lie in [{sched.t_min}, {sched.t_max}]")
        grads = p.zeros_like() if with_grad else None
        total = 0.0
        nb = len(batch.items)
        for item, t, z in zip(batch.items, batch.t, batch.z):
            t = float(t)
            a = float(mean_weight(t, self.sched))
            x0, y = _as_frames(item.x0), _as_frames(item.y)
            z = np.asarray(z).reshape(x0.shape)
            x_t = a * x0 + (1.0 - a) * y + float(std(t, self.sched)) * z
            interp = interpolate(y, x_t, t, self.sched)
            context = item.context if item.context is not None else context_features(y, self.cfg)
            raw, cache = self._forward(p, x_t, y, t, item.acoustic, item.text_ids, interp, context)
            resid = raw + to_channels(z, self.cfg.complex_state)
            total += float(np.sum(resid**2, dtype=np.float64))
            if with_grad:
                self._backward(p, cache, 2.0 * resid, grads, scale=1.0 / nb)
        return total / nb, grads

    def make_batch(self, items: Sequence[TrainItem], rng: np.random.Generator, dtype=np.float64) -> TrainBatch:
        sched = self.sched
        ts = rng.uniform(sched.t_min, sched.t_max, size=len(items))
        zs = []
        for it in items:
            shape = _as_frames(it.x0).shape
            if self.cfg.complex_state:
                re = rng.standard_normal(shape, dtype=dtype)
                zs.append(re + 1j * rng.standard_normal(shape, dtype=dtype))
            else:
                zs.append(rng.standard_normal(shape, dtype=dtype))
        return TrainBatch(list(items), ts, zs)


# -- optimisation ---------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    steps: int = 1000
    clip_norm: float | None = None
    log_every: int = 1
    checkpoint_every: int = 0
    schedule: str = "constant"
    final_lr_ratio: float = 0.05
    # "float32" runs forward/backward in single precision; master weights,
    # gradient sums and Adam moments stay float64
    precision: str = "float64"

    def __post_init__(self):
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown learning-rate schedule {self.schedule!r}")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"unknown precision {self.precision!r}")

    def lr_at(self, step: int) -> float:
        """Learning rate for the update with 0-based index `step`."""
        if self.schedule == "constant":
            return self.learning_rate
        frac = min(step, self.steps) / max(self.steps, 1)
        r = self.final_lr_ratio
        return self.learning_rate * (r + (1 - r) * 0.5 * (1 + math.cos(math.pi * frac)))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def fresh(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_update(p: ScoreNetParams, g: ScoreNetParams, state: AdamState, opt: OptimizerConfig):
    grad = g.flat
    if opt.clip_norm is not None:
        norm = np.linalg.norm(grad)
        if norm > opt.clip_norm:
            grad = grad * (opt.clip_norm / norm)
    lr = opt.lr_at(state.step)
    state.step += 1
    state.m *= opt.beta1
    state.m += (1 - opt.beta1) * grad
    state.v *= opt.beta2
    state.v += (1 - opt.beta2) * grad * grad
    denom = np.sqrt(state.v / (1 - opt.beta2**state.step))
    denom += opt.eps
    p.flat -= (lr / (1 - opt.beta1**state.step)) * state.m / denom


def _single_array(x):
    x = np.asarray(x)
    return x.astype(np.complex64 if np.iscomplexobj(x) else np.float32)


def _single(item: TrainItem) -> TrainItem:
    context = None if item.context is None else item.context.astype(np.float32)
    return TrainItem(_single_array(item.x0), _single_array(item.y), _single_array(item.acoustic), item.text_ids,
                     context)


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def train(net: ScoreNet, params: ScoreNetParams, data, opt: OptimizerConfig, seed: int,
          state: AdamState | None = None, on_step=None):
    """Adam over minibatches; returns (params, state, losses).

    `data` is either a sequence of TrainItem (sampled with replacement) or a callable
    ``draw(rng, k) -> list[TrainItem]`` producing fresh items.  The minibatch for
    step k depends only on (seed, k), so resuming from a saved state continues the
    exact same sequence.
    """
    if not callable(data) and len(data) == 0:
        raise ValueError("empty training set")
    single = opt.precision == "float32"
    if not callable(data):
        for it in data:
            if it.context is None:
                it.context = context_features(_as_frames(it.y), net.cfg)
        if single:
            data = [_single(it) for it in data]
    state = state or AdamState.fresh(params.size)
    losses = []
    while state.step < opt.steps:
        rng = step_rng(seed, state.step)
        if callable(data):
            items = data(rng, opt.batch_size)
            if single:
                items = [_single(it) for it in items]
        else:
            items = [data[i] for i in rng.integers(0, len(data), size=opt.batch_size)]
        batch = net.make_batch(items, rng, np.float32 if single else np.float64)
        loss, grads = net.dsm_loss(params.astype(np.float32) if single else params, batch)
        if not np.isfinite(loss) or not np.all(np.isfinite(grads.flat)):
            raise TrainingError(f"non-finite loss {loss} at step {state.step}")
        adam_update(params, grads, state, opt)
        losses.append((state.step, loss))
        if on_step is not None:
            on_step(state.step, loss, params, state)
    return params, state, losses


# -- checkpoints -----------------------------------------------------------------------

MAGIC = "SCORENET-PARAMS v1"


def save_checkpoint(path, net: ScoreNet, params: ScoreNetParams, state: AdamState | None = None, meta=None):
    """Plain-text header naming slices and shapes, then little-endian float64 data."""
    arrays = [(name, shape) for name, shape in params.layout]
    flat = [params.flat]
    if state is not None:
        arrays += [("adam.m", (params.size,)), ("adam.v", (params.size,))]
        flat += [state.m, state.v]
    header = io.StringIO()
    header.write(MAGIC + "\n")
    header.write("config " + json.dumps(net.cfg.to_dict(), sort_keys=True) + "\n")
    header.write("schedule " + json.dumps(net.sched.to_dict(), sort_keys=True) + "\n")
    header.write("meta " + json.dumps(dict(meta or {}, adam_step=None if state is None else state.step),
                                      sort_keys=True) + "\n")
    for name, shape in arrays:
        header.write(f"slice {name} {','.join(str(s) for s in shape)}\n")
    header.write("end\n")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header.getvalue().encode("utf-8"))
        f.write(np.concatenate(flat).astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (net, params, adam_state_or_None, meta)."""
    with open(path, "rb") as f:
        if f.readline().decode("utf-8").strip() != MAGIC:
            raise ValueError(f"{path}: not a score-network checkpoint")
        cfg = sched = meta = None
        shapes = []
        while True:
            line = f.readline().decode("utf-8").rstrip("\n")
            if not line:
                raise ValueError(f"{path}: truncated header")
            if line == "end":
                break
            key, _, rest = line.partition(" ")
            if key == "config":
                cfg = ScoreNetConfig.from_dict(json.loads(rest))
            elif key == "schedule":
                sched = SdeSchedule(**json.loads(rest))
            elif key == "meta":
                meta = json.loads(rest)
            elif key == "slice":
                name, dims = rest.split(" ")
                shapes.append((name, tuple(int(s) for s in dims.split(","))))
        data = np.frombuffer(f.read(), dtype="<f8")
    net = ScoreNet(cfg, sched)
    layout = cfg.layout()
    if [(n, s) for n, s in shapes[: len(layout)]] != layout:
        raise ValueError(f"{path}: slice layout does not match the recorded config")
    params = ScoreNetParams(layout, data[: sum(int(np.prod(s)) for _, s in layout)].copy())
    state = None
    if len(shapes) > len(layout):
        size = params.size
        if data.shape[0] != 3 * size:
            raise ValueError(f"{path}: optimizer state has wrong size")
        state = AdamState(data[size : 2 * size].copy(), data[2 * size :].copy(), int(meta["adam_step"]))
    elif data.shape[0] != params.size:
        raise ValueError(f"{path}: expected {params.size} values, found {data.shape[0]}")
    return net, params, state, meta


def write_loss_csv(path, losses):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["step", "loss"])
        for step, loss in losses:
            wr.writerow([step, repr(float(loss))])


def read_loss_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [(int(r["step"]), float(r["loss"])) for r in rows]
