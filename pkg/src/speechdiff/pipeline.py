"""Glue between waveforms on disk and the score network: training items and inference."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conditioning import LogMelEmbedder, TextVocab, build_bundle, prompt_text
from .dsp import ComplexSpectrogram, FrameParams, Waveform, istft, read_wav, stft
from .prompts import Action, EditCommand, parse
from .scorenet import ScoreNet, ScoreNetConfig, ScoreNetParams, TrainItem
from .sde import SdeSchedule
from .sim import ROOM_RT60, DatasetManifest
from .solver import SolverConfig, sample

ENHANCE_ACTIONS = (Action.REMOVE_NOISE, Action.REMOVE_REVERB)
EDIT_ACTIONS = (Action.ADD_BACKGROUND, Action.ADD_REVERB)


def audio_config(params: FrameParams = FrameParams(), vocab: TextVocab | None = None, **kw) -> ScoreNetConfig:
    vocab = vocab or TextVocab.default()
    return ScoreNetConfig(state_dim=params.num_bins, vocab=vocab.tokens, **kw)


def peak_gain(w: Waveform) -> float:
    """Gain that brings the source to unit peak; silence is left alone."""
    peak = float(np.max(np.abs(w.samples))) if len(w) else 0.0
    return 1.0 / peak if peak > 0 else 1.0


def tail_padding(cmd: EditCommand, sample_rate: int) -> int:
    """Zero samples appended to the source so an added reverberant tail fits."""
    if cmd.action is not Action.ADD_REVERB:
        return 0
    return int(math.ceil(1.2 * ROOM_RT60[cmd.room_size] * sample_rate)) - 1


def _with_margin(x: np.ndarray, params: FrameParams) -> np.ndarray:
    # one trailing hop of silence keeps every kept sample under two synthesis windows
    return np.pad(x, (0, params.hop_length))


def make_item(source: Waveform, target: Waveform, prompt, vocab: TextVocab, params: FrameParams = FrameParams(),
              embedder=None) -> TrainItem:
    if len(source) != len(target):
        raise ValueError(f"source/target length mismatch: {len(source)} vs {len(target)}")
    g = peak_gain(source)
    src = Waveform(_with_margin(source.samples * g, params), source.sample_rate)
    tgt = Waveform(_with_margin(target.samples * g, params), target.sample_rate)
    embedder = embedder or LogMelEmbedder(params=params)
    return TrainItem(
        x0=stft(tgt, params).frames,
        y=stft(src, params).frames,
        acoustic=embedder(src),
        text_ids=vocab.ids(prompt_text(prompt)),
    )


def items_from_manifest(manifest: DatasetManifest, vocab: TextVocab, params: FrameParams = FrameParams(),
                        actions=None) -> list[TrainItem]:
    embedder = LogMelEmbedder(params=params)
    items = []
    for e in manifest.entries:
        if actions is not None and e.command.action not in actions:
            continue
        src = read_wav(manifest.path(e.source_path))
        tgt = read_wav(manifest.path(e.target_path))
        items.append(make_item(src, tgt, e.command, vocab, params, embedder))
    if not items:
        raise ValueError("manifest has no usable entries")
    return items


@dataclass(frozen=True)
class Model:
    net: ScoreNet
    params: ScoreNetParams
    frame: FrameParams = FrameParams()

    @property
    def vocab(self) -> TextVocab:
        return TextVocab(self.net.cfg.vocab)

    def check_compatible(self):
        if self.net.cfg.state_dim != self.frame.num_bins:
            raise ValueError(f"checkpoint has {self.net.cfg.state_dim} bins, STFT gives {self.frame.num_bins}")


def run_model(model: Model, source: Waveform, prompt: str | EditCommand, solver: SolverConfig,
              seed, extend: bool = True) -> Waveform:
    """Process one waveform under a prompt.

    With `extend`, AddReverb prompts append room for the reverberant tail so the
    output is longer than the input; dataset sources already carry that room.
    `seed` is anything `numpy.random.default_rng` accepts.
    """
    model.check_compatible()
    cmd = parse(prompt) if isinstance(prompt, str) else prompt
    pad = tail_padding(cmd, source.sample_rate) if extend else 0
    samples = np.pad(source.samples, (0, pad)) if pad else source.samples
    g = peak_gain(source)
    src = Waveform(_with_margin(samples * g, model.frame), source.sample_rate)
    spec = stft(src, model.frame)
    sched: SdeSchedule = model.net.sched
    cond = build_bundle(src, cmd, sched.t_max, None, sched, vocab=model.vocab, params=model.frame, source=spec)
    rng = np.random.default_rng(seed)
    x = sample(spec.frames, model.net.score_fn(model.params), cond, sched, solver, rng)
    out = istft(ComplexSpectrogram(x, model.frame), len(samples))
    return Waveform(out.samples / g, source.sample_rate)
