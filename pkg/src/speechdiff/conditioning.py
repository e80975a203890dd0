"""Condition assembly: interpolated source spectrogram, acoustic frames, prompt tokens."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Protocol

import numpy as np

from .dsp import HOP_LENGTH, N_FFT, SAMPLE_RATE, ComplexSpectrogram, FrameParams, Waveform, stft
from .prompts import DEFAULT_LABELS, ROOM_SIZES, EditCommand, format_command, format_number
from .sde import SdeSchedule

ACOUSTIC_WIDTH = 13
TEXT_WIDTH = 64
LOG_FLOOR = float(np.log(1e-10))
UNK = "<unk>"


class AcousticEmbedder(Protocol):
    hop_length: int
    width: int

    def __call__(self, y: Waveform) -> np.ndarray: ...


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels=ACOUSTIC_WIDTH, n_fft=N_FFT, sr=SAMPLE_RATE, fmin=0.0, fmax=None) -> np.ndarray:
    """Triangular filters, shape (n_mels, n_fft // 2 + 1)."""
    fmax = sr / 2 if fmax is None else fmax
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, len(freqs)))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


class LogMelEmbedder:
    """Stand-in acoustic embedder: log mel-band energies on the STFT frame grid."""

    hop_length = HOP_LENGTH

    def __init__(self, width: int = ACOUSTIC_WIDTH, params: FrameParams = FrameParams()):
        self.width = width
        self.params = params
        self.fb = mel_filterbank(width, params.n_fft)

    def __call__(self, y: Waveform) -> np.ndarray:
        if len(y) == 0:
            raise ValueError("empty waveform")
        power = np.abs(stft(y, replace(self.params, compression=1.0)).frames) ** 2
        return np.log(np.maximum(power @ self.fb.T, np.exp(LOG_FLOOR)))


def embed_acoustic(y: Waveform, embedder: AcousticEmbedder | None = None) -> np.ndarray:
    return (embedder or LogMelEmbedder())(y)


class TextVocab:
    """Lower-cased whitespace tokens -> row ids; id 0 is the shared unknown token."""

    def __init__(self, tokens):
        uniq = [UNK] + sorted({t for t in tokens if t != UNK})
        self.tokens = tuple(uniq)
        self.index = {t: i for i, t in enumerate(uniq)}

    def __len__(self):
        return len(self.tokens)

    def ids(self, prompt: str) -> np.ndarray:
        return np.array([self.index.get(w, 0) for w in prompt.lower().split()], dtype=np.int64)

    @classmethod
    def default(cls, labels=DEFAULT_LABELS) -> "TextVocab":
        words = "add background sound as with snr remove noise reverberation room size".split()
        words += list(ROOM_SIZES)
        for label in labels:
            words += label.split()
        words += [f"{format_number(v / 10)}db" for v in range(151)]
        return cls(words)


def prompt_text(prompt) -> str:
    if prompt is None:
        return ""
    if isinstance(prompt, EditCommand):
        return format_command(prompt)
    return str(prompt)


def embed_text(prompt, table: np.ndarray, vocab: TextVocab) -> np.ndarray:
    ids = vocab.ids(prompt_text(prompt))
    return table[ids] if len(ids) else np.zeros((0, table.shape[1]))


def source_weight(t: float, sched: SdeSchedule) -> float:
    """Weight of the source spectrogram in the interpolated condition; 1 at t_max."""
    if sched.interp_mode == "linear":
        return float((t - sched.t_min) / (sched.t_max - sched.t_min))
    return float(np.exp(-sched.gamma * (sched.t_max - t)))


def interpolate(source, x_t, t: float, sched: SdeSchedule):
    w = source_weight(t, sched)
    if w == 1.0:
        return np.array(source, copy=True)
    return w * source + (1.0 - w) * x_t


@dataclass(frozen=True)
class ConditionBundle:
    source_spec: np.ndarray
    interp_spec: np.ndarray
    acoustic_frames: np.ndarray
    text_ids: np.ndarray
    text_embeds: np.ndarray | None = None

    def __post_init__(self):
        if self.acoustic_frames.shape[0] != self.source_spec.shape[0]:
            raise ValueError(
                f"acoustic frames ({self.acoustic_frames.shape[0]}) misaligned with "
                f"spectrogram frames ({self.source_spec.shape[0]})"
            )

    def at(self, t: float, x_t, sched: SdeSchedule) -> "ConditionBundle":
        return replace(self, interp_spec=interpolate(self.source_spec, x_t, t, sched))


def build_bundle(y: Waveform, prompt, t: float, x_t, sched: SdeSchedule, vocab: TextVocab | None = None,
                 table: np.ndarray | None = None, embedder: AcousticEmbedder | None = None,
                 params: FrameParams = FrameParams(), source: ComplexSpectrogram | None = None) -> ConditionBundle:
    embedder = embedder or LogMelEmbedder(params=params)
    if embedder.hop_length != params.hop_length:
        raise ValueError("acoustic embedder and STFT must share the hop length")
    spec = source.frames if source is not None else stft(y, params).frames
    acoustic = embedder(y)
    vocab = vocab or TextVocab.default()
    text = prompt_text(prompt)
    ids = vocab.ids(text)
    embeds = embed_text(text, table, vocab) if table is not None else None
    x_t = spec if x_t is None else np.asarray(x_t)
    if x_t.shape != spec.shape:
        raise ValueError(f"state shape {x_t.shape} does not match source {spec.shape}")
    return ConditionBundle(spec, interpolate(spec, x_t, t, sched), acoustic, ids, embeds)
