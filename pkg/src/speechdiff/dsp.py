"""Waveform container, WAV I/O and the STFT/iSTFT pair used throughout the pipeline."""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
WIN_LENGTH = 640
HOP_LENGTH = 320
N_FFT = 1024


class AudioFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioFormatError(f"expected mono samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise AudioFormatError("waveform contains non-finite values")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class FrameParams:
    win_length: int = WIN_LENGTH
    hop_length: int = HOP_LENGTH
    n_fft: int = N_FFT
    compression: float = 1.0

    @property
    def num_bins(self) -> int:
        return self.n_fft // 2 + 1


@dataclass(frozen=True)
class ComplexSpectrogram:
    """Frames are stored as rows: shape (num_frames, num_bins)."""

    frames: np.ndarray
    params: FrameParams = field(default_factory=FrameParams)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_bins(self) -> int:
        return self.frames.shape[1]


def hann_window(length: int = WIN_LENGTH) -> np.ndarray:
    # periodic Hann: sums to a constant at 50% overlap
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def num_frames_for(length: int, hop: int = HOP_LENGTH) -> int:
    return -(-length // hop)


def _check_waveform(w: Waveform):
    if len(w) == 0:
        raise AudioFormatError("empty waveform")
    if w.sample_rate != SAMPLE_RATE:
        raise AudioFormatError(
            f"sample rate {w.sample_rate} Hz not supported; resample to {SAMPLE_RATE} Hz first"
        )


def _padded(x: np.ndarray, params: FrameParams) -> np.ndarray:
    half = params.win_length // 2
    n = num_frames_for(len(x), params.hop_length)
    right = max(0, (n - 1) * params.hop_length + half - len(x))
    if len(x) == 1:
        return np.pad(x, (half, right), mode="edge")
    return np.pad(x, (half, right), mode="reflect")


def frame_signal(x: np.ndarray, params: FrameParams = FrameParams()) -> np.ndarray:
    """Windowed analysis frames of the centre-padded signal, shape (num_frames, win_length)."""
    padded = _padded(x, params)
    n = num_frames_for(len(x), params.hop_length)
    idx = np.arange(params.win_length)[None, :] + params.hop_length * np.arange(n)[:, None]
    return padded[idx] * hann_window(params.win_length)[None, :]


def _norm(params: FrameParams) -> float:
    return float(np.sqrt(np.sum(hann_window(params.win_length) ** 2)))


def compress(frames: np.ndarray, exponent: float) -> np.ndarray:
    if exponent == 1.0:
        return frames
    mag = np.abs(frames)
    return np.where(mag > 0, mag ** exponent * np.exp(1j * np.angle(frames)), 0.0)


def stft(w: Waveform, params: FrameParams = FrameParams()) -> ComplexSpectrogram:
    _check_waveform(w)
    frames = frame_signal(w.samples, params)
    spec = np.fft.rfft(frames, n=params.n_fft, axis=1) / _norm(params)
    return ComplexSpectrogram(compress(spec, params.compression), params)


def istft(s: ComplexSpectrogram, length: int, params: FrameParams | None = None) -> Waveform:
    """Weighted overlap-add inverse; the least-squares inverse of `stft` for the same params."""
    if params is not None and params != s.params:
        raise AudioFormatError(f"frame parameters {params} do not match spectrogram {s.params}")
    params = s.params
    if s.num_bins != params.num_bins:
        raise AudioFormatError(f"spectrogram has {s.num_bins} bins, expected {params.num_bins}")
    spec = compress(s.frames, 1.0 / params.compression) * _norm(params)
    frames = np.fft.irfft(spec, n=params.n_fft, axis=1)[:, : params.win_length]
    win = hann_window(params.win_length)
    n = s.num_frames
    total = (n - 1) * params.hop_length + params.win_length
    out = np.zeros(total)
    wsum = np.zeros(total)
    for i in range(n):
        start = i * params.hop_length
        out[start : start + params.win_length] += frames[i] * win
        wsum[start : start + params.win_length] += win**2
    nz = wsum > 1e-10
    out[nz] /= wsum[nz]
    half = params.win_length // 2
    out = out[half : half + length]
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return Waveform(out)


def read_wav(path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as f:
            channels, width, rate = f.getnchannels(), f.getsampwidth(), f.getframerate()
            if f.getcomptype() != "NONE" or width != 2:
                raise AudioFormatError(f"{path}: only 16-bit PCM is supported")
            if channels != 1:
                raise AudioFormatError(f"{path}: unsupported channel count {channels}")
            if rate != SAMPLE_RATE:
                raise AudioFormatError(
                    f"{path}: sample rate {rate} Hz, resample to {SAMPLE_RATE} Hz before use"
                )
            data = f.readframes(f.getnframes())
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: {exc}") from exc
    pcm = np.frombuffer(data, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0)


def quantize(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, w: Waveform):
    if w.sample_rate != SAMPLE_RATE:
        raise AudioFormatError(f"refusing to write {w.sample_rate} Hz audio")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(SAMPLE_RATE)
        f.writeframes(quantize(w.samples).tobytes())
