"""Objective metrics: SI-SDR, segmental SNR, log-spectral distance, RT60."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dsp import SAMPLE_RATE, Waveform, stft

SI_SDR_CAP = 100.0
LSD_FLOOR = 1e-8


class NoDecayError(ValueError):
    pass


@dataclass(frozen=True)
class MetricReport:
    si_sdr_db: float
    seg_snr_db: float
    lsd: float
    rt60_s: float | None = None


def _samples(w):
    return w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)


def si_sdr(ref, est) -> float:
    s, e = _samples(ref), _samples(est)
    if s.shape != e.shape:
        raise ValueError(f"length mismatch {s.shape} vs {e.shape}")
    ss = np.dot(s, s)
    if ss == 0:
        raise ValueError("silent reference")
    target = (np.dot(e, s) / ss) * s
    err = target - e
    te, ee = np.dot(target, target), np.dot(err, err)
    if ee <= te * 10 ** (-SI_SDR_CAP / 10):
        return SI_SDR_CAP
    return float(10 * np.log10(te / ee))


def seg_snr(ref, est, frame=320, lo=-10.0, hi=35.0) -> float:
    s, e = _samples(ref), _samples(est)
    if s.shape != e.shape:
        raise ValueError(f"length mismatch {s.shape} vs {e.shape}")
    n = len(s) // frame
    if n == 0:
        raise ValueError("signal shorter than one segment")
    s = s[: n * frame].reshape(n, frame)
    d = s - e[: n * frame].reshape(n, frame)
    ps, pd = np.sum(s**2, axis=1), np.sum(d**2, axis=1)
    active = ps > 0
    if not np.any(active):
        raise ValueError("silent reference")
    with np.errstate(divide="ignore"):
        snr = 10 * np.log10(ps[active] / np.maximum(pd[active], 1e-20))
    return float(np.mean(np.clip(snr, lo, hi)))


def log_spectral_distance(ref, est) -> float:
    r, e = _samples(ref), _samples(est)
    if r.shape != e.shape:
        raise ValueError(f"length mismatch {r.shape} vs {e.shape}")
    mr = np.maximum(np.abs(stft(Waveform(r)).frames), LSD_FLOOR)
    me = np.maximum(np.abs(stft(Waveform(e)).frames), LSD_FLOOR)
    return float(np.sqrt(np.mean((20 * np.log10(mr) - 20 * np.log10(me)) ** 2)))


def schroeder_curve(w) -> np.ndarray:
    """Backward-integrated energy decay curve in dB re its initial value."""
    energy = _samples(w) ** 2
    edc = np.cumsum(energy[::-1])[::-1]
    if edc[0] <= 0:
        raise NoDecayError("no measurable decay: silent signal")
    with np.errstate(divide="ignore"):
        return 10 * np.log10(edc / edc[0])


def estimate_rt60(w, sample_rate=SAMPLE_RATE, fit_range=(-5.0, -25.0), block=0.01) -> float:
    """Schroeder backward integration with a line fit between -5 and -25 dB.

    The short-time energy over the fit window must itself fall by at least 10 dB,
    otherwise the curve is a truncation artefact of stationary sound.
    """
    x = _samples(w)
    edc = schroeder_curve(x)
    hi, lo = fit_range
    start = int(np.argmax(edc <= hi))
    stop = int(np.argmax(edc <= lo))
    if edc[start] > hi or edc[stop] > lo or stop - start < 4:
        raise NoDecayError("no measurable decay: decay curve never spans the fit range")
    t = np.arange(start, stop + 1) / sample_rate
    slope, _ = np.polyfit(t, edc[start : stop + 1], 1)
    if not slope < 0:
        raise NoDecayError("no measurable decay: non-negative slope")

    hop = max(1, int(block * sample_rate))
    nblk = (stop + 1 - start) // hop
    if nblk >= 3:
        blocks = x[start : start + nblk * hop].reshape(nblk, hop)
        level = 10 * np.log10(np.mean(blocks**2, axis=1) + 1e-30)
        bslope, _ = np.polyfit(np.arange(nblk) * hop / sample_rate, level, 1)
        if bslope * nblk * hop / sample_rate > -10.0:
            raise NoDecayError("no measurable decay: energy envelope is not decreasing")
    return float(-60.0 / slope)


def tail_rt60(out, source, sample_rate=SAMPLE_RATE, threshold_db=-40.0) -> float:
    """RT60 of the part of `out` after the last active sample of `source`."""
    src = _samples(source)
    peak = np.max(np.abs(src))
    if peak == 0:
        raise NoDecayError("silent source")
    active = np.nonzero(np.abs(src) >= peak * 10 ** (threshold_db / 20))[0]
    return estimate_rt60(_samples(out)[active[-1] + 1 :], sample_rate)


def report(ref, est, with_rt60=False) -> MetricReport:
    rt = None
    if with_rt60:
        try:
            rt = estimate_rt60(est)
        except NoDecayError:
            rt = None
    return MetricReport(si_sdr(ref, est), seg_snr(ref, est), log_spectral_distance(ref, est), rt)


def write_report_csv(path, rows):
    """rows: iterable of (entry_id, MetricReport)."""
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["entry_id", "si_sdr_db", "seg_snr_db", "lsd", "rt60_s"])
        for entry_id, m in rows:
            rt = "" if m.rt60_s is None else f"{m.rt60_s:.6f}"
            wr.writerow([entry_id, f"{m.si_sdr_db:.6f}", f"{m.seg_snr_db:.6f}", f"{m.lsd:.6f}", rt])
