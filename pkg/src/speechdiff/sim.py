"""Paired-data simulation: SNR-exact mixing, synthetic RIRs, synthetic corpora, manifests."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .dsp import SAMPLE_RATE, Waveform, read_wav, write_wav
from .prompts import DEFAULT_LABELS, ROOM_SIZES, Action, EditCommand

ROOM_RT60 = {"small": 0.2, "medium": 0.5, "large": 0.9}
TAIL_GAIN = 0.1
PEAK_LIMIT = 0.99


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class RirSpec:
    room_size: str
    rt60_s: float
    length: int
    direct_delay: int = 0

    def __post_init__(self):
        if self.room_size not in ROOM_SIZES:
            raise ValueError(f"room size must be one of {ROOM_SIZES}")
        if not self.rt60_s > 0 or self.length <= self.direct_delay:
            raise ValueError("need rt60_s > 0 and length > direct_delay")

    @classmethod
    def for_room(cls, room_size: str, direct_delay: int = 0) -> "RirSpec":
        rt60 = ROOM_RT60[room_size]
        return cls(room_size, rt60, direct_delay + int(math.ceil(1.2 * rt60 * SAMPLE_RATE)), direct_delay)


def _power(x):
    return float(np.mean(np.asarray(x) ** 2)) if len(x) else 0.0


def align_lengths(clean: Waveform, noise: Waveform, rng: np.random.Generator):
    """Insert short clean speech into the background, or tile a short background.

    Returns (clean_padded, noise_fitted, insert_offset).
    """
    c, n = clean.samples, noise.samples
    if len(c) == 0 or len(n) == 0:
        raise SimulationError("empty input")
    if len(c) == len(n):
        return clean, noise, 0
    if len(c) < len(n):
        offset = int(rng.integers(0, len(n) - len(c) + 1))
        padded = np.zeros(len(n))
        padded[offset : offset + len(c)] = c
        return Waveform(padded), noise, offset
    reps = -(-len(c) // len(n))
    return clean, Waveform(np.tile(n, reps)[: len(c)]), 0


def measure_snr(clean, noise, span=None) -> float:
    c, n = np.asarray(clean), np.asarray(noise)
    if span is not None:
        c, n = c[span[0] : span[1]], n[span[0] : span[1]]
    pc, pn = _power(c), _power(n)
    if pn == 0:
        return math.inf
    return 10 * math.log10(pc / pn)


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float, rng=None, span=None):
    """Scale `noise` so the clean-to-noise power ratio over the mixing span is `snr_db`.

    Unequal lengths are first aligned with `align_lengths` (this needs `rng`); the
    span is then the inserted clean interval.  Returns (mix, scaled_noise).
    """
    if len(clean) != len(noise):
        if rng is None:
            raise SimulationError("unequal lengths need an rng for alignment")
        n_clean = len(clean)
        clean, noise, offset = align_lengths(clean, noise, rng)
        if span is None and n_clean < len(noise):
            span = (offset, offset + n_clean)
    c, n = clean.samples, noise.samples
    lo, hi = span if span is not None else (0, len(c))
    if math.isinf(snr_db) and snr_db > 0:
        return Waveform(c.copy()), Waveform(np.zeros_like(n))
    pc, pn = _power(c[lo:hi]), _power(n[lo:hi])
    if pc == 0 or pn == 0:
        raise SimulationError("SNR undefined for silent clean or noise")
    scale = math.sqrt(pc / (pn * 10 ** (snr_db / 10)))
    scaled = n * scale
    return Waveform(c + scaled), Waveform(scaled)


def synth_rir(spec: RirSpec, rng: np.random.Generator) -> Waveform:
    """Unit direct path plus an exponentially decaying Gaussian tail (60 dB at rt60)."""
    h = np.zeros(spec.length)
    h[spec.direct_delay] = 1.0
    n_tail = spec.length - spec.direct_delay - 1
    t = np.arange(1, n_tail + 1) / SAMPLE_RATE
    tail = TAIL_GAIN * rng.standard_normal(n_tail) * np.exp(-6.9 * t / spec.rt60_s)
    peak = np.max(np.abs(tail)) if n_tail else 0.0
    if peak >= PEAK_LIMIT:
        tail *= PEAK_LIMIT / peak
    h[spec.direct_delay + 1 :] = tail
    return Waveform(h / np.max(np.abs(h)))


def apply_rir(clean: Waveform, rir: Waveform) -> Waveform:
    if len(clean) == 0 or len(rir) == 0:
        raise SimulationError("empty input")
    out = signal.convolve(clean.samples, rir.samples, mode="full")
    peak = np.max(np.abs(out))
    if peak > 1.0:
        out = out / peak
    return Waveform(out)


# -- synthetic corpora ------------------------------------------------------------


def synth_clean(rng: np.random.Generator, duration=1.0, sr=SAMPLE_RATE) -> np.ndarray:
    """Speech-like harmonic complex: gliding f0, spectral tilt, syllabic envelope."""
    n = int(duration * sr)
    t = np.arange(n) / sr
    f0 = rng.uniform(100, 240) * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(2, 5) * t + rng.uniform(0, 6.3)))
    phase = 2 * np.pi * np.cumsum(f0) / sr
    n_harm = int(rng.integers(6, 16))
    formant = rng.uniform(400, 1500)
    x = np.zeros(n)
    for k in range(1, n_harm + 1):
        amp = (1.0 / k) * (1.0 + 2.0 * np.exp(-(((k * f0.mean()) - formant) / 400.0) ** 2))
        x += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    n_syl = int(rng.integers(2, 5))
    env = np.zeros(n)
    edges = np.sort(rng.uniform(0.05, 0.85, size=n_syl)) * duration
    for start in edges:
        length = rng.uniform(0.12, 0.3)
        m = (t >= start) & (t < start + length)
        env[m] = np.maximum(env[m], np.sin(np.pi * (t[m] - start) / length) ** 0.5)
    x *= env
    peak = np.max(np.abs(x))
    return 0.5 * x / peak if peak > 0 else x


def synth_noise(label: str, rng: np.random.Generator, duration=1.0, sr=SAMPLE_RATE) -> np.ndarray:
    n = int(duration * sr)
    white = rng.standard_normal(n)
    if label == "rain":
        b, a = signal.butter(2, 2000 / (sr / 2), btype="high")
        x = signal.lfilter(b, a, white) * (1 + 0.5 * (rng.random(n) < 0.002))
    elif label == "dog barking":
        b, a = signal.butter(2, [500 / (sr / 2), 1600 / (sr / 2)], btype="band")
        x = signal.lfilter(b, a, white)
        gate = np.zeros(n)
        for start in rng.uniform(0, max(duration - 0.15, 0.01), size=int(rng.integers(2, 5))):
            i, j = int(start * sr), int((start + rng.uniform(0.08, 0.15)) * sr)
            gate[i:j] = 1.0
        x = x * (0.05 + gate)
    elif label == "traffic":
        b, a = signal.butter(1, 300 / (sr / 2), btype="low")
        t = np.arange(n) / sr
        x = signal.lfilter(b, a, white) * (1 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.2, 0.6) * t))
    elif label == "babble":
        x = sum(synth_clean(rng, duration, sr) for _ in range(4))
        x = x + 0.05 * white
    else:
        # unknown labels get a label-seeded coloured noise
        seed = sum(ord(ch) for ch in label)
        cut = 300 + (seed % 30) * 200
        b, a = signal.butter(2, min(cut, sr / 2 - 100) / (sr / 2), btype="low")
        x = signal.lfilter(b, a, white)
    peak = np.max(np.abs(x))
    return 0.5 * x / peak if peak > 0 else x


def label_to_stem(label: str) -> str:
    return label.replace(" ", "_")


def stem_to_label(stem: str) -> str:
    return stem.rsplit("-", 1)[0].replace("_", " ")


def make_synthetic_corpus(root, n_clean: int, n_noise_per_label: int, seed: int, labels=DEFAULT_LABELS,
                          clean_duration=1.0, noise_durations=(0.6, 2.0)):
    """Write clean/*.wav and noise/<label>-NNN.wav under `root`; returns (clean_dir, noise_dir)."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    clean_dir, noise_dir = root / "clean", root / "noise"
    for i in range(n_clean):
        write_wav(clean_dir / f"clean-{i:04d}.wav", Waveform(synth_clean(rng, clean_duration)))
    for label in labels:
        for i in range(n_noise_per_label):
            dur = float(rng.uniform(*noise_durations))
            write_wav(noise_dir / f"{label_to_stem(label)}-{i:03d}.wav", Waveform(synth_noise(label, rng, dur)))
    return clean_dir, noise_dir


# -- dataset building ---------------------------------------------------------------


@dataclass
class ManifestEntry:
    entry_id: str
    source_path: str
    target_path: str
    command: EditCommand
    seed: int
    clean_path: str
    noise_path: str | None = None
    insert_offset: int = 0
    gain: float = 1.0
    measured_snr_db: float | None = None
    rt60_s: float | None = None

    def to_json(self) -> str:
        d = {
            "entry_id": self.entry_id,
            "source_path": self.source_path,
            "target_path": self.target_path,
            "command": self.command.to_dict(),
            "seed": self.seed,
            "clean_path": self.clean_path,
            "noise_path": self.noise_path,
            "insert_offset": self.insert_offset,
            "gain": self.gain,
            "measured_snr_db": self.measured_snr_db,
            "rt60_s": self.rt60_s,
        }
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        d = dict(d)
        d["command"] = EditCommand.from_dict(d["command"])
        return cls(**d)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    def path(self, rel: str) -> Path:
        return self.root / rel

    def __len__(self):
        return len(self.entries)

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for e in self.entries:
                f.write(e.to_json() + "\n")
        self.root = path.parent

    @classmethod
    def load(cls, path, check_files=True) -> "DatasetManifest":
        path = Path(path)
        with open(path, encoding="utf-8") as f:
            entries = [ManifestEntry.from_dict(json.loads(line)) for line in f if line.strip()]
        man = cls(entries, path.parent)
        seeds = [e.seed for e in entries]
        if len(set(seeds)) != len(seeds):
            raise SimulationError(f"{path}: duplicate entry seeds")
        if check_files:
            for e in entries:
                for rel in (e.source_path, e.target_path):
                    if not man.path(rel).exists():
                        raise FileNotFoundError(f"{path}: missing {rel}")
        return man


TASK_KEYS = {
    "remove_noise": Action.REMOVE_NOISE,
    "remove_reverb": Action.REMOVE_REVERB,
    "add_background": Action.ADD_BACKGROUND,
    "add_reverb": Action.ADD_REVERB,
}


def parse_task_mix(spec: str | dict | None) -> dict[Action, float]:
    """'remove_noise=1,add_reverb=0.5' -> {Action: weight}; None means uniform."""
    if spec is None:
        return {a: 1.0 for a in Action}
    if isinstance(spec, str):
        items = {}
        for part in spec.split(","):
            if part.strip():
                k, _, v = part.partition("=")
                items[k.strip()] = float(v) if v else 1.0
        spec = items
    mix = {}
    for k, v in spec.items():
        if k not in TASK_KEYS:
            raise ValueError(f"unknown task {k!r}; known: {sorted(TASK_KEYS)}")
        if v > 0:
            mix[TASK_KEYS[k]] = float(v)
    if not mix:
        raise ValueError("task mix has no positive weights")
    return mix


def _list_wavs(d) -> list[Path]:
    files = sorted(Path(d).glob("*.wav"))
    if not files:
        raise SimulationError(f"empty corpus: {d}")
    return files


def _rel(path: Path, root: Path) -> str:
    return os.path.relpath(Path(path).resolve(), Path(root).resolve())


def render_entry(command: EditCommand, clean: Waveform, noise: Waveform | None, seed: int):
    """Deterministically synthesise (source, target, info) for one entry from its seed."""
    rng = np.random.default_rng(seed)
    info = {"insert_offset": 0, "measured_snr_db": None, "rt60_s": None}
    action = command.action
    if action in (Action.ADD_BACKGROUND, Action.REMOVE_NOISE):
        if noise is None:
            raise SimulationError("background task without noise file")
        snr = command.snr_db if command.snr_db is not None else float(rng.integers(0, 151)) / 10.0
        n_clean = len(clean)
        padded, fitted, offset = align_lengths(clean, noise, rng)
        span = (offset, offset + n_clean) if n_clean < len(fitted) else None
        mix, scaled = mix_at_snr(padded, fitted, snr, span=span)
        info["insert_offset"] = offset
        info["measured_snr_db"] = measure_snr(padded.samples, scaled.samples, span)
        info["snr_request"] = snr
        info["span"] = span
        clean_part, corrupted = padded.samples, mix.samples
    else:
        room = command.room_size if command.room_size is not None else ROOM_SIZES[rng.integers(len(ROOM_SIZES))]
        spec = RirSpec.for_room(room)
        rir = synth_rir(spec, rng)
        wet = signal.convolve(clean.samples, rir.samples, mode="full")
        clean_part = np.pad(clean.samples, (0, len(wet) - len(clean)))
        corrupted = wet
        info["rt60_s"] = spec.rt60_s
    peak = max(np.max(np.abs(clean_part)), np.max(np.abs(corrupted)))
    gain = min(1.0, PEAK_LIMIT / peak) if peak > 0 else 1.0
    clean_part, corrupted = clean_part * gain, corrupted * gain
    info["gain"] = gain
    if action in (Action.REMOVE_NOISE, Action.REMOVE_REVERB):
        return Waveform(corrupted), Waveform(clean_part), info
    return Waveform(clean_part), Waveform(corrupted), info


def build_dataset(clean_dir, noise_dir, n_pairs: int, out_dir, seed: int, task_mix=None,
                  labels=None, manifest_name="manifest.jsonl") -> Path:
    """Simulate `n_pairs` source/target pairs under `out_dir` and write the manifest.

    Enhancement entries have the corrupted signal as source and clean as target;
    editing entries the reverse.  Every entry carries its own seed, derived from
    (seed, index), so `regenerate` can rebuild the audio from the manifest alone.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clean_files, noise_files = _list_wavs(clean_dir), _list_wavs(noise_dir)
    if labels is not None:
        wanted = set(labels)
        noise_files = [p for p in noise_files if stem_to_label(p.stem) in wanted]
        if not noise_files:
            raise SimulationError(f"no noise files for labels {sorted(wanted)}")
    mix = parse_task_mix(task_mix)
    actions = list(mix)
    weights = np.array([mix[a] for a in actions]) / sum(mix.values())
    plan_rng = np.random.default_rng(seed)
    child_seeds = np.random.SeedSequence(seed).spawn(n_pairs)
    entries = []
    for i in range(n_pairs):
        entry_seed = int(child_seeds[i].generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
        action = actions[int(plan_rng.choice(len(actions), p=weights))]
        clean_path = clean_files[int(plan_rng.integers(len(clean_files)))]
        noise_path = None
        if action is Action.ADD_BACKGROUND:
            noise_path = noise_files[int(plan_rng.integers(len(noise_files)))]
            cmd = EditCommand(action, sound_label=stem_to_label(noise_path.stem),
                              snr_db=int(plan_rng.integers(0, 151)) / 10.0)
        elif action is Action.ADD_REVERB:
            cmd = EditCommand(action, room_size=ROOM_SIZES[int(plan_rng.integers(len(ROOM_SIZES)))])
        elif action is Action.REMOVE_NOISE:
            noise_path = noise_files[int(plan_rng.integers(len(noise_files)))]
            cmd = EditCommand(action)
        else:
            cmd = EditCommand(action)
        entry = ManifestEntry(
            entry_id=f"{i:05d}",
            source_path=f"audio/{i:05d}-source.wav",
            target_path=f"audio/{i:05d}-target.wav",
            command=cmd,
            seed=entry_seed,
            clean_path=_rel(clean_path, out_dir),
            noise_path=None if noise_path is None else _rel(noise_path, out_dir),
        )
        _render_to_disk(entry, out_dir)
        entries.append(entry)
    manifest = DatasetManifest(entries, out_dir)
    path = out_dir / manifest_name
    manifest.write(path)
    return path


def _render_to_disk(entry: ManifestEntry, root: Path):
    clean = read_wav(root / entry.clean_path)
    noise = read_wav(root / entry.noise_path) if entry.noise_path else None
    source, target, info = render_entry(entry.command, clean, noise, entry.seed)
    write_wav(root / entry.source_path, source)
    write_wav(root / entry.target_path, target)
    entry.insert_offset = info["insert_offset"]
    entry.gain = info["gain"]
    entry.measured_snr_db = info["measured_snr_db"]
    entry.rt60_s = info["rt60_s"]


def regenerate(manifest_path, out_dir) -> Path:
    """Re-render every entry of a manifest into `out_dir` from its recorded seed."""
    man = DatasetManifest.load(manifest_path, check_files=False)
    out_dir = Path(out_dir)
    entries = []
    for e in man.entries:
        ne = ManifestEntry.from_dict(json.loads(e.to_json()))
        for attr in ("clean_path", "noise_path"):
            rel = getattr(ne, attr)
            if rel is not None:
                setattr(ne, attr, str((man.root / rel).resolve()))
        _render_to_disk(ne, out_dir)
        ne.clean_path, ne.noise_path = e.clean_path, e.noise_path
        entries.append(ne)
    path = out_dir / Path(manifest_path).name
    DatasetManifest(entries, out_dir).write(path)
    return path


def audit_snr(manifest: DatasetManifest) -> list[tuple[str, float, float]]:
    """Re-measure SNR from the written files: (entry_id, requested, measured) per noisy entry."""
    rows = []
    for e in manifest.entries:
        if e.command.action not in (Action.ADD_BACKGROUND, Action.REMOVE_NOISE):
            continue
        src = read_wav(manifest.path(e.source_path)).samples
        tgt = read_wav(manifest.path(e.target_path)).samples
        if e.command.action is Action.ADD_BACKGROUND:
            clean, mixed = src, tgt
            requested = e.command.snr_db
        else:
            clean, mixed = tgt, src
            requested = e.measured_snr_db
        n_clean = len(read_wav(manifest.path(e.clean_path)))
        span = (e.insert_offset, e.insert_offset + n_clean) if n_clean < len(clean) else None
        rows.append((e.entry_id, requested, measure_snr(clean, mixed - clean, span)))
    return rows
