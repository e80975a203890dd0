"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The slow end-to-end criteria (enhancement and reverberation editing) train real
models through the command-line entry points; expect the whole file to take
about 25 minutes on one core.
"""

import time

import numpy as np
import pytest

from speechdiff import checks, cli
from speechdiff.dsp import Waveform, istft, read_wav, stft, write_wav
from speechdiff.metrics import NoDecayError, estimate_rt60, tail_rt60
from speechdiff.prompts import (ROOM_SIZES, Action, EditCommand, NoMatch, OutOfRange, format_command, parse,
                                sample_command)
from speechdiff.sde import SdeSchedule
from speechdiff.sim import ROOM_RT60, RirSpec, measure_snr, mix_at_snr, synth_clean, synth_noise, synth_rir

pytestmark = pytest.mark.acceptance


def test_c1_kernel_moments(report):
    t0 = time.perf_counter()
    r = checks.check_kernel_moments(SdeSchedule(), n_paths=10_000, dt=1e-3, times=(0.25, 0.5, 1.0))
    secs = time.perf_counter() - t0
    ok = r.passed and secs < 60
    assert report(1, "kernel moments", ok, f"{r.detail}, {secs:.1f}s (limit 60s)")


def test_c2_reverse_recovery(report):
    t0 = time.perf_counter()
    r = checks.check_reverse_recovery(SdeSchedule(), n_runs=5000, num_steps=200)
    secs = time.perf_counter() - t0
    ok = r.passed and secs < 120
    assert report(2, "analytic reverse recovery", ok, f"{r.detail}, {secs:.1f}s (limit 120s)")


def test_c3_gradients(report):
    t0 = time.perf_counter()
    r = checks.check_gradients(seed=0, eps=1e-4, rtol=1e-4)
    secs = time.perf_counter() - t0
    ok = r.passed and secs < 60
    assert report(3, "gradient check", ok, f"{r.detail}, {secs:.1f}s (limit 60s)")


def test_c4_toy_dsm(report):
    t0 = time.perf_counter()
    r = checks.check_toy_dsm(SdeSchedule(), steps=5000)
    secs = time.perf_counter() - t0
    ok = r.passed and secs < 300
    assert report(4, "toy score matching", ok, f"{r.detail}, {secs:.1f}s (limit 300s)")


def test_c5_stft_round_trip(report):
    rng = np.random.default_rng(5)
    worst = np.inf
    for _ in range(100):
        n = int(rng.integers(1, 48_000))
        x = rng.uniform(-1, 1, n)
        y = istft(stft(Waveform(x)), n).samples
        err = np.sum((x - y) ** 2)
        snr = np.inf if err == 0 else 10 * np.log10(np.sum(x**2) / err)
        worst = min(worst, snr)
    assert report(5, "STFT round trip", worst >= 60, f"worst SNR over 100 waveforms {worst:.1f} dB (need >= 60)")


def test_c6_mixer(report):
    rng = np.random.default_rng(6)
    labels = ("rain", "dog barking", "traffic", "babble")
    worst = 0.0
    for i in range(1000):
        duration = float(rng.uniform(0.2, 1.0))
        clean = Waveform(synth_clean(rng, duration))
        noise = Waveform(synth_noise(labels[i % 4], rng, duration))
        snr = float(rng.uniform(0, 15))
        _, scaled = mix_at_snr(clean, noise, snr)
        worst = max(worst, abs(measure_snr(clean.samples, scaled.samples) - snr))
    assert report(6, "mixer exactness", worst <= 0.1, f"max |measured - requested| {worst:.2e} dB over 1000 (<= 0.1)")


def test_c7_prompt_grammar(report):
    rng = np.random.default_rng(7)
    mismatches = sum(parse(format_command(c)) != c for c in (sample_command(rng) for _ in range(1000)))
    forms = {
        "Add background sound as rain with SNR as 10dB": EditCommand(Action.ADD_BACKGROUND, "rain", 10.0),
        "Remove noise": EditCommand(Action.REMOVE_NOISE),
        "Remove reverberation": EditCommand(Action.REMOVE_REVERB),
    }
    for size in ROOM_SIZES:
        forms[f"Add reverberation with {size} room size"] = EditCommand(Action.ADD_REVERB, room_size=size)
    bad_forms = [text for text, cmd in forms.items() if parse(text) != cmd]
    rejected = []
    for text, pos in (("Add reverberation with huge room size", 3), ("Remove everything", 1),
                      ("Add background sound as rain with SNR as 40dB", 8)):
        try:
            parse(text)
        except (NoMatch, OutOfRange) as exc:
            rejected.append(exc.position == pos)
        else:
            rejected.append(False)
    ok = mismatches == 0 and not bad_forms and all(rejected)
    detail = (f"{1000 - mismatches}/1000 round trips, {len(forms) - len(bad_forms)}/{len(forms)} documented "
              f"forms, {sum(rejected)}/{len(rejected)} off-grammar strings rejected at the right token")
    assert report(7, "prompt grammar", ok, detail)


# -- end-to-end ----------------------------------------------------------------------

ENHANCE_CONFIG = """
[run]
seed = 11

[data]
task_mix = remove_noise=1
n_clean = 200
n_noise_per_label = 25
clean_duration = 0.6
noise_min_duration = 0.4
noise_max_duration = 1.0

[train]
steps = {steps}
learning_rate = 1e-3
schedule = cosine
precision = float32
log_every = 250
"""
ENHANCE_STEPS = 2700
TRAIN_BUDGET_S = 600


def test_c8_toy_enhancement(report, tmp_path, capsys):
    ini = tmp_path / "enhance.ini"
    ini.write_text(ENHANCE_CONFIG.format(steps=ENHANCE_STEPS))
    assert cli.main(["simulate", "--config", str(ini), "--n-pairs", "500", "--out", str(tmp_path / "train")]) == 0
    # held-out set: a different seed gives fresh clean signals, noise files and mixtures
    assert cli.main(["simulate", "--config", str(ini), "--seed", "12", "--n-pairs", "50",
                     "--out", str(tmp_path / "test")]) == 0
    t0 = time.perf_counter()
    assert cli.main(["train", "--config", str(ini), "--manifest", str(tmp_path / "train/manifest.jsonl"),
                     "--out", str(tmp_path / "model.ckpt")]) == 0
    train_s = time.perf_counter() - t0
    cfg = cli.load_config(str(ini))
    summary = cli.cmd_eval(cfg, tmp_path / "model.ckpt", tmp_path / "test/manifest.jsonl", tmp_path / "eval.csv")
    gain = summary["si_sdr_gain_db"]
    ok = gain >= 3.0 and train_s <= TRAIN_BUDGET_S
    detail = (f"mean SI-SDR gain {gain:+.2f} dB on {summary['entries']} held-out items (need >= +3), "
              f"training {train_s:.0f}s for {ENHANCE_STEPS} steps (limit {TRAIN_BUDGET_S}s)")
    assert report(8, "toy enhancement", ok, detail)


REVERB_CONFIG = """
[run]
seed = 21

[data]
task_mix = add_reverb=1
n_clean = 150
n_noise_per_label = 1
clean_duration = 0.5

[train]
steps = {steps}
learning_rate = 1e-3
schedule = cosine
precision = float32
log_every = 250
"""
REVERB_STEPS = 1500


def test_c9_room_size_control(report, tmp_path):
    rng = np.random.default_rng(9)
    rir_means = {size: float(np.mean([estimate_rt60(synth_rir(RirSpec.for_room(size), rng)) for _ in range(20)]))
                 for size in ROOM_SIZES}
    gaps = [rir_means[b] - rir_means[a] for a, b in zip(ROOM_SIZES, ROOM_SIZES[1:])]
    rir_ok = min(gaps) > 0.15

    ini = tmp_path / "reverb.ini"
    ini.write_text(REVERB_CONFIG.format(steps=REVERB_STEPS))
    assert cli.main(["simulate", "--config", str(ini), "--n-pairs", "400", "--out", str(tmp_path / "train")]) == 0
    assert cli.main(["train", "--config", str(ini), "--manifest", str(tmp_path / "train/manifest.jsonl"),
                     "--out", str(tmp_path / "model.ckpt")]) == 0
    source = tmp_path / "source.wav"
    write_wav(source, Waveform(synth_clean(np.random.default_rng(900), 0.5)))
    src = read_wav(source)
    rt = {}
    for size in ROOM_SIZES:
        out = tmp_path / f"{size}.wav"
        assert cli.main(["edit", "--config", str(ini), "--checkpoint", str(tmp_path / "model.ckpt"),
                         "--in", str(source), "--out", str(out),
                         "--prompt", f"Add reverberation with {size} room size"]) == 0
        wet = read_wav(out)
        try:
            rt[size] = tail_rt60(wet, Waveform(np.pad(src.samples, (0, len(wet) - len(src)))))
        except NoDecayError:
            rt[size] = float("nan")
    out_ok = rt["small"] < rt["medium"] < rt["large"]
    detail = ("output tail RT60 " + ", ".join(f"{s} {rt[s]:.3f}s" for s in ROOM_SIZES) +
              "; generator class means " + ", ".join(f"{s} {rir_means[s]:.3f}s" for s in ROOM_SIZES) +
              f" (nominal {', '.join(f'{ROOM_RT60[s]:g}' for s in ROOM_SIZES)}), min gap {min(gaps):.3f}s (> 0.15)")
    assert report(9, "room-size control", out_ok and rir_ok, detail)


# -- reproducibility --------------------------------------------------------------------

SMALL_CONFIG = """
[run]
seed = 31

[data]
n_clean = 4
n_noise_per_label = 2
clean_duration = 0.4

[model]
hidden = 32
attn_dim = 16
text_dim = 16

[solver]
num_steps = 8

[train]
steps = 20
batch_size = 4
log_every = 5
checkpoint_every = 10
"""


def _run_every_subcommand(root, ini, capsys):
    """All six subcommands; returns {artifact name: bytes} plus the kernel-check report."""
    assert cli.main(["simulate", "--config", ini, "--n-pairs", "8", "--out", str(root / "data")]) == 0
    assert cli.main(["train", "--config", ini, "--manifest", str(root / "data/manifest.jsonl"),
                     "--out", str(root / "model.ckpt")]) == 0
    write_wav(root / "in.wav", Waveform(synth_clean(np.random.default_rng(3), 0.4)))
    common = ["--config", ini, "--checkpoint", str(root / "model.ckpt"), "--in", str(root / "in.wav")]
    assert cli.main(["enhance", *common, "--out", str(root / "enhanced.wav"), "--prompt", "Remove noise"]) == 0
    assert cli.main(["edit", *common, "--out", str(root / "edited.wav"),
                     "--prompt", "Add background sound as rain with SNR as 5dB"]) == 0
    assert cli.main(["eval", "--config", ini, "--checkpoint", str(root / "model.ckpt"),
                     "--manifest", str(root / "data/manifest.jsonl"), "--out", str(root / "eval.csv")]) == 0
    capsys.readouterr()
    assert cli.main(["kernel-check", "--config", ini, "--skip-gradients"]) == 0
    # drop the wall-clock timings from the report
    check_lines = [line.rsplit(" (", 1)[0] for line in capsys.readouterr().out.splitlines()]
    files = {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
    return files, check_lines


def test_c10_reproducibility(report, tmp_path, capsys):
    ini = tmp_path / "small.ini"
    ini.write_text(SMALL_CONFIG)
    first, lines_a = _run_every_subcommand(tmp_path / "a", str(ini), capsys)
    second, lines_b = _run_every_subcommand(tmp_path / "b", str(ini), capsys)
    same = sorted(k for k in first if first[k] == second.get(k))
    differ = sorted(set(first) ^ set(second) | {k for k in first if first[k] != second.get(k)})
    kinds = {k.rsplit(".", 1)[-1] for k in same}
    ok = not differ and lines_a == lines_b and {"wav", "jsonl", "ckpt", "csv"} <= kinds
    detail = f"{len(same)} artifacts bit-identical across reruns ({', '.join(sorted(kinds))})"
    if differ:
        detail += "; differing: " + ", ".join(differ[:5])
    if lines_a != lines_b:
        detail += "; kernel-check report differs"
    assert report(10, "reproducibility", ok, detail)
