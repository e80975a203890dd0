"""Command-line entry point: simulate, train, enhance, edit, eval, kernel-check.

Exit codes: 0 success, 1 usage or prompt-parse error, 2 numeric-check failure,
3 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import checks
from .conditioning import TextVocab
from .dsp import AudioFormatError, FrameParams, Waveform, read_wav, write_wav
from .metrics import NoDecayError, log_spectral_distance, report, si_sdr, tail_rt60, write_report_csv
from .pipeline import EDIT_ACTIONS, ENHANCE_ACTIONS, Model, audio_config, items_from_manifest, run_model
from .prompts import DEFAULT_LABELS, Action, PromptError, parse
from .scorenet import (AdamState, OptimizerConfig, ScoreNet, TrainingError, load_checkpoint, read_loss_csv,
                       save_checkpoint, train, write_loss_csv)
from .sde import SdeSchedule
from .sim import DatasetManifest, audit_snr, build_dataset, make_synthetic_corpus
from .solver import SolverConfig

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
SNR_AUDIT_TOL = 0.1


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


@dataclass(frozen=True)
class DataConfig:
    clean_dir: Path | None = None
    noise_dir: Path | None = None
    task_mix: str = "remove_noise=1,remove_reverb=1,add_background=1,add_reverb=1"
    labels: tuple = DEFAULT_LABELS
    # synthetic corpus, used when no corpus directories are configured
    n_clean: int = 40
    n_noise_per_label: int = 8
    clean_duration: float = 1.0
    noise_min_duration: float = 0.6
    noise_max_duration: float = 2.0


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 128
    attn_dim: int = 64
    text_dim: int = 64
    time_features: int = 16


@dataclass(frozen=True)
class RunConfig:
    seed: int
    schedule: SdeSchedule = field(default_factory=SdeSchedule)
    solver: SolverConfig = field(default_factory=SolverConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(log_every=10))
    frame: FrameParams = field(default_factory=FrameParams)
    data: DataConfig = field(default_factory=DataConfig)

    def vocab(self) -> TextVocab:
        return TextVocab.default(self.data.labels)


def _coerce(cls, section: configparser.SectionProxy, base_dir: Path):
    """Build dataclass `cls` from a config section, converting by the default's type."""
    kw = {}
    known = {f.name: f for f in fields(cls)}
    for key, raw in section.items():
        if key not in known:
            raise UsageError(f"[{section.name}] unknown key {key!r}")
        default = getattr(cls(), key)
        raw = raw.strip()
        if key.endswith("_dir"):
            kw[key] = (base_dir / raw) if raw else None
        elif key == "labels":
            kw[key] = tuple(s.strip() for s in raw.split(",") if s.strip())
        elif isinstance(default, bool):
            kw[key] = section.getboolean(key)
        elif isinstance(default, int):
            kw[key] = int(raw)
        elif isinstance(default, float) or default is None:
            kw[key] = None if raw.lower() in ("", "none") else float(raw)
        else:
            kw[key] = raw
    return kw


def load_config(path: str | None, seed: int | None = None, steps: int | None = None) -> RunConfig:
    cp = configparser.ConfigParser()
    base = Path(".")
    if path is not None:
        if not os.path.exists(path):
            raise FileNotFoundError(f"config file not found: {path}")
        cp.read(path, encoding="utf-8")
        base = Path(path).parent
    sections = {"schedule": SdeSchedule, "solver": SolverConfig, "model": ModelConfig,
                "train": OptimizerConfig, "stft": FrameParams, "data": DataConfig}
    unknown = set(cp.sections()) - set(sections) - {"run"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    if seed is None and cp.has_option("run", "seed"):
        seed = cp.getint("run", "seed")
    if seed is None:
        raise UsageError("a seed is required (--seed or [run] seed)")
    parts = {}
    for name, cls in sections.items():
        kw = _coerce(cls, cp[name], base) if cp.has_section(name) else {}
        if name == "train":
            kw.setdefault("log_every", 10)
            if steps is not None:
                kw["steps"] = steps
        try:
            parts[name] = cls(**kw)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"[{name}] {exc}") from exc
    return RunConfig(seed=seed, schedule=parts["schedule"], solver=parts["solver"], model=parts["model"],
                     optimizer=parts["train"], frame=parts["stft"], data=parts["data"])


# -- subcommands ---------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, n_pairs: int, out_dir) -> Path:
    out_dir = Path(out_dir)
    if n_pairs < 1:
        raise UsageError("--n-pairs must be positive")
    data = cfg.data
    if data.clean_dir is None or data.noise_dir is None:
        clean_dir, noise_dir = make_synthetic_corpus(out_dir / "corpus", data.n_clean, data.n_noise_per_label,
                                                     cfg.seed, data.labels, clean_duration=data.clean_duration,
                                                     noise_durations=(data.noise_min_duration,
                                                                      data.noise_max_duration))
    else:
        clean_dir, noise_dir = data.clean_dir, data.noise_dir
    path = build_dataset(clean_dir, noise_dir, n_pairs, out_dir, cfg.seed, data.task_mix, data.labels)
    man = DatasetManifest.load(path)
    counts = Counter(e.command.action.value for e in man.entries)
    print(f"manifest {path}: {len(man)} entries (" + ", ".join(f"{k} {v}" for k, v in sorted(counts.items())) + ")")
    rows = audit_snr(man)
    if rows:
        worst = max(abs(m - r) for _, r, m in rows)
        print(f"snr audit: {len(rows)} noisy entries, max |measured - requested| = {worst:.4f} dB")
        if worst > SNR_AUDIT_TOL:
            raise CheckFailed(f"SNR audit exceeds {SNR_AUDIT_TOL} dB")
    return path


def _write_checkpoint(path: Path, net, params, state, cfg: RunConfig):
    tmp = path.with_name(path.name + ".tmp")
    save_checkpoint(tmp, net, params, state, meta={"frame": asdict(cfg.frame), "seed": cfg.seed})
    os.replace(tmp, path)


def loss_csv_path(checkpoint) -> Path:
    checkpoint = Path(checkpoint)
    return checkpoint.with_name(checkpoint.name + ".loss.csv")


def cmd_train(cfg: RunConfig, manifest, out_checkpoint, resume: bool = False) -> Path:
    out = Path(out_checkpoint)
    man = DatasetManifest.load(manifest)
    vocab = cfg.vocab()
    items = items_from_manifest(man, vocab, cfg.frame)
    opt = cfg.optimizer
    csv_path = loss_csv_path(out)
    logged = []
    if resume and out.exists():
        net, params, state, _ = _load_model(out, cfg.frame)
        if state is None:
            raise UsageError(f"{out} has no optimizer state to resume from")
        if csv_path.exists():
            logged = [(k, v) for k, v in read_loss_csv(csv_path) if k <= state.step]
        print(f"resuming from step {state.step}")
    else:
        net = ScoreNet(audio_config(cfg.frame, vocab, hidden=cfg.model.hidden, attn_dim=cfg.model.attn_dim,
                                    text_dim=cfg.model.text_dim, time_features=cfg.model.time_features),
                       cfg.schedule)
        params = net.init_params(np.random.default_rng(cfg.seed))
        state = AdamState.fresh(params.size)
    out.parent.mkdir(parents=True, exist_ok=True)

    def on_step(step, loss, p, st):
        if step % opt.log_every == 0 or step == opt.steps:
            logged.append((step, loss))
            print(f"step {step} loss {loss:.6g}", flush=True)
        if opt.checkpoint_every and step % opt.checkpoint_every == 0 and step < opt.steps:
            _write_checkpoint(out, net, p, st, cfg)
            write_loss_csv(csv_path, logged)

    params, state, _ = train(net, params, items, opt, cfg.seed, state=state, on_step=on_step)
    _write_checkpoint(out, net, params, state, cfg)
    write_loss_csv(csv_path, logged)
    print(f"checkpoint {out} (step {state.step}); loss log {csv_path}")
    return out


def _load_model(path, frame: FrameParams):
    try:
        net, params, state, meta = load_checkpoint(path)
    except ValueError as exc:
        raise OSError(f"unreadable checkpoint: {exc}") from exc
    if meta and "frame" in meta:
        stored = FrameParams(**meta["frame"])
        if stored != frame:
            raise UsageError(f"checkpoint was trained with {stored}, config has {frame}")
    if net.cfg.state_dim != frame.num_bins:
        raise UsageError(f"checkpoint expects {net.cfg.state_dim} bins, STFT config gives {frame.num_bins}")
    return net, params, state, meta


def _run_prompted(cfg: RunConfig, checkpoint, in_wav, prompt, out_wav, allowed):
    if prompt is None:
        raise UsageError("--prompt is required")
    cmd = parse(prompt)
    if cmd.action not in allowed:
        names = " / ".join(a.value for a in allowed)
        raise UsageError(f"prompt action {cmd.action.value} not handled here (expected {names})")
    net, params, _, _ = _load_model(checkpoint, cfg.frame)
    source = read_wav(in_wav)
    model = Model(net, params, cfg.frame)
    out = run_model(model, source, cmd, cfg.solver, cfg.seed)
    write_wav(out_wav, out)
    return cmd, source, out


def cmd_enhance(cfg: RunConfig, checkpoint, in_wav, prompt, out_wav, ref_wav=None) -> str:
    _, source, out = _run_prompted(cfg, checkpoint, in_wav, prompt, out_wav, ENHANCE_ACTIONS)
    line = f"{out_wav}: {len(out)} samples, lsd vs input {log_spectral_distance(source, out):.3f}"
    if ref_wav is not None:
        ref = read_wav(ref_wav)
        s_in, s_out = si_sdr(ref, source), si_sdr(ref, out)
        line += f", si-sdr {s_in:.2f} -> {s_out:.2f} dB ({s_out - s_in:+.2f})"
    return line


def cmd_edit(cfg: RunConfig, checkpoint, in_wav, prompt, out_wav) -> str:
    cmd, source, out = _run_prompted(cfg, checkpoint, in_wav, prompt, out_wav, EDIT_ACTIONS)
    padded = Waveform(np.pad(source.samples, (0, len(out) - len(source))), source.sample_rate)
    line = f"{out_wav}: {len(out)} samples, lsd vs input {log_spectral_distance(padded, out):.3f}"
    if cmd.action is Action.ADD_REVERB:
        try:
            line += f", tail rt60 {tail_rt60(out, padded):.3f} s"
        except NoDecayError:
            line += ", tail rt60 n/a"
    return line


def cmd_eval(cfg: RunConfig, checkpoint, manifest, out_csv) -> dict:
    net, params, _, _ = _load_model(checkpoint, cfg.frame)
    model = Model(net, params, cfg.frame)
    man = DatasetManifest.load(manifest)
    rows, gains = [], []
    for i, e in enumerate(man.entries):
        src, tgt = read_wav(man.path(e.source_path)), read_wav(man.path(e.target_path))
        out = run_model(model, src, e.command, cfg.solver, [cfg.seed, i], extend=False)
        rep = report(tgt, out, with_rt60=e.command.action is Action.ADD_REVERB)
        rows.append((e.entry_id, rep))
        gains.append(rep.si_sdr_db - si_sdr(tgt, src))
    write_report_csv(out_csv, rows)
    summary = {"entries": len(rows), "si_sdr_db": float(np.mean([r.si_sdr_db for _, r in rows])),
               "si_sdr_gain_db": float(np.mean(gains))}
    print(f"{out_csv}: {summary['entries']} entries, mean si-sdr {summary['si_sdr_db']:.2f} dB, "
          f"mean gain over source {summary['si_sdr_gain_db']:+.2f} dB")
    return summary


def cmd_kernel_check(cfg: RunConfig, variance_fn=None, gradients: bool = True) -> bool:
    kw = {} if variance_fn is None else {"variance_fn": variance_fn}
    results = checks.run_all(cfg.schedule, seed=cfg.seed, gradients=gradients, **kw)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("kernel-check: " + ("all checks passed" if ok else "FAILED"))
    return ok


# -- argument handling -----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")

    ap = _Parser(prog="speechdiff", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="simulate a paired dataset and its manifest")
    p.add_argument("--n-pairs", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", parents=[common], help="train the score network on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--steps", type=int)
    p.add_argument("--resume", action="store_true", help="continue from --out if it exists")

    for name, text in (("enhance", "remove noise or reverberation"), ("edit", "add background sound or reverb")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--in", dest="in_path", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--prompt", required=True)
        if name == "enhance":
            p.add_argument("--ref", help="clean reference for an SI-SDR line")

    p = sub.add_parser("eval", parents=[common], help="run a checkpoint over a manifest, write metrics CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("kernel-check", parents=[common], help="numerical self-checks")
    p.add_argument("--skip-gradients", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, getattr(args, "steps", None))
        if args.command == "simulate":
            cmd_simulate(cfg, args.n_pairs, args.out)
        elif args.command == "train":
            cmd_train(cfg, args.manifest, args.out, resume=args.resume)
        elif args.command == "enhance":
            print(cmd_enhance(cfg, args.checkpoint, args.in_path, args.prompt, args.out, args.ref))
        elif args.command == "edit":
            print(cmd_edit(cfg, args.checkpoint, args.in_path, args.prompt, args.out))
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint, args.manifest, args.out)
        elif args.command == "kernel-check":
            if not cmd_kernel_check(cfg, gradients=not args.skip_gradients):
                return EXIT_NUMERIC
    except PromptError as exc:
        print(f"prompt error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckFailed, TrainingError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, AudioFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
