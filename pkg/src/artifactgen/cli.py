"""Command-line entry points: curate, train, sample, evaluate.

Every command writes a run record (config hash, seed, code version,
timestamps) next to its outputs; all other outputs are byte-deterministic
given the same configuration and seed. Exit codes: 0 success, 1 internal
failure, 2 user/config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import traceback
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .diffusion import SamplerConfig, load_unet, sample, train_ddpm
from .gan import load_generator, train_wgan
from .manifest import (
    Manifest,
    SplitViolation,
    load_window_set,
    read_class_map_csv,
    read_split_csv,
    read_window_file,
    validate_split,
    write_class_map_csv,
    write_split_csv,
    write_window_file,
    write_windows,
)
from .metrics import WelchSettings, WindowSet, compute_report, render_table
from .nn import no_grad
from .normalize import MINMAX_WINDOW, ZSCORE_RECORDING, minmax_normalize, zscore_normalize
from .synthetic import generate_corpus, recording_from_npz
from .windowing import ClassMap, extract_windows

SEED_ENV = "ARTIFACTGEN_SEED"


def _effective_seed(config_seed: int, cli_seed: int | None = None) -> int:
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got '{env}'") from exc
    return config_seed


def _apply_seed(cfg: RunConfig, seed: int) -> None:
    cfg.seed = seed
    cfg.gan.seed = seed
    cfg.ddpm.seed = seed


def _write_run_record(out_dir: Path, command: str, cfg_hash: str, seed: int,
                      started: str) -> None:
    record = {
        "command": command,
        "config_hash": cfg_hash,
        "seed": seed,
        "code_version": __version__,
        "started_utc": started,
        "finished_utc": datetime.now(timezone.utc).isoformat(),
    }
    with open(out_dir / "run.json", "w") as f:
        json.dump(record, f, indent=2, sort_keys=True)
        f.write("\n")


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def _auto_split(subjects: list[str]) -> dict[str, str]:
    """Deterministic 60/20/20 round-robin over sorted subject ids."""
    order = ("train", "train", "train", "val", "test")
    return {s: order[i % len(order)] for i, s in enumerate(sorted(set(subjects)))}


def cmd_curate(args) -> int:
    started = _utcnow()
    cfg = load_config(args.config)
    seed = _effective_seed(cfg.seed)
    _apply_seed(cfg, seed)
    out_dir = Path(args.out or cfg.output_dir) / "dataset"
    class_map = read_class_map_csv(args.class_map) if args.class_map else ClassMap()

    if args.synthetic:
        recordings = generate_corpus(args.n_per_class, fs=cfg.data.sample_rate,
                                     seed=seed, channel_names=cfg.data.channels)
    else:
        if not args.input:
            raise ConfigError("curate needs either --synthetic or --input DIR")
        paths = sorted(Path(args.input).glob("*.npz"))
        if not paths:
            raise ConfigError(f"no .npz recordings found in {args.input}")
        recordings = [recording_from_npz(p) for p in paths]

    subjects = [r.subject_id for r in recordings]
    split_of = read_split_csv(args.split_csv) if args.split_csv else _auto_split(subjects)

    windows = []
    rejections: list[str] = []
    for rec in recordings:
        if cfg.data.normalization == ZSCORE_RECORDING:
            rec_norm, meta = zscore_normalize(rec)
            ws = extract_windows(rec_norm, cfg.data.window_seconds, cfg.data.overlap,
                                 class_map, cfg.data.channels, rejections)
            for w in ws:
                w.norm = meta
            windows.extend(ws)
        else:
            ws = extract_windows(rec, cfg.data.window_seconds, cfg.data.overlap,
                                 class_map, cfg.data.channels, rejections)
            windows.extend(minmax_normalize(w)[0] for w in ws)

    if not windows:
        raise ConfigError("curation produced no windows")
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = write_windows(windows, out_dir, split_of, cfg.hash(), seed, class_map)
    manifest.save(out_dir / "manifest.json")
    report = validate_split(manifest)
    write_split_csv(out_dir / "split.csv",
                    {s: split_of[s] for s in set(w.subject_id for w in windows)})
    write_class_map_csv(out_dir / "class_map.csv", class_map)
    _write_run_record(out_dir, "curate", cfg.hash(), seed, started)

    print(f"curated {len(windows)} windows -> {out_dir}")
    for split in ("train", "val", "test"):
        r = report[split]
        print(f"  {split}: {len(r['subjects'])} subjects, {r['windows']} windows, "
              f"per-class {r['per_class']}")
    if rejections:
        print(f"  rejections: {len(rejections)} (first: {rejections[0]})")
    return 0


def cmd_train(args) -> int:
    started = _utcnow()
    cfg = load_config(args.config)
    seed = _effective_seed(cfg.seed)
    _apply_seed(cfg, seed)
    manifest = Manifest.load(args.manifest)
    base = Path(args.manifest).parent

    required = MINMAX_WINDOW if args.model == "gan" else ZSCORE_RECORDING
    schemes = manifest.norm_schemes()
    if schemes != {required}:
        raise ConfigError(
            f"--model {args.model} requires '{required}' windows (per-window min-max "
            f"pairs with the adversarial path, per-recording z-score with the diffusion "
            f"path); manifest has {sorted(schemes)}")

    data, labels, _ = load_window_set(manifest, base, split="train")
    out_dir = Path(args.out or cfg.output_dir) / args.model
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.model == "gan":
        result = train_wgan(data, labels, len(manifest.class_map), cfg.gan, out_dir)
        last = result.history[-1]
        print(f"gan: {len(result.history)} steps, best step {result.best_step}, "
              f"final d_loss {last['d_loss']:.4g} g_loss {last['g_loss']:.4g}")
    else:
        result = train_ddpm(data, labels, len(manifest.class_map), cfg.ddpm, out_dir)
        last = result.history[-1]
        print(f"ddpm: {len(result.history)} steps, best step {result.best_step}, "
              f"final loss {last['loss']:.4g}")
    _write_run_record(out_dir, f"train:{args.model}", cfg.hash(), seed, started)
    print(f"checkpoints and loss log -> {out_dir}")
    return 0


def cmd_sample(args) -> int:
    started = _utcnow()
    seed = _effective_seed(0, args.seed)
    ck_path = Path(args.checkpoint)
    model_hash = hashlib.sha256(ck_path.read_bytes()).hexdigest()
    rng = np.random.default_rng(seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    # peek at the checkpoint type via the cheap loaders
    from .nn.checkpoint import load_checkpoint
    meta = load_checkpoint(ck_path).meta
    model = meta.get("model")
    if model == "wgan":
        gen, _ = load_generator(ck_path)
        if not 0 <= args.class_index < gen.n_classes:
            raise ConfigError(f"class index {args.class_index} out of range "
                              f"[0, {gen.n_classes})")
        z = rng.standard_normal((args.num, gen.latent_dim))
        y = np.full(args.num, args.class_index, dtype=np.int64)
        with no_grad():
            windows = gen(z, y).data
        sampler_info = {"latent_dim": gen.latent_dim}
    elif model == "ddpm":
        net, sched, _ = load_unet(ck_path, use_ema=True)
        if not 0 <= args.class_index < net.n_classes:
            raise ConfigError(f"class index {args.class_index} out of range "
                              f"[0, {net.n_classes})")
        scfg = SamplerConfig(num_steps=args.steps, guidance_scale=args.guidance)
        y = np.full(args.num, args.class_index, dtype=np.int64)
        windows = sample(net, y, sched, scfg, rng)
        sampler_info = {"num_steps": scfg.num_steps, "guidance_scale": scfg.guidance_scale,
                        "deterministic": True, "ema": True}
    else:
        raise ConfigError(f"{ck_path}: unknown checkpoint model '{model}'")

    for i in range(args.num):
        write_window_file(out_dir / f"w{i:06d}.agw", windows[i], args.class_index)
    with open(out_dir / "provenance.json", "w") as f:
        json.dump({
            "model": model, "model_hash": model_hash, "class": args.class_index,
            "num": args.num, "sampler": sampler_info, "seed": seed,
            "code_version": __version__,
        }, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_run_record(out_dir, "sample", model_hash, seed, started)
    print(f"wrote {args.num} windows of class {args.class_index} -> {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    started = _utcnow()
    cfg = load_config(args.config)
    seed = _effective_seed(cfg.seed)
    manifest = Manifest.load(args.real)
    base = Path(args.real).parent
    split = None if args.split == "all" else args.split
    data, labels, _ = load_window_set(manifest, base, split=split)
    real = WindowSet(data, labels, origin="real", fs=cfg.data.sample_rate)

    fakes: dict[str, WindowSet] = {}
    for spec in args.fake or []:
        name, _, d = spec.partition("=")
        if not d:
            raise ConfigError(f"--fake expects NAME=DIR, got '{spec}'")
        fake_dir = Path(d)
        files = sorted(fake_dir.glob("*.agw"))
        if not files:
            raise ConfigError(f"no .agw windows found in '{fake_dir}'")
        arrays, labs = [], []
        for fp in files:
            arr, lab = read_window_file(fp)
            if arr.shape != real.data.shape[1:]:
                raise ValueError(f"{fp}: window shape {arr.shape} does not match real "
                                 f"windows {real.data.shape[1:]}")
            arrays.append(arr.astype(np.float64))
            labs.append(lab)
        fakes[name] = WindowSet(np.stack(arrays), np.asarray(labs), origin=name,
                                fs=cfg.data.sample_rate)
    if not fakes:
        raise ConfigError("evaluate needs at least one --fake NAME=DIR")

    welch = WelchSettings(nperseg=cfg.eval.nperseg, overlap=cfg.eval.overlap)
    report = compute_report(
        real, fakes, welch=welch, max_lag=cfg.eval.max_lag, knn_k=cfg.eval.knn_k,
        normalization="+".join(sorted(manifest.norm_schemes())),
        seeds={"seed": seed, "manifest_seed": manifest.seed},
    )
    out_path = Path(args.out) if args.out else Path(cfg.output_dir) / "report.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    report.save(out_path)
    _write_run_record(out_path.parent, "evaluate", cfg.hash(), seed, started)
    print(render_table(report))
    print(f"\nreport -> {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="artifactgen",
                                description="label-conditioned signal synthesis pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("curate", help="windows + manifest from recordings")
    c.add_argument("--config", required=True)
    c.add_argument("--synthetic", action="store_true",
                   help="use the parametric artifact corpus instead of input recordings")
    c.add_argument("--n-per-class", type=int, default=20)
    c.add_argument("--input", help="directory of .npz recordings")
    c.add_argument("--split-csv", help="subject_id,split assignment (default: round-robin)")
    c.add_argument("--class-map", help="label_name,index CSV (default: canonical five)")
    c.add_argument("--out", help="override config output_dir")
    c.set_defaults(func=cmd_curate)

    t = sub.add_parser("train", help="train a model on a curated manifest")
    t.add_argument("--config", required=True)
    t.add_argument("--model", required=True, choices=("gan", "ddpm"))
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", help="override config output_dir")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw windows from a trained checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--class", dest="class_index", type=int, required=True)
    s.add_argument("--num", type=int, required=True)
    s.add_argument("--steps", type=int, default=80, help="DDIM steps (ddpm only)")
    s.add_argument("--guidance", type=float, default=1.5, help="guidance scale (ddpm only)")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("evaluate", help="metric report for real vs synthetic sets")
    e.add_argument("--config", required=True)
    e.add_argument("--real", required=True, help="manifest.json of the real windows")
    e.add_argument("--split", default="all", choices=("all", "train", "val", "test"))
    e.add_argument("--fake", action="append", metavar="NAME=DIR",
                   help="synthetic window dir; NAME is ddpm or wgan (repeatable)")
    e.add_argument("--out", help="report path (default <output_dir>/report.json)")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ConfigError, SplitViolation, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
