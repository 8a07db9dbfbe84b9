"""Command-line interface: synth, train, clean, metrics, experiment.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
All commands thread --seed through for reproducible outputs; report
timestamps live in a dedicated field so reruns are otherwise
byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from .clipio import ClipFormatError, load_clip_dir
from .errors import ConfigError, DataError, NumericError


def _load_toml(path: Path) -> dict:
    try:
        import tomllib  # Python >= 3.11
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc


def _apply_section(cls, section: dict, overrides: dict):
    """Build a dataclass from a config section; CLI overrides win."""
    known = {f.name for f in dataclass_fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    merged = {**section, **{k: v for k, v in overrides.items()
                            if v is not None and k in known}}
    return cls(**merged)


def cmd_synth(args) -> int:
    from .corruption import CorruptionConfig, build_dataset
    from .gait import generate_corpus

    if args.clean_dir:
        try:
            clips = load_clip_dir(args.clean_dir)
        except ClipFormatError as exc:
            raise DataError(str(exc)) from exc
    elif args.gait:
        clips = generate_corpus(args.gait, seed=args.seed,
                                duration=args.duration, fps=args.fps)
    else:
        raise ConfigError("provide --clean-dir or --gait N")

    cfg = CorruptionConfig(mode=args.mode, target_corruption_rate=args.rate,
                           seed=args.seed)
    manifest = build_dataset(clips, cfg, args.out)
    print(f"wrote {len(manifest['clips'])} clips to {args.out} "
          f"(realized rate {manifest['realized_rate']:.3f})")
    return 0


def cmd_train(args) -> int:
    from .network import ModelConfig
    from .training import TrainConfig, train

    try:
        clips = load_clip_dir(args.data)
    except ClipFormatError as exc:
        raise DataError(str(exc)) from exc

    file_cfg = _load_toml(Path(args.config)) if args.config else {}
    overrides = {"steps": args.steps, "batch_size": args.batch_size,
                 "learning_rate": args.lr, "seed": args.seed,
                 "disable_qualvar": args.no_qualvar or None,
                 "filter_corrupted": args.filtered or None}
    try:
        train_cfg = _apply_section(TrainConfig, file_cfg.get("train", {}), overrides)
        model_cfg = _apply_section(ModelConfig, file_cfg.get("model", {}), {})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    try:
        ckpt = train(clips, model_cfg, train_cfg, args.out)
    except FloatingPointError as exc:
        raise NumericError(str(exc)) from exc
    print(f"checkpoint written to {ckpt}")
    return 0


def cmd_clean(args) -> int:
    from .cleanup import CleanupConfig, clean_clip
    from .clipio import save_clip
    from .network import load_checkpoint

    try:
        clips = load_clip_dir(args.in_dir)
    except ClipFormatError as exc:
        raise DataError(str(exc)) from exc
    if not Path(args.ckpt).exists():
        raise DataError(f"checkpoint not found: {args.ckpt}")
    ckpt = load_checkpoint(args.ckpt)

    cfg = CleanupConfig(
        mc_samples=args.mc_samples, ensemble_size=args.ensemble,
        tau=args.tau, enable_adaptive=not args.no_adaptive,
        enable_ensemble=not args.no_ensemble,
        num_inference_steps=args.steps, seed=args.seed)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_lines = []
    for name, clip in clips:
        try:
            cleaned, report = clean_clip(clip, ckpt, cfg,
                                         use_clip_labels=args.use_labels)
        except ValueError as exc:
            raise DataError(f"{name}: {exc}") from exc
        except FloatingPointError as exc:
            raise NumericError(f"{name}: {exc}") from exc
        save_clip(cleaned, out_dir / f"{name}.json")
        report_lines.append(json.dumps({"clip": name, **report}))
    (out_dir / "cleanup_report.jsonl").write_text("\n".join(report_lines) + "\n")
    print(f"cleaned {len(clips)} clips into {out_dir}")
    return 0


def cmd_metrics(args) -> int:
    from . import metrics as m

    try:
        clips = load_clip_dir(args.in_dir)
        refs = dict(load_clip_dir(args.ref)) if args.ref else {}
    except ClipFormatError as exc:
        raise DataError(str(exc)) from exc

    def score(item):
        name, clip = item
        ref = refs.get(name)
        if args.ref and ref is None:
            raise DataError(f"no reference clip named {name!r} in {args.ref}")
        report = m.evaluate_clip(clip, reference=ref)
        return {"clip": name, **report.as_dict()}

    if getattr(args, "jobs", 1) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(score, clips))
    else:
        rows = [score(item) for item in clips]

    aggregate = {}
    for key in rows[0]:
        if key == "clip":
            continue
        vals = [r[key] for r in rows if r[key] is not None]
        aggregate[key] = float(np.mean(vals)) if vals else None

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {"generated_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
               "clips": rows, "aggregate": aggregate}
    out.write_text(json.dumps(payload, indent=2))
    out.with_suffix(".jsonl").write_text(
        "\n".join(json.dumps(r) for r in rows) + "\n")
    print(json.dumps(aggregate, indent=2))
    return 0


def cmd_experiment(args) -> int:
    from .experiments import run_experiment

    overrides = {"n_train_clips": args.clips, "n_test_clips": args.test_clips,
                 "seed": args.seed}
    if args.steps:
        from .training import TrainConfig

        overrides["train"] = TrainConfig(steps=args.steps, batch_size=16,
                                         seed=args.seed or 0)
    table = run_experiment(args.preset, args.out, **overrides)
    for row in table["rows"]:
        cleaned = row["cleaned"]
        print(f"{row['variant']:>16s}: jitter {cleaned['jitter']:8.2f}  "
              f"fs_dist {cleaned['fs_dist']:.5f}  recall {row['detection_recall']:.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mocapclean",
                                description="Quality-aware diffusion cleanup "
                                            "for skeletal motion data")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="build a corrupted corpus with ground-truth masks")
    sp.add_argument("--clean-dir", help="directory of clean source clips")
    sp.add_argument("--gait", type=int, metavar="N",
                    help="generate N clean toy-gait clips instead")
    sp.add_argument("--out", required=True)
    sp.add_argument("--rate", type=float, default=0.23)
    sp.add_argument("--mode", choices=("train", "test"), default="train")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--duration", type=float, default=5.0)
    sp.add_argument("--fps", type=float, default=20.0)
    sp.set_defaults(fn=cmd_synth)

    tp = sub.add_parser("train", help="train a denoiser on labeled clips")
    tp.add_argument("--data", required=True)
    tp.add_argument("--out", required=True)
    tp.add_argument("--config", help="TOML file with [train] and [model] sections")
    tp.add_argument("--steps", type=int)
    tp.add_argument("--batch-size", type=int, dest="batch_size")
    tp.add_argument("--lr", type=float)
    tp.add_argument("--seed", type=int)
    tp.add_argument("--no-qualvar", action="store_true")
    tp.add_argument("--filtered", action="store_true")
    tp.set_defaults(fn=cmd_train)

    cp = sub.add_parser("clean", help="detect and inpaint corrupted frames")
    cp.add_argument("--in", dest="in_dir", required=True)
    cp.add_argument("--ckpt", required=True)
    cp.add_argument("--out", required=True)
    cp.add_argument("--no-adaptive", action="store_true")
    cp.add_argument("--no-ensemble", action="store_true")
    cp.add_argument("--ensemble", type=int, default=5)
    cp.add_argument("--mc-samples", type=int, default=8, dest="mc_samples")
    cp.add_argument("--tau", type=float, default=0.5)
    cp.add_argument("--steps", type=int, default=100,
                    help="respaced sampler steps per pass")
    cp.add_argument("--seed", type=int, default=0)
    cp.add_argument("--use-labels", action="store_true",
                    help="trust clip quality labels instead of detecting")
    cp.set_defaults(fn=cmd_clean)

    mp = sub.add_parser("metrics", help="score clips (optionally vs references)")
    mp.add_argument("--in", dest="in_dir", required=True)
    mp.add_argument("--ref")
    mp.add_argument("--out", required=True)
    mp.add_argument("--jobs", type=int, default=1, help="worker cap for batch scoring")
    mp.set_defaults(fn=cmd_metrics)

    ep = sub.add_parser("experiment", help="run a named preset end to end")
    ep.add_argument("--preset", required=True)
    ep.add_argument("--out", required=True)
    ep.add_argument("--clips", type=int)
    ep.add_argument("--test-clips", type=int, dest="test_clips")
    ep.add_argument("--steps", type=int)
    ep.add_argument("--seed", type=int)
    ep.set_defaults(fn=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
