"""Experiment presets: synth -> train -> clean -> metrics, with ablations.

Each preset expands to one or more variants sharing a synthetic corpus.
The runner reports a table (one row per variant) of cleanup metrics on a
held-out corrupted split, mirroring how the ablation studies are laid
out. Presets are deliberately desk-scale; clip counts and step budgets
are knobs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .cleanup import CleanupConfig, clean_clip
from .corruption import CorruptionConfig, build_dataset
from .clipio import load_clip_dir, save_clip
from .errors import ConfigError
from .gait import generate_corpus
from .network import ModelConfig, load_checkpoint
from .training import TrainConfig, train


@dataclass
class VariantSpec:
    name: str
    train_overrides: dict = field(default_factory=dict)
    model_overrides: dict = field(default_factory=dict)
    cleanup_overrides: dict = field(default_factory=dict)
    corruption_rate: float | None = None  # overrides the preset corpus rate
    label_fraction: float = 1.0  # fraction of training clips carrying labels
    use_true_labels_at_cleanup: bool = False


@dataclass
class ExperimentConfig:
    name: str
    variants: list[VariantSpec]
    n_train_clips: int = 120
    n_test_clips: int = 24
    clip_duration: float = 5.0
    corruption_rate: float = 0.23
    seed: int = 0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=800, batch_size=16))
    model: ModelConfig = field(default_factory=ModelConfig)
    cleanup: CleanupConfig = field(default_factory=lambda: CleanupConfig(
        mc_samples=4, ensemble_size=2, num_inference_steps=40))


def _preset(name: str) -> ExperimentConfig:
    base = VariantSpec(name="base")
    if name == "base":
        return ExperimentConfig(name=name, variants=[base])
    if name == "no_qualvar":
        return ExperimentConfig(name=name, variants=[
            base,
            VariantSpec(name="no_qualvar",
                        train_overrides={"disable_qualvar": True},
                        use_true_labels_at_cleanup=True),
        ])
    if name == "filtered":
        return ExperimentConfig(name=name, variants=[
            base,
            VariantSpec(name="filtered", train_overrides={"filter_corrupted": True}),
        ])
    if name == "no_rope":
        return ExperimentConfig(name=name, variants=[
            base,
            VariantSpec(name="no_rope", model_overrides={"position_mode": "absolute"}),
        ])
    if name == "corruption_rate_sweep":
        return ExperimentConfig(name=name, variants=[
            VariantSpec(name=f"corrupted-{int(r * 100)}%", corruption_rate=r,
                        use_true_labels_at_cleanup=True)
            for r in (0.23, 0.40, 0.57)
        ])
    if name == "label_fraction_sweep":
        return ExperimentConfig(name=name, variants=[
            VariantSpec(name=f"labels-{int(f * 100)}%", label_fraction=f)
            for f in (0.10, 0.25, 0.50, 1.00)
        ])
    raise ConfigError(f"unknown preset {name!r}; available: base, no_qualvar, "
                      "filtered, no_rope, corruption_rate_sweep, label_fraction_sweep")


def preset(name: str, **overrides) -> ExperimentConfig:
    cfg = _preset(name)
    for key, val in overrides.items():
        if val is None:
            continue
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown experiment option {key!r}")
        setattr(cfg, key, val)
    return cfg


def build_corpora(cfg: ExperimentConfig, out_dir: Path, rate: float) -> dict:
    """Clean + corrupted train/test corpora on disk; returns paths and masks.

    Idempotent: existing manifests are reused, so pointing several presets
    at one directory (or MOCAPCLEAN_CACHE_DIR) shares the corpora.
    """
    dirs = {
        "clean_train": out_dir / "clean_train",
        "clean_test": out_dir / "clean_test",
        "train": out_dir / f"train_rate{int(rate * 100)}",
        "test": out_dir / f"test_rate{int(rate * 100)}",
    }
    if all((d / "manifest.json").exists() if k in ("train", "test") else d.is_dir()
           for k, d in dirs.items()):
        return {
            "dirs": dirs,
            "train_manifest": json.loads((dirs["train"] / "manifest.json").read_text()),
            "test_manifest": json.loads((dirs["test"] / "manifest.json").read_text()),
        }

    clean_train = generate_corpus(cfg.n_train_clips, seed=cfg.seed,
                                  duration=cfg.clip_duration)
    clean_test = generate_corpus(cfg.n_test_clips, seed=cfg.seed + 1,
                                 duration=cfg.clip_duration)
    for key in ("clean_train", "clean_test"):
        dirs[key].mkdir(parents=True, exist_ok=True)
        for name, clip in (clean_train if key == "clean_train" else clean_test):
            save_clip(clip, dirs[key] / f"{name}.json")

    train_manifest = build_dataset(
        clean_train, CorruptionConfig(mode="train", target_corruption_rate=rate,
                                      seed=cfg.seed + 2), dirs["train"])
    test_manifest = build_dataset(
        clean_test, CorruptionConfig(mode="test", target_corruption_rate=rate,
                                     seed=cfg.seed + 3), dirs["test"])
    return {"dirs": dirs, "train_manifest": train_manifest,
            "test_manifest": test_manifest}


def evaluate_cleanup(cleaned: list, corrupted: list, clean_ref: list,
                     reports: list[dict]) -> dict:
    """Aggregate metric table row comparing cleaned output to references."""
    rows = {"jitter": [], "fs_dist": [], "fs_rate": [], "accel": [], "gmpjpe": []}
    input_rows = {"jitter": [], "fs_dist": [], "fs_rate": [], "accel": [], "gmpjpe": []}
    recalls_tp = recalls_fn = 0
    slide_fs_in, slide_fs_out = [], []
    preserved = True

    for (name, out), (_, cor), (_, ref), rep in zip(cleaned, corrupted, clean_ref, reports):
        rows["jitter"].append(metrics_mod.jitter(out))
        rows["fs_dist"].append(metrics_mod.fs_dist(out))
        rows["fs_rate"].append(metrics_mod.fs_rate(out))
        rows["accel"].append(metrics_mod.accel_error(out, ref))
        rows["gmpjpe"].append(metrics_mod.gmpjpe(out, ref))
        input_rows["jitter"].append(metrics_mod.jitter(cor))
        input_rows["fs_dist"].append(metrics_mod.fs_dist(cor))
        input_rows["fs_rate"].append(metrics_mod.fs_rate(cor))
        input_rows["accel"].append(metrics_mod.accel_error(cor, ref))
        input_rows["gmpjpe"].append(metrics_mod.gmpjpe(cor, ref))

        truth = cor.quality.astype(bool)
        flagged = np.zeros(cor.num_frames, dtype=bool)
        flagged[rep["frames_flagged"]] = True
        recalls_tp += int((flagged & truth).sum())
        recalls_fn += int((~flagged & truth).sum())

        untouched = ~flagged
        preserved &= bool(np.array_equal(out.joint_rotations[untouched],
                                         cor.joint_rotations[untouched]))
        preserved &= bool(np.array_equal(out.root_translation[untouched],
                                         cor.root_translation[untouched]))

    return {
        "cleaned": {k: float(np.mean(v)) for k, v in rows.items()},
        "input": {k: float(np.mean(v)) for k, v in input_rows.items()},
        "detection_recall": recalls_tp / max(recalls_tp + recalls_fn, 1),
        "clean_frames_preserved": preserved,
    }


def run_variant(cfg: ExperimentConfig, variant: VariantSpec, out_dir: Path,
                corpora: dict) -> dict:
    """Train one variant and evaluate cleanup on the held-out corrupted split."""
    vdir = out_dir / variant.name.replace("%", "")
    vdir.mkdir(parents=True, exist_ok=True)

    train_clips = load_clip_dir(corpora["dirs"]["train"])
    if variant.label_fraction < 1.0:
        keep = max(2, int(round(len(train_clips) * variant.label_fraction)))
        train_clips = train_clips[:keep]

    train_cfg = replace(cfg.train, **variant.train_overrides)
    model_cfg = ModelConfig.from_dict({**cfg.model.to_dict(), **variant.model_overrides})
    t0 = time.time()
    ckpt_path = train(train_clips, model_cfg, train_cfg, vdir)
    train_seconds = time.time() - t0
    ckpt = load_checkpoint(ckpt_path)

    cleanup_cfg = CleanupConfig(**{**cfg.cleanup.__dict__, **variant.cleanup_overrides})
    corrupted = load_clip_dir(corpora["dirs"]["test"])
    clean_ref = load_clip_dir(corpora["dirs"]["clean_test"])

    cleaned, reports = [], []
    cleaned_dir = vdir / "cleaned"
    cleaned_dir.mkdir(exist_ok=True)
    t0 = time.time()
    use_labels = variant.use_true_labels_at_cleanup or not ckpt.has_quality
    for name, clip in corrupted:
        out, rep = clean_clip(clip, ckpt, cleanup_cfg, use_clip_labels=use_labels)
        save_clip(out, cleaned_dir / f"{name}.json")
        cleaned.append((name, out))
        reports.append(rep)
    clean_seconds = time.time() - t0

    result = evaluate_cleanup(cleaned, corrupted, clean_ref, reports)
    result["variant"] = variant.name
    result["train_seconds"] = round(train_seconds, 1)
    result["clean_seconds"] = round(clean_seconds, 1)
    result["checkpoint"] = str(ckpt_path)
    (vdir / "result.json").write_text(json.dumps(result, indent=2))
    return result


def run_experiment(name: str, out_dir: str | Path, **overrides) -> dict:
    """Run a preset end to end; returns the table dict (also written to disk).

    Corpora are built under $MOCAPCLEAN_CACHE_DIR when set (shared across
    presets with the same size/seed), otherwise under out_dir.
    """
    import os

    cfg = preset(name, **overrides)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    cache = os.environ.get("MOCAPCLEAN_CACHE_DIR")
    corpus_root = out_dir
    if cache:
        corpus_root = (Path(cache) / f"corpus_n{cfg.n_train_clips}"
                       f"_t{cfg.n_test_clips}_d{cfg.clip_duration}_s{cfg.seed}")
        corpus_root.mkdir(parents=True, exist_ok=True)

    rates = sorted({v.corruption_rate if v.corruption_rate is not None
                    else cfg.corruption_rate for v in cfg.variants})
    corpora_by_rate = {r: build_corpora(cfg, corpus_root, r) for r in rates}

    rows = []
    for variant in cfg.variants:
        rate = (variant.corruption_rate if variant.corruption_rate is not None
                else cfg.corruption_rate)
        rows.append(run_variant(cfg, variant, out_dir, corpora_by_rate[rate]))

    table = {
        "preset": name,
        "generated_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "columns": ["jitter", "fs_dist", "fs_rate", "accel", "gmpjpe",
                    "detection_recall"],
        "rows": rows,
    }
    (out_dir / "table.json").write_text(json.dumps(table, indent=2))
    lines = [json.dumps(r) for r in rows]
    (out_dir / "table.jsonl").write_text("\n".join(lines) + "\n")
    return table
