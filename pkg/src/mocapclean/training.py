"""Masked-inpainting training on mixed-quality clips.

Every step samples clip windows, canonicalizes and encodes them, draws a
mask mode per sequence (evaluation: predict the quality column from the
motion; generation: inpaint hidden frame spans given per-frame quality),
then minimizes the x0-prediction MSE restricted to hidden entries.

Ablation switches: disable_qualvar drops the quality column entirely
(evaluation mode becomes unavailable); filter_corrupted restricts window
sampling to runs of clean-labeled frames.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .diffusion import DiffusionSchedule, q_sample
from .features import FeatureLayout, canonicalize, encode_features
from .network import (InpaintMask, ModelConfig, MotionDenoiser,
                      build_condition, save_checkpoint)
from .skeleton import MotionClip


@dataclass
class SpanConfig:
    max_spans: int = 3
    mean_fraction: float = 0.15  # geometric-like span length, mean ~ 15% of N
    min_observed: int = 2


@dataclass
class TrainConfig:
    steps: int = 3000
    batch_size: int = 32
    learning_rate: float = 1e-4
    warmup_steps: int = 1000
    grad_clip: float = 1.0
    p_eval: float = 0.5
    spans: SpanConfig = field(default_factory=SpanConfig)
    num_diffusion_steps: int = 1000
    schedule: str = "cosine"
    seed: int = 0
    disable_qualvar: bool = False
    filter_corrupted: bool = False
    normalization: str = "physical"  # 'physical' or 'zscore'
    ema_decay: float = 0.999  # 0 disables the weight average
    val_fraction: float = 0.1
    val_interval: int = 250
    log_interval: int = 50
    min_clean_run: int = 8  # shortest clean run usable under filter_corrupted

    def __post_init__(self):
        if not 0.0 <= self.p_eval <= 1.0:
            raise ValueError("p_eval must be in [0, 1]")
        if self.disable_qualvar and self.filter_corrupted:
            raise ValueError("choose at most one ablation flag")
        if self.normalization not in ("physical", "zscore"):
            raise ValueError("normalization must be 'physical' or 'zscore'")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


def sample_mask(n: int, mode: str, rng: np.random.Generator,
                feature_width: int, has_quality: bool = True,
                spans: SpanConfig | None = None) -> tuple[InpaintMask, np.ndarray]:
    """Draw an inpainting mask and the matching per-entry loss mask.

    Returns (mask, loss_mask) with loss_mask of shape (n, feature_width);
    the loss covers exactly the hidden entries the mode trains on.
    """
    spans = spans or SpanConfig()
    loss_mask = np.zeros((n, feature_width))

    if mode == "evaluation":
        if not has_quality:
            raise ValueError("evaluation mode requires a quality channel")
        mask = InpaintMask(motion=np.ones(n), quality=np.zeros(n))
        loss_mask[:, -1] = 1.0
        return mask, loss_mask

    if mode != "generation":
        raise ValueError(f"unknown mask mode {mode!r}")

    hidden = np.zeros(n, dtype=bool)
    if n < 4:
        start = int(rng.integers(0, n))
        hidden[start] = True
    else:
        k = int(rng.integers(1, spans.max_spans + 1))
        mean_len = max(1.0, spans.mean_fraction * n)
        for _ in range(k):
            length = 1 + int(rng.geometric(1.0 / mean_len)) - 1
            length = int(np.clip(length, 1, n - spans.min_observed))
            start = int(rng.integers(0, n - length + 1))
            hidden[start:start + length] = True
        # leave at least min_observed conditioning frames
        excess = int(hidden.sum()) - (n - spans.min_observed)
        if excess > 0:
            idx = np.flatnonzero(hidden)
            drop = rng.choice(idx, size=excess, replace=False)
            hidden[drop] = False
        if not hidden.any():
            hidden[int(rng.integers(0, n))] = True

    motion = (~hidden).astype(float)
    quality = np.ones(n) if has_quality else None
    mask = InpaintMask(motion=motion, quality=quality)
    motion_width = feature_width - 1 if has_quality else feature_width
    loss_mask[hidden, :motion_width] = 1.0
    return mask, loss_mask


class ClipDataset:
    """In-memory training corpus with window sampling and normalization."""

    def __init__(self, clips: list[tuple[str, MotionClip]], max_frames: int,
                 include_quality: bool = True, filter_corrupted: bool = False,
                 min_clean_run: int = 8):
        if not clips:
            raise ValueError("empty dataset")
        self.names = [n for n, _ in clips]
        self.clips = [c for _, c in clips]
        skel = self.clips[0].skeleton
        fps = self.clips[0].fps
        for c in self.clips:
            if c.skeleton.fingerprint() != skel.fingerprint():
                raise ValueError("all clips must share one skeleton")
            if c.fps != fps:
                raise ValueError("all clips must share one fps")
        self.skeleton = skel
        self.fps = fps
        self.max_frames = max_frames
        self.include_quality = include_quality
        self.layout = FeatureLayout.for_skeleton(skel, include_quality=include_quality)
        self.feature_width = self.layout.total_width

        self.clean_runs: list[list[tuple[int, int]]] | None = None
        if filter_corrupted:
            self.clean_runs = [self._runs(c, min_clean_run) for c in self.clips]
            if not any(self.clean_runs):
                raise ValueError("filter_corrupted: no clean runs of usable length")

    @staticmethod
    def _runs(clip: MotionClip, min_len: int) -> list[tuple[int, int]]:
        labels = clip.quality if clip.quality is not None else np.zeros(clip.num_frames)
        runs, start = [], None
        for i, v in enumerate(np.append(labels, 1.0)):
            if v == 0 and start is None:
                start = i
            elif v != 0 and start is not None:
                if i - start >= min_len:
                    runs.append((start, i - start))
                start = None
        return runs

    def encode_window(self, clip_idx: int, start: int, length: int) -> np.ndarray:
        window = self.clips[clip_idx].slice(start, start + length)
        window, _ = canonicalize(window)
        feats = encode_features(window).data
        if not self.include_quality:
            feats = feats[:, :-1]
        return feats

    def sample_window(self, rng: np.random.Generator) -> np.ndarray:
        if self.clean_runs is not None:
            choices = [(ci, r) for ci, runs in enumerate(self.clean_runs) for r in runs]
            ci, (rs, rl) = choices[int(rng.integers(len(choices)))]
            length = min(self.max_frames, rl)
            start = rs + int(rng.integers(0, rl - length + 1))
            return self.encode_window(ci, start, length)
        ci = int(rng.integers(len(self.clips)))
        clip_len = self.clips[ci].num_frames
        length = min(self.max_frames, clip_len)
        start = int(rng.integers(0, clip_len - length + 1))
        return self.encode_window(ci, start, length)


# position/velocity scale caps for the 'physical' normalization policy:
# precision on meter-scale blocks matters in absolute terms, so their
# normalization scale is capped instead of using the (large) corpus std.
PHYSICAL_SCALES = {"root_pos": 0.25, "joint_pos": 0.25, "foot_pos": 0.25,
                   "foot_vel": 1.0, "root_vel": 1.0}


def normalize_stats(dataset: ClipDataset, stride: int | None = None,
                    policy: str = "physical") -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean/scale over stride-sampled canonical windows.

    'zscore' uses the corpus std per feature; 'physical' additionally caps
    position/velocity block scales at fixed physical units so the training
    loss keeps absolute precision on them. Deterministic given dataset
    order; scales floored at 1e-6.
    """
    stride = stride or max(1, dataset.max_frames // 2)
    rows = []
    for ci, clip in enumerate(dataset.clips):
        length = min(dataset.max_frames, clip.num_frames)
        for start in range(0, clip.num_frames - length + 1, stride):
            rows.append(dataset.encode_window(ci, start, length))
    data = np.concatenate(rows, axis=0)
    mean = data.mean(axis=0)
    std = np.maximum(data.std(axis=0), 1e-6)
    if policy == "physical":
        for name, cap in PHYSICAL_SCALES.items():
            if dataset.layout.has_block(name):
                sl = dataset.layout.sl(name)
                std[sl] = np.minimum(std[sl], cap)
    return mean, std


def _pad_batch(windows: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    n_max = max(w.shape[0] for w in windows)
    f = windows[0].shape[1]
    out = np.zeros((len(windows), n_max, f))
    valid = np.zeros((len(windows), n_max), dtype=bool)
    for i, w in enumerate(windows):
        out[i, :w.shape[0]] = w
        valid[i, :w.shape[0]] = True
    return out, valid


def _lr_at(step: int, cfg: TrainConfig) -> float:
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.learning_rate * (step + 1) / cfg.warmup_steps
    return cfg.learning_rate


def _make_batch(dataset: ClipDataset, cfg: TrainConfig, schedule: DiffusionSchedule,
                rng: np.random.Generator, torch_gen: torch.Generator,
                mean: np.ndarray, std: np.ndarray):
    """One normalized training batch: (x0, t, noise, loss_mask, condition)."""
    windows = [(dataset.sample_window(rng) - mean) / std
               for _ in range(cfg.batch_size)]
    raw, valid = _pad_batch(windows)
    x0 = torch.from_numpy(raw).float()
    padding = torch.from_numpy(valid)
    b, n, f = x0.shape

    t = torch.from_numpy(rng.integers(1, schedule.num_steps + 1, size=b)).long()
    noise = torch.randn((b, n, f), generator=torch_gen)

    has_q = dataset.include_quality
    loss_masks = np.zeros((b, n, f))
    observed = torch.zeros_like(x0)
    flags = torch.zeros((b, n, 2))
    modes = torch.zeros(b, dtype=torch.long)
    for i, w in enumerate(windows):
        wn = w.shape[0]
        if has_q and rng.random() < cfg.p_eval:
            mode = "evaluation"
        else:
            mode = "generation"
        mask, lm = sample_mask(wn, mode, rng, f, has_quality=has_q, spans=cfg.spans)
        loss_masks[i, :wn] = lm
        cond_i = build_condition(x0[i:i + 1, :wn], mask, has_q)
        observed[i, :wn] = cond_i["observed"][0]
        flags[i, :wn] = cond_i["flags"][0]
        modes[i] = cond_i["mode"][0]
    condition = {"observed": observed, "flags": flags, "mode": modes,
                 "padding": padding}
    return x0, t, noise, torch.from_numpy(loss_masks).float(), condition


def _masked_loss(model: MotionDenoiser, schedule: DiffusionSchedule, batch) -> torch.Tensor:
    x0, t, noise, loss_mask, condition = batch
    x_t = q_sample(x0, t, noise, schedule)
    pred = model(x_t, t, condition)
    total = loss_mask.sum()
    if total == 0:
        warnings.warn("batch loss mask is empty")
        return torch.zeros(())
    return ((x0 - pred) ** 2 * loss_mask).sum() / total


def train(clips: list[tuple[str, MotionClip]], model_cfg: ModelConfig,
          cfg: TrainConfig, out_dir: str | Path) -> Path:
    """Train a denoiser on labeled clips; returns the checkpoint path.

    Writes ckpt.pt (atomically) plus train_log.jsonl with one JSON object
    per log step: {step, loss, val_loss, lr, elapsed}.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    torch_gen = torch.Generator().manual_seed(cfg.seed + 1)

    n_val = max(1, int(len(clips) * cfg.val_fraction)) if len(clips) > 4 else 0
    order = rng.permutation(len(clips))
    val_clips = [clips[i] for i in order[:n_val]]
    train_clips = [clips[i] for i in order[n_val:]] or list(clips)

    include_quality = not cfg.disable_qualvar
    dataset = ClipDataset(train_clips, model_cfg.max_frames,
                          include_quality=include_quality,
                          filter_corrupted=cfg.filter_corrupted,
                          min_clean_run=cfg.min_clean_run)
    if model_cfg.feature_width != dataset.feature_width:
        model_cfg = ModelConfig.from_dict(
            {**model_cfg.to_dict(), "feature_width": dataset.feature_width})

    mean, std = normalize_stats(dataset, policy=cfg.normalization)
    schedule = DiffusionSchedule.create(cfg.schedule, cfg.num_diffusion_steps)
    model = MotionDenoiser(model_cfg)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=0.0)
    ema = {k: v.detach().clone() for k, v in model.state_dict().items()} \
        if cfg.ema_decay > 0 else None

    val_batches = []
    if val_clips:
        val_set = ClipDataset(val_clips, model_cfg.max_frames,
                              include_quality=include_quality)
        val_rng = np.random.default_rng(cfg.seed + 99)
        val_gen = torch.Generator().manual_seed(cfg.seed + 100)
        for _ in range(4):
            val_batches.append(_make_batch(val_set, cfg, schedule, val_rng,
                                           val_gen, mean, std))

    def val_loss() -> float:
        model.eval()
        with torch.no_grad():
            losses = [_masked_loss(model, schedule, b).item() for b in val_batches]
        model.train()
        return float(np.mean(losses)) if losses else float("nan")

    log_path = out_dir / "train_log.jsonl"
    t_start = time.time()
    baseline_val = val_loss() if val_batches else None

    with log_path.open("w") as log:
        if baseline_val is not None:
            log.write(json.dumps({"step": 0, "loss": None, "val_loss": baseline_val,
                                  "lr": 0.0, "elapsed": 0.0}) + "\n")
        for step in range(cfg.steps):
            lr = _lr_at(step, cfg)
            for group in opt.param_groups:
                group["lr"] = lr
            batch = _make_batch(dataset, cfg, schedule, rng, torch_gen, mean, std)
            loss = _masked_loss(model, schedule, batch)
            if not torch.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite training loss at step {step}: {loss.item()}")
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            if ema is not None:
                decay = min(cfg.ema_decay, (step + 1) / (step + 10))
                with torch.no_grad():
                    for k, v in model.state_dict().items():
                        if v.dtype.is_floating_point:
                            ema[k].mul_(decay).add_(v, alpha=1.0 - decay)
                        else:
                            ema[k].copy_(v)

            if (step + 1) % cfg.log_interval == 0 or step == cfg.steps - 1:
                entry = {"step": step + 1, "loss": float(loss.item()),
                         "val_loss": None, "lr": lr,
                         "elapsed": round(time.time() - t_start, 2)}
                if val_batches and ((step + 1) % cfg.val_interval == 0
                                    or step == cfg.steps - 1):
                    entry["val_loss"] = val_loss()
                log.write(json.dumps(entry) + "\n")
                log.flush()

    ckpt_path = out_dir / "ckpt.pt"
    if ema is not None:
        model.load_state_dict(ema)
    model.eval()
    save_checkpoint(
        ckpt_path, model, schedule, dataset.layout,
        dataset.skeleton.fingerprint(), mean, std,
        extra={"train_config": cfg.to_dict(), "fps": dataset.fps,
               "baseline_val_loss": baseline_val, "ema": ema is not None})
    return ckpt_path
