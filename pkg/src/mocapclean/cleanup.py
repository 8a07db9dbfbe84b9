"""Inference pipeline: detect corrupted frames and inpaint them.

Per window: the model first acts as a quality evaluator (sampling the
hidden quality column conditioned on the motion); Monte-Carlo averaging
of binarized samples gives soft labels. Flagged frames are then inpainted
in generation mode with the quality condition set to clean, starting each
frame's denoising at a soft step derived from its label (severely
corrupted frames restart from pure noise, mild ones keep more of the
original). Multiple candidates can be generated and the one whose
re-evaluation reports the fewest corrupted frames wins. Long clips are
processed with overlapping windows; inpainted overlaps are cross-faded
and frames never flagged anywhere are copied from the input bit-exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from . import quat
from .diffusion import ddpm_sample, q_sample
from .features import FeatureSequence, canonicalize, decode_features, encode_features
from .network import Checkpoint, InpaintMask, build_condition
from .skeleton import MotionClip


@dataclass
class CleanupConfig:
    mc_samples: int = 8  # K evaluator samples behind each soft label
    ensemble_size: int = 5  # E cleanup candidates
    tau: float = 0.5  # inpainting threshold on soft labels
    enable_adaptive: bool = True
    enable_ensemble: bool = True
    num_inference_steps: int | None = 100  # respaced sampler steps (None = full)
    overlap: float = 0.5  # sliding-window overlap fraction
    seed: int = 0

    def __post_init__(self):
        if self.mc_samples < 1 or self.ensemble_size < 1:
            raise ValueError("mc_samples and ensemble_size must be >= 1")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError("overlap must lie in [0, 1)")

    @property
    def effective_ensemble(self) -> int:
        return self.ensemble_size if self.enable_ensemble else 1


@dataclass
class WindowReport:
    start: int
    length: int
    soft_labels: np.ndarray  # (N,) chosen candidate's h-bar
    t_soft: np.ndarray  # (N,) int
    flagged: np.ndarray  # (N,) bool, frames inpainted by the chosen candidate
    candidate_scores: list[float] = field(default_factory=list)
    chosen: int = 0


def soft_schedule(h_bar: np.ndarray, num_steps: int, tau: float) -> np.ndarray:
    """Per-frame start step: T sin(pi/2 min(1, 2h - 1 + tau)) above tau, else 0.

    The sine argument is clamped at zero so thresholds below 1/3 cannot
    produce negative steps.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    h = np.asarray(h_bar, dtype=float)
    arg = np.clip(2.0 * h - 1.0 + tau, 0.0, 1.0)
    t = num_steps * np.sin(0.5 * np.pi * arg)
    return np.where(h >= tau, np.rint(t), 0.0).astype(int)


def _normalize(feats: np.ndarray, ckpt: Checkpoint) -> torch.Tensor:
    return torch.from_numpy((feats - ckpt.norm_mean) / ckpt.norm_std).float()


def _denormalize(x: torch.Tensor, ckpt: Checkpoint) -> np.ndarray:
    return x.double().numpy() * ckpt.norm_std + ckpt.norm_mean


def _stack_conditions(conds: list[dict]) -> dict:
    return {
        "observed": torch.cat([c["observed"] for c in conds]),
        "flags": torch.cat([c["flags"] for c in conds]),
        "mode": torch.cat([c["mode"] for c in conds]),
    }


def evaluate_quality(window: torch.Tensor, ckpt: Checkpoint,
                     rng: torch.Generator, num_steps: int | None = None,
                     samples: int = 1) -> np.ndarray:
    """Per-frame binary corruption estimates, shape (samples, N).

    window is a normalized (N, F) feature tensor. Runs the sampler in
    evaluation mode (motion observed, quality hidden) and binarizes the
    denormalized quality column at 0.5.
    """
    if not ckpt.has_quality:
        raise ValueError("checkpoint was trained without a quality channel; "
                         "quality evaluation is unsupported")
    n, f = window.shape
    mask = InpaintMask(motion=np.ones(n), quality=np.zeros(n))
    cond = build_condition(window.unsqueeze(0), mask, has_quality=True)
    batch_cond = {
        "observed": cond["observed"].expand(samples, n, f),
        "flags": cond["flags"].expand(samples, n, 2),
        "mode": cond["mode"].expand(samples).clone(),
    }
    with torch.no_grad():
        out = ddpm_sample(ckpt.model.as_denoiser_fn(), (samples, n, f), batch_cond,
                          rng, ckpt.schedule, num_steps=num_steps)
    h_raw = out[:, :, -1].numpy() * ckpt.norm_std[-1] + ckpt.norm_mean[-1]
    return (h_raw > 0.5).astype(float)


def soft_labels(window: torch.Tensor, ckpt: Checkpoint, k: int,
                rng: torch.Generator, num_steps: int | None = None) -> np.ndarray:
    """Monte-Carlo mean of k binarized evaluator samples (multiples of 1/k)."""
    samples = evaluate_quality(window, ckpt, rng, num_steps=num_steps, samples=k)
    return samples.mean(axis=0)


def inpaint(window: torch.Tensor, frames: np.ndarray, h_target: np.ndarray | None,
            ckpt: Checkpoint, t_init, rng: torch.Generator,
            num_steps: int | None = None) -> torch.Tensor:
    """Regenerate the flagged frames of one normalized window.

    frames: (N,) bool inpainting set A; h_target: per-frame quality
    condition in label space (defaults to all-clean); t_init: scalar or
    (N,) per-frame start steps for frames in A. Frames outside A are
    returned bit-exactly.
    """
    n, f = window.shape
    frames = np.asarray(frames, dtype=bool)
    if not frames.any():
        return window.clone()
    if (~frames).sum() < 2 and frames.all():
        warnings.warn("inpainting every frame with no conditioning context")

    out = _inpaint_batch(window.unsqueeze(0), frames[None], h_target, ckpt,
                         np.broadcast_to(np.asarray(t_init), (1, n)), rng, num_steps)
    result = window.clone()
    result[frames] = out[0, frames]
    return result


def _inpaint_batch(windows: torch.Tensor, frames: np.ndarray,
                   h_target: np.ndarray | None, ckpt: Checkpoint,
                   t_init: np.ndarray, rng: torch.Generator,
                   num_steps: int | None) -> torch.Tensor:
    """Batched generation-mode sampling. windows (B, N, F); frames/t_init (B, N)."""
    b, n, f = windows.shape
    has_q = ckpt.has_quality

    x_start = windows.clone()
    if has_q:
        target = np.zeros(n) if h_target is None else np.asarray(h_target, dtype=float)
        h_norm = torch.from_numpy(
            (target - ckpt.norm_mean[-1]) / ckpt.norm_std[-1]).float()
        x_start[:, :, -1] = h_norm

    conds = []
    for i in range(b):
        mask = InpaintMask(motion=(~frames[i]).astype(float),
                           quality=np.ones(n) if has_q else None)
        conds.append(build_condition(x_start[i:i + 1], mask, has_q))
    condition = _stack_conditions(conds)

    start = torch.from_numpy(np.array(t_init, dtype=np.int64))
    known = torch.from_numpy(~frames)
    t_cap = int(start.max()) if int(start.max()) > 0 else ckpt.schedule.num_steps
    start = torch.where(known, torch.full_like(start, t_cap), start)

    with torch.no_grad():
        noise = torch.randn(windows.shape, generator=rng)
        x_init = q_sample(x_start, start, noise, ckpt.schedule)
        out = ddpm_sample(ckpt.model.as_denoiser_fn(), tuple(windows.shape),
                          condition, rng, ckpt.schedule, start_step=start,
                          x_init=x_init, known_x0=x_start, known_frames=known,
                          num_steps=num_steps)
    return out


def ensemble_clean(window: torch.Tensor, ckpt: Checkpoint, cfg: CleanupConfig,
                   rng: torch.Generator,
                   external_labels: np.ndarray | None = None
                   ) -> tuple[torch.Tensor, WindowReport]:
    """Evaluate, inpaint E candidates, return the best-scoring one.

    Scores are the summed per-frame corruption flags from a fresh
    evaluation pass over each candidate; the minimal score wins, ties
    break toward the lowest candidate index. With external_labels given
    (required for quality-free checkpoints) detection is skipped.
    """
    n, f = window.shape
    e = cfg.effective_ensemble
    T = ckpt.schedule.num_steps

    if not ckpt.has_quality:
        if external_labels is None:
            raise ValueError("quality-free checkpoint needs external labels")
        if e > 1:
            warnings.warn("no evaluator available; ensemble reduced to one candidate")
            e = 1

    if external_labels is not None:
        h_bars = np.broadcast_to(np.asarray(external_labels, dtype=float), (e, n))
    else:
        h_bars = np.stack([
            soft_labels(window, ckpt, cfg.mc_samples, rng, cfg.num_inference_steps)
            for _ in range(e)])

    frames = h_bars >= cfg.tau
    if cfg.enable_adaptive:
        t_init = np.stack([soft_schedule(h_bars[i], T, cfg.tau) for i in range(e)])
    else:
        t_init = np.where(frames, T, 0)

    if not frames.any():
        report = WindowReport(start=0, length=n, soft_labels=h_bars[0],
                              t_soft=np.zeros(n, dtype=int),
                              flagged=np.zeros(n, dtype=bool),
                              candidate_scores=[0.0] * e, chosen=0)
        return window.clone(), report

    candidates = _inpaint_batch(window.unsqueeze(0).expand(e, n, f).clone(),
                                frames, None, ckpt, t_init, rng,
                                cfg.num_inference_steps)
    # exact passthrough outside each candidate's inpainting set
    for i in range(e):
        keep = ~frames[i]
        candidates[i, keep] = window[keep]

    if ckpt.has_quality:
        scores = []
        for i in range(e):
            h_hat = evaluate_quality(candidates[i], ckpt, rng,
                                     cfg.num_inference_steps, samples=1)[0]
            scores.append(float(h_hat.sum()))
        chosen = int(np.argmin(scores))
    else:
        scores = [float(h_bars[i].sum()) for i in range(e)]
        chosen = 0

    report = WindowReport(start=0, length=n, soft_labels=h_bars[chosen],
                          t_soft=t_init[chosen].astype(int),
                          flagged=frames[chosen],
                          candidate_scores=scores, chosen=chosen)
    return candidates[chosen], report


def window_starts(n_frames: int, window: int, overlap: float) -> list[int]:
    """Window start offsets covering [0, n_frames) with the given overlap."""
    if n_frames <= window:
        return [0]
    stride = max(1, int(round(window * (1.0 - overlap))))
    starts = list(range(0, n_frames - window + 1, stride))
    if starts[-1] != n_frames - window:
        starts.append(n_frames - window)
    return starts


def _crossfade(prev_rot, prev_trans, new_rot, new_trans, lam: float):
    rot = quat.slerp(prev_rot, new_rot, lam)
    trans = (1.0 - lam) * prev_trans + lam * new_trans
    return rot, trans


def clean_clip(clip: MotionClip, ckpt: Checkpoint, cfg: CleanupConfig,
               use_clip_labels: bool = False) -> tuple[MotionClip, dict]:
    """Detect and fix corrupted frames of a full clip with sliding windows.

    Returns the cleaned clip plus a report: per-window soft labels, soft
    steps, candidate scores, and the per-frame aggregate. Frames never
    flagged in any window are bit-identical to the input.

    use_clip_labels bypasses detection and treats clip.quality as the
    per-frame corruption labels (always the case for checkpoints trained
    without a quality channel).
    """
    if clip.skeleton.fingerprint() != ckpt.skeleton_fingerprint:
        raise ValueError("clip skeleton does not match the checkpoint")
    n = clip.num_frames
    w = min(ckpt.model.cfg.max_frames, n)
    starts = window_starts(n, w, cfg.overlap)

    out = clip.copy()
    written = np.zeros(n, dtype=bool)
    prev_end = 0
    agg_h = np.zeros(n)
    agg_cover = np.zeros(n)
    any_flag = np.zeros(n, dtype=bool)
    window_reports: list[WindowReport] = []

    for wi, start in enumerate(starts):
        sub = clip.slice(start, start + w)
        canonical, inv = canonicalize(sub)
        feats = encode_features(canonical)
        data = feats.data if ckpt.has_quality else feats.data[:, :-1]
        window = _normalize(data, ckpt)

        rng = torch.Generator().manual_seed(
            int(np.random.SeedSequence([cfg.seed, wi]).generate_state(1)[0]))
        external = None
        if use_clip_labels or not ckpt.has_quality:
            if sub.quality is None:
                raise ValueError(
                    "label-driven cleanup requires per-frame quality labels "
                    "on the clip" if use_clip_labels else
                    "quality-free checkpoint requires labeled clips")
            external = sub.quality
        cleaned, report = ensemble_clean(window, ckpt, cfg, rng,
                                         external_labels=external)
        report.start = start
        window_reports.append(report)

        agg_h[start:start + w] += report.soft_labels
        agg_cover[start:start + w] += 1.0
        any_flag[start:start + w] |= report.flagged

        if report.flagged.any():
            denorm = _denormalize(cleaned, ckpt)
            if not ckpt.has_quality:
                denorm = np.concatenate([denorm, np.zeros((w, 1))], axis=1)
            decoded = decode_features(
                FeatureSequence(data=denorm, layout=feats.layout, fps=clip.fps),
                clip.skeleton)
            restored = inv.apply_clip(decoded)
            for local in np.flatnonzero(report.flagged):
                g = start + local
                new_rot = restored.joint_rotations[local]
                new_trans = restored.root_translation[local]
                if written[g] and g < prev_end:
                    ovl = prev_end - start
                    lam = 0.5 * (1.0 - math.cos(math.pi * (g - start + 1) / (ovl + 1)))
                    new_rot, new_trans = _crossfade(
                        out.joint_rotations[g], out.root_translation[g],
                        new_rot, new_trans, lam)
                out.joint_rotations[g] = new_rot
                out.root_translation[g] = new_trans
                written[g] = True
        prev_end = start + w

    if out.quality is not None:
        out.quality = np.where(written, 0.0, out.quality)
    report = {
        "windows": [
            {
                "start": r.start,
                "length": r.length,
                "soft_labels": r.soft_labels.tolist(),
                "t_soft": r.t_soft.tolist(),
                "flagged_frames": np.flatnonzero(r.flagged).tolist(),
                "candidate_scores": r.candidate_scores,
                "chosen_candidate": r.chosen,
            }
            for r in window_reports
        ],
        "frames_flagged": np.flatnonzero(any_flag).tolist(),
        "mean_soft_labels": (agg_h / np.maximum(agg_cover, 1.0)).tolist(),
        "frames_rewritten": int(written.sum()),
    }
    return out, report
