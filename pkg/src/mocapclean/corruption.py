"""Synthetic motion-artifact generation with ground-truth frame masks.

Four artifact families are applied on random intervals of a clip:
jittering (clipped Gaussian noise on joint-rotation channels of a random
joint subset, optionally re-smoothed), over_smooth (temporal Gaussian
blur spliced into the interval), foot_sliding (per-frame rescaling of
planar root velocity, re-integrated), and drifting (cumulative planar
root drift whose final offset persists after the interval). det_mask
marks affected frames padded by one frame on each side.

Coordinates follow the package convention: +Y up, planar = (x, z).
Quaternions are renormalized after rotation-channel noise so the result
stays a valid pose. Zero-length intervals are complete no-ops.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .clipio import save_clip
from .skeleton import MotionClip, Skeleton

PLANAR = (0, 2)
MIN_FRAMES = 15  # shorter clips pass through untouched

ARTIFACT_TYPES = ("jittering", "foot_sliding", "over_smooth", "drifting")


@dataclass
class CorruptionConfig:
    mode: str = "train"  # train: length-scaled intervals; test: long fixed-range intervals
    target_corruption_rate: float = 0.23
    seed: int = 0
    length_scale: float | None = None  # interval-length multiplier; calibrated when None
    base_scale: float = 0.5  # jitter noise clip bound
    noise_std: float = 0.1
    smooth_sigma: float = 4.0
    smooth_prob: float = 0.25
    slide_scale: float = 0.1
    drift_speed: float = 0.025
    artifact_types: tuple[str, ...] = ARTIFACT_TYPES

    def __post_init__(self):
        if self.mode not in ("train", "test"):
            raise ValueError("mode must be 'train' or 'test'")
        if not 0.0 <= self.target_corruption_rate <= 1.0:
            raise ValueError("target_corruption_rate must be in [0, 1]")
        unknown = set(self.artifact_types) - set(ARTIFACT_TYPES)
        if unknown:
            raise ValueError(f"unknown artifact types: {sorted(unknown)}")


@dataclass
class CorruptionRecord:
    artifact_types: tuple[str, ...]
    intervals: tuple[tuple[int, int], ...]  # (start, length) per artifact
    det_mask: np.ndarray  # (N,) {0, 1}

    @classmethod
    def empty(cls, n_frames: int) -> "CorruptionRecord":
        return cls((), (), np.zeros(n_frames))


def joint_groups(skeleton: Skeleton) -> dict[str, list[int]]:
    """Leg and lower-body joint lists derived from the flagged foot joints.

    Lists run proximal to distal so that suffix slices keep the distal
    joints, mirroring how the jitter branch prunes them.
    """
    chains = []
    for ankle, toe in skeleton.foot_pairs():
        chain = [toe] if toe == ankle else [toe, ankle]
        cur = int(skeleton.parent_index[chain[-1]])
        while cur != -1 and cur != skeleton.root_index:
            chain.append(cur)
            cur = int(skeleton.parent_index[cur])
        chains.append(list(reversed(chain)))
    left = chains[0] if chains else []
    right = chains[1] if len(chains) > 1 else left
    lower = [j for pair in zip(left, right) for j in pair]
    if len(left) != len(right):
        lower = sorted(set(left + right))
    return {"left_leg": left, "right_leg": right, "lower_body": lower}


def apply_jittering(poses: np.ndarray, interval: tuple[int, int],
                    rng: np.random.Generator, cfg: CorruptionConfig | None = None,
                    groups: dict[str, list[int]] | None = None,
                    renormalize: bool = True) -> np.ndarray:
    """Clipped Gaussian noise on rotation channels of a sampled joint subset.

    renormalize restores unit quaternions on the perturbed entries; pass
    False to inspect the raw clipped deltas.
    """
    cfg = cfg or CorruptionConfig()
    n, j, d = poses.shape
    start, length = interval
    if length <= 0:
        return poses
    poses = poses.copy()

    rd = rng.random() * 0.5 + 0.5
    noise = np.clip(rng.standard_normal((n, j, d)) * cfg.noise_std * rd,
                    -cfg.base_scale, cfg.base_scale)

    branch = int(rng.choice(np.arange(4), p=np.array([0.4, 0.3, 0.15, 0.15])))
    if groups is None:
        branch = 0
    if branch == 0:
        count = int(rng.integers(1, j + 1))
        joints = sorted(int(x) for x in rng.choice(j, size=count, replace=False))
    elif branch == 1:
        lower = groups["lower_body"]
        starts = list(range(0, len(lower), 2)) or [0]
        joints = lower[int(rng.choice(starts)):]
    elif branch == 2:
        leg = groups["left_leg"]
        joints = leg[int(rng.integers(0, len(leg))):]
    else:
        leg = groups["right_leg"]
        joints = leg[int(rng.integers(0, len(leg))):]

    rows = slice(start, start + length)
    poses[rows, joints] = poses[rows, joints] + noise[rows, joints]

    if rng.random() < cfg.smooth_prob:
        radius = round(6 * (rng.random() * 2 + 2))
        smoothed = gaussian_filter1d(poses[:, joints], sigma=cfg.smooth_sigma,
                                     axis=0, radius=radius, mode="nearest")
        poses[rows, joints] = smoothed[rows]

    if renormalize:
        norms = np.linalg.norm(poses[rows, joints], axis=-1, keepdims=True)
        poses[rows, joints] = poses[rows, joints] / np.maximum(norms, 1e-8)
    return poses


def apply_over_smooth(poses: np.ndarray, interval: tuple[int, int],
                      rng: np.random.Generator,
                      cfg: CorruptionConfig | None = None) -> np.ndarray:
    """Temporal Gaussian blur of the whole sequence, spliced into the interval."""
    cfg = cfg or CorruptionConfig()
    start, length = interval
    if length <= 0:
        return poses
    poses = poses.copy()
    radius = round(6 * (rng.random() * 2 + 2))
    smoothed = gaussian_filter1d(poses, sigma=cfg.smooth_sigma, axis=0,
                                 radius=radius, mode="nearest")
    sl = slice(start, start + length)
    norms = np.linalg.norm(smoothed[sl], axis=-1, keepdims=True)
    poses[sl] = smoothed[sl] / np.maximum(norms, 1e-8)
    return poses


def apply_foot_sliding(trans: np.ndarray, interval: tuple[int, int],
                       rng: np.random.Generator,
                       cfg: CorruptionConfig | None = None) -> np.ndarray:
    """Rescale planar root velocity inside the interval and re-integrate.

    The vertical channel is untouched; positions after the interval keep
    the accumulated extra displacement.
    """
    cfg = cfg or CorruptionConfig()
    start, length = interval
    if length <= 0:
        return trans
    trans = trans.copy()
    planar = trans[:, PLANAR]
    vel = np.zeros_like(planar)
    vel[1:] = planar[1:] - planar[:-1]
    scale = np.ones(len(trans))
    scale[start:start + length] += cfg.slide_scale * rng.random(length)
    rebuilt = planar[0] + np.cumsum(vel * scale[:, None], axis=0)
    trans[:, PLANAR[0]] = rebuilt[:, 0]
    trans[:, PLANAR[1]] = rebuilt[:, 1]
    return trans


def apply_drifting(trans: np.ndarray, interval: tuple[int, int],
                   rng: np.random.Generator,
                   cfg: CorruptionConfig | None = None) -> np.ndarray:
    """Add cumulative planar drift; the final offset persists afterwards."""
    cfg = cfg or CorruptionConfig()
    start, length = interval
    if length <= 0:
        return trans
    trans = trans.copy()
    dirs = rng.standard_normal((1, 2)) + rng.standard_normal((length, 2)) * 0.1
    dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    speed = rng.random((length, 1)) * cfg.drift_speed
    dist = np.cumsum(speed * dirs, axis=0)
    sl = slice(start, start + length)
    trans[sl, PLANAR[0]] += dist[:, 0]
    trans[sl, PLANAR[1]] += dist[:, 1]
    trans[start + length:, PLANAR[0]] += dist[-1, 0]
    trans[start + length:, PLANAR[1]] += dist[-1, 1]
    return trans


def _draw_interval(mlen: int, mode: str, length_scale: float,
                   rng: np.random.Generator) -> tuple[int, int]:
    if mode == "train":
        hi = min(50, mlen - 2)
        length = min(mlen - 2, int(rng.integers(5, hi + 1) * length_scale))
    else:
        lo = min(20, int(0.8 * mlen))
        hi = min(40, int(0.8 * mlen))
        length = int(rng.integers(lo, hi + 1))
    start = int(rng.integers(1, mlen - length + 1))
    return start, length


def corrupt(clip: MotionClip, cfg: CorruptionConfig,
            rng: np.random.Generator | None = None) -> tuple[MotionClip, CorruptionRecord]:
    """Apply 1-4 artifact types on independent random intervals of a clip."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    n = clip.num_frames
    out = clip.copy()

    if n < MIN_FRAMES or not cfg.artifact_types:
        out.quality = np.zeros(n)
        return out, CorruptionRecord.empty(n)

    length_scale = cfg.length_scale if cfg.length_scale is not None else 1.0
    k = int(rng.integers(1, len(cfg.artifact_types) + 1))
    picked = [cfg.artifact_types[int(i)]
              for i in rng.choice(len(cfg.artifact_types), size=k, replace=False)]

    groups = joint_groups(clip.skeleton)
    det_mask = np.zeros(n)
    intervals = []
    applied = []
    poses = out.joint_rotations
    trans = out.root_translation

    for aug_type in picked:
        start, length = _draw_interval(n, cfg.mode, length_scale, rng)
        if length <= 0:
            continue
        det_mask[max(0, start - 1): start + length + 1] = 1.0
        intervals.append((start, length))
        applied.append(aug_type)
        if aug_type == "jittering":
            poses = apply_jittering(poses, (start, length), rng, cfg, groups)
        elif aug_type == "over_smooth":
            poses = apply_over_smooth(poses, (start, length), rng, cfg)
        elif aug_type == "foot_sliding":
            trans = apply_foot_sliding(trans, (start, length), rng, cfg)
        elif aug_type == "drifting":
            trans = apply_drifting(trans, (start, length), rng, cfg)

    out.joint_rotations = poses
    out.root_translation = trans
    out.quality = det_mask.copy()
    out.validate()
    return out, CorruptionRecord(tuple(applied), tuple(intervals), det_mask)


def _simulate_rate(lengths: list[int], cfg: CorruptionConfig, length_scale: float,
                   n_samples: int = 400) -> float:
    """Expected corrupted-frame fraction for a given interval length scale."""
    marked = total = 0
    for s in range(n_samples):
        rng = np.random.default_rng([cfg.seed, 7919, s])
        mlen = lengths[s % len(lengths)]
        total += mlen
        if mlen < MIN_FRAMES:
            continue
        mask = np.zeros(mlen)
        k = int(rng.integers(1, len(cfg.artifact_types) + 1))
        for _ in range(k):
            start, length = _draw_interval(mlen, cfg.mode, length_scale, rng)
            if length > 0:
                mask[max(0, start - 1): start + length + 1] = 1.0
        marked += mask.sum()
    return marked / max(total, 1)


def calibrate_length_scale(lengths: list[int], cfg: CorruptionConfig) -> float:
    """Bisect the interval length multiplier to hit the target corruption rate."""
    lo, hi = 0.0, 8.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if _simulate_rate(lengths, cfg, mid) < cfg.target_corruption_rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def build_dataset(clean_clips: list[tuple[str, MotionClip]], cfg: CorruptionConfig,
                  out_dir: str | Path) -> dict:
    """Corrupt a corpus, write portable clips + manifest, return the manifest.

    Output clips carry det_mask as their per-frame quality labels. With a
    target rate of zero the corpus is copied through clean.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if cfg.target_corruption_rate == 0.0:
        cfg = replace(cfg, artifact_types=())
    elif cfg.mode == "train" and cfg.length_scale is None:
        scale = calibrate_length_scale([c.num_frames for _, c in clean_clips], cfg)
        cfg = replace(cfg, length_scale=scale)

    entries = []
    type_counts = dict.fromkeys(ARTIFACT_TYPES, 0)
    marked = total = 0
    for i, (name, clip) in enumerate(clean_clips):
        rng = np.random.default_rng([cfg.seed, i])
        corrupted, record = corrupt(clip, cfg, rng)
        path = out_dir / f"{name}.json"
        save_clip(corrupted, path)
        for t in record.artifact_types:
            type_counts[t] += 1
        marked += int(record.det_mask.sum())
        total += clip.num_frames
        entries.append({
            "path": path.name,
            "source": name,
            "artifact_types": list(record.artifact_types),
            "corrupted_frames": int(record.det_mask.sum()),
            "length": clip.num_frames,
        })

    manifest = {
        "clips": entries,
        "realized_rate": marked / max(total, 1),
        "type_counts": type_counts,
        "mode": cfg.mode,
        "target_corruption_rate": cfg.target_corruption_rate,
        "length_scale": cfg.length_scale,
        "seed": cfg.seed,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest
