"""Motion quality metrics and heuristic per-frame artifact labeling.

Unit conventions (documented per function): foot-skating distance is
meters per frame as the formula defines it, jitter is the mean jerk
magnitude in m/s^3, acceleration error is m/s^2, GMPJPE is centimeters.
MetricReport rescales fs_dist to cm/frame and jitter to km/s^3 so
corpus tables stay in readable ranges.

The frozen/pops detectors are behavioral stand-ins with configurable
thresholds; they flag unnaturally static windows and isolated positional
discontinuities respectively.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import quat
from .skeleton import MotionClip, forward_kinematics

FS_HEIGHT_FALLOFF = 0.05  # H in the height falloff term; 0 weight at the cutoff
FS_HEIGHT_CUTOFF = 0.05
FS_ROOT_MIN_HEIGHT = 0.65
FS_RATE_SPEED = 0.10  # m/s
FS_RATE_TOE_HEIGHT = 0.10  # m
FS_RATE_ANKLE_HEIGHT = 0.15  # m


@dataclass
class DetectorConfig:
    """Thresholds for the heuristic artifact detectors.

    The skate detector here is stricter than the FS-Rate metric: it only
    fires on grounded toes (below skate_toe_height) moving faster than
    skate_speed, so normal swing phases stay unflagged.
    """

    window: int = 5  # frames
    freeze_eps: float = 1e-3  # m per frame-step
    pop_eps: float = 0.10  # m per frame-step
    pop_ratio: float = 10.0  # vs local median displacement
    flip_speed: float = np.deg2rad(540.0)  # rad/s
    accel_limit: float = 55.0  # m/s^2, max-joint linear acceleration
    skate_speed: float = 0.03  # m/s, planar speed of a grounded toe
    skate_toe_height: float = 0.05  # m
    dilate: int = 1


@dataclass
class MetricReport:
    fs_dist: float  # cm per frame
    fs_rate: float
    fp_dist: float  # cm, mean foot-below-ground depth
    jitter: float  # km/s^3
    frozen_rate: float
    pops_rate: float
    accel: float | None = None  # m/s^2, needs a reference
    gmpjpe: float | None = None  # cm, needs a reference
    r_at_haa: float | None = None  # needs predicted + annotated masks

    def as_dict(self) -> dict:
        return asdict(self)


def _planar(p: np.ndarray) -> np.ndarray:
    return p[..., [0, 2]]


def fs_dist(clip: MotionClip, positions: np.ndarray | None = None) -> float:
    """Foot-skating distance, meters per frame.

    Mean over frame transitions of planar foot displacement, weighted by
    (2 - 2^(h/H)) and gated to near-ground feet (mean height < 0.05 m)
    while the root is upright (> 0.65 m); summed over foot joints.
    """
    if clip.num_frames < 2:
        return 0.0
    pos = forward_kinematics(clip) if positions is None else positions
    feet = list(clip.skeleton.foot_joints)
    root_y = pos[:-1, clip.skeleton.root_index, 1]
    total = np.zeros(clip.num_frames - 1)
    for f in feet:
        fp = pos[:, f]
        disp = np.linalg.norm(_planar(fp[1:]) - _planar(fp[:-1]), axis=1)
        height = 0.5 * (fp[:-1, 1] + fp[1:, 1])
        weight = 2.0 - np.power(2.0, height / FS_HEIGHT_FALLOFF)
        gate = (height < FS_HEIGHT_CUTOFF) & (root_y > FS_ROOT_MIN_HEIGHT)
        total += disp * weight * gate
    return float(total.mean())


def _skate_flags(clip: MotionClip, positions: np.ndarray) -> np.ndarray:
    """(n_feet, N-1) bool: per-foot skating conditions per transition."""
    fps = clip.fps
    flags = []
    for ankle, toe in clip.skeleton.foot_pairs():
        toe_p = positions[:, toe]
        speed = np.linalg.norm(_planar(toe_p[1:]) - _planar(toe_p[:-1]), axis=1) * fps
        toe_low = toe_p[:-1, 1] < FS_RATE_TOE_HEIGHT
        ankle_low = positions[:-1, ankle, 1] < FS_RATE_ANKLE_HEIGHT
        flags.append((speed > FS_RATE_SPEED) & toe_low & ankle_low)
    return np.array(flags)


def fs_rate(clip: MotionClip, positions: np.ndarray | None = None) -> float:
    """Foot-skating rate: per-foot skating fraction, averaged over feet."""
    if clip.num_frames < 2:
        return 0.0
    pos = forward_kinematics(clip) if positions is None else positions
    flags = _skate_flags(clip, pos)
    return float(flags.mean())


def fp_dist(clip: MotionClip, positions: np.ndarray | None = None) -> float:
    """Mean foot-ground penetration depth in cm (0 when feet stay above)."""
    pos = forward_kinematics(clip) if positions is None else positions
    feet = list(clip.skeleton.foot_joints)
    depth = np.clip(-pos[:, feet, 1], 0.0, None)
    return float(depth.mean() * 100.0)


def jitter(clip: MotionClip, positions: np.ndarray | None = None) -> float:
    """Mean jerk magnitude over joints and frames, m/s^3."""
    if clip.num_frames < 4:
        return 0.0
    pos = forward_kinematics(clip) if positions is None else positions
    jerk = np.diff(pos, n=3, axis=0) * clip.fps**3
    return float(np.linalg.norm(jerk, axis=-1).mean())


def accel_error(clip: MotionClip, reference: MotionClip) -> float:
    """Mean acceleration difference vs a reference clip, m/s^2."""
    if clip.num_frames != reference.num_frames:
        raise ValueError("clip and reference must have the same length")
    if clip.num_frames < 3:
        return 0.0
    a = np.diff(forward_kinematics(clip), n=2, axis=0) * clip.fps**2
    b = np.diff(forward_kinematics(reference), n=2, axis=0) * reference.fps**2
    return float(np.linalg.norm(a - b, axis=-1).mean())


def gmpjpe(clip: MotionClip, reference: MotionClip) -> float:
    """Global mean per-joint position error in centimeters."""
    if clip.num_frames != reference.num_frames:
        raise ValueError("clip and reference must have the same length")
    err = np.linalg.norm(forward_kinematics(clip) - forward_kinematics(reference), axis=-1)
    return float(err.mean() * 100.0)


def _step_disp(positions: np.ndarray) -> np.ndarray:
    """(N-1,) max-over-joints displacement per frame transition."""
    return np.linalg.norm(np.diff(positions, axis=0), axis=-1).max(axis=1)


def frozen_rate(clip: MotionClip, cfg: DetectorConfig | None = None,
                positions: np.ndarray | None = None) -> float:
    """Fraction of frames inside a window where no joint moves perceptibly."""
    cfg = cfg or DetectorConfig()
    return float(_frozen_flags(clip, cfg, positions).mean())


def _frozen_flags(clip: MotionClip, cfg: DetectorConfig,
                  positions: np.ndarray | None = None) -> np.ndarray:
    n = clip.num_frames
    if n < 2:
        return np.ones(n, dtype=bool)
    pos = forward_kinematics(clip) if positions is None else positions
    d = _step_disp(pos)
    flags = np.empty(n, dtype=bool)
    for i in range(n):
        lo = max(0, i - cfg.window + 1)
        hi = min(n - 1, i + 1)
        flags[i] = d[lo:hi].max() < cfg.freeze_eps
    return flags


def _pop_flags(clip: MotionClip, cfg: DetectorConfig,
               positions: np.ndarray | None = None) -> np.ndarray:
    """(N-1,) bool: per-transition pop detection."""
    n = clip.num_frames
    if n < 2:
        return np.zeros(0, dtype=bool)
    pos = forward_kinematics(clip) if positions is None else positions
    d = _step_disp(pos)
    flags = np.zeros(n - 1, dtype=bool)
    for i in range(n - 1):
        lo = max(0, i - cfg.window)
        med = np.median(d[lo:i + cfg.window + 1])
        flags[i] = d[i] > cfg.pop_eps and d[i] > cfg.pop_ratio * med
    return flags


def pops_rate(clip: MotionClip, cfg: DetectorConfig | None = None,
              positions: np.ndarray | None = None) -> float:
    """Fraction of frame transitions flagged as positional pops."""
    cfg = cfg or DetectorConfig()
    flags = _pop_flags(clip, cfg, positions)
    return float(flags.mean()) if flags.size else 0.0


def r_at_haa(predicted_mask: np.ndarray, annotated_mask: np.ndarray) -> float:
    """Recall of annotated corrupted frames: TP / (TP + FN).

    Returns 1.0 when the annotation contains no positive frames.
    """
    predicted = np.asarray(predicted_mask).astype(bool)
    annotated = np.asarray(annotated_mask).astype(bool)
    if predicted.shape != annotated.shape:
        raise ValueError("mask shapes differ")
    positives = int(annotated.sum())
    if positives == 0:
        return 1.0
    return float((predicted & annotated).sum() / positives)


def heuristic_label(clip: MotionClip, cfg: DetectorConfig | None = None) -> np.ndarray:
    """Per-frame {0,1} artifact flags from the stacked heuristics.

    Union of foot-skate, frozen, pop, rotation-flip and over-acceleration
    detectors, dilated by cfg.dilate frames. Tuned for recall over
    precision; clean walking should stay mostly unflagged.
    """
    cfg = cfg or DetectorConfig()
    n = clip.num_frames
    pos = forward_kinematics(clip)
    flags = np.zeros(n, dtype=bool)

    flags |= _frozen_flags(clip, cfg, pos)

    if n >= 2:
        trans = np.zeros(n - 1, dtype=bool)
        for _, toe in clip.skeleton.foot_pairs():
            toe_p = pos[:, toe]
            speed = np.linalg.norm(_planar(toe_p[1:]) - _planar(toe_p[:-1]), axis=1) * clip.fps
            # grounded on both sides, so swing takeoffs/landings don't count
            grounded = np.maximum(toe_p[:-1, 1], toe_p[1:, 1]) < cfg.skate_toe_height
            trans |= grounded & (speed > cfg.skate_speed)
        trans |= _pop_flags(clip, cfg, pos)
        ang = quat.angle_between(clip.joint_rotations[1:], clip.joint_rotations[:-1])
        trans |= (ang.max(axis=1) * clip.fps) > cfg.flip_speed
        flags[:-1] |= trans
        flags[1:] |= trans

    if n >= 3:
        acc = np.linalg.norm(np.diff(pos, n=2, axis=0), axis=-1).max(axis=1) * clip.fps**2
        high = acc > cfg.accel_limit
        flags[1:-1] |= high

    for _ in range(cfg.dilate):
        grown = flags.copy()
        grown[:-1] |= flags[1:]
        grown[1:] |= flags[:-1]
        flags = grown
    return flags.astype(float)


def evaluate_clip(clip: MotionClip, reference: MotionClip | None = None,
                  predicted_mask: np.ndarray | None = None,
                  annotated_mask: np.ndarray | None = None,
                  cfg: DetectorConfig | None = None) -> MetricReport:
    """Full metric report for one clip (reference-based fields optional)."""
    cfg = cfg or DetectorConfig()
    pos = forward_kinematics(clip)
    report = MetricReport(
        fs_dist=fs_dist(clip, pos) * 100.0,
        fs_rate=fs_rate(clip, pos),
        fp_dist=fp_dist(clip, pos),
        jitter=jitter(clip, pos) / 1000.0,
        frozen_rate=frozen_rate(clip, cfg, pos),
        pops_rate=pops_rate(clip, cfg, pos),
    )
    if reference is not None:
        report.accel = accel_error(clip, reference)
        report.gmpjpe = gmpjpe(clip, reference)
    if predicted_mask is not None and annotated_mask is not None:
        report.r_at_haa = r_at_haa(predicted_mask, annotated_mask)
    return report


def aggregate_reports(reports: list[MetricReport]) -> dict:
    """Mean of every populated field across clip reports."""
    if not reports:
        return {}
    out = {}
    for key in MetricReport.__dataclass_fields__:
        vals = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        out[key] = float(np.mean(vals)) if vals else None
    return out
