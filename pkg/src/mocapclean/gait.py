"""Procedural walking-gait generator for the desk-scale clean corpus.

Produces deterministic, artifact-free clips: the stance foot is pinned
via analytic two-bone leg IK, swing trajectories are C2-smooth, and the
commanded root velocity integrates exactly so displacement checks are
trivial. All motion stays in the sagittal plane (+X forward, +Y up).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import quat
from .skeleton import MotionClip, Skeleton, toy_skeleton

Z_AXIS = np.array([0.0, 0.0, 1.0])


@dataclass
class GaitParams:
    speed: float = 0.85  # m/s along +X; 0 = standing idle
    stride_period: float | None = None  # seconds per full stride; None = fit to reach
    duration: float = 5.0  # seconds
    fps: float = 20.0
    root_height: float = 0.78
    bob_amplitude: float = 0.008  # vertical root bob
    ankle_lift: float = 0.06  # swing ankle clearance
    toe_pitch: float = 0.22  # max swing dorsiflexion, radians
    stance_fraction: float = 0.55
    swing_travel: tuple[float, float] = (0.12, 0.88)  # swing-phase window with foot travel
    plant_jitter: float = 0.008  # per-step plant position noise, meters

    def validate(self):
        if self.speed < 0 or self.duration <= 0:
            raise ValueError("speed must be >= 0 and duration > 0")
        if self.stride_period is not None and self.stride_period <= 0:
            raise ValueError("stride_period must be positive")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if not 0.1 <= self.stance_fraction <= 0.9:
            raise ValueError("stance_fraction out of range")
        lo, hi = self.swing_travel
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError("swing_travel must satisfy 0 <= lo < hi <= 1")

    def resolved_stride_period(self, max_half_stride: float = 0.36) -> float:
        """Default stride period, capped so plants stay within leg reach."""
        if self.stride_period is not None:
            return self.stride_period
        if self.speed <= 0:
            return 0.85
        return min(0.85, 2.0 * max_half_stride / self.speed)


def _quintic(s: np.ndarray) -> np.ndarray:
    """C2 smoothstep: 0 -> 1 with zero velocity and acceleration at ends."""
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _bump(s: np.ndarray, rise: float = 0.3) -> np.ndarray:
    """C2 bump: quintic rise on [0, rise], hold 1, quintic fall on [1-rise, 1]."""
    return _quintic(s / rise) - _quintic((s - (1.0 - rise)) / rise)


def _two_bone_ik(hip: np.ndarray, target: np.ndarray, l1: float, l2: float) -> tuple[float, float]:
    """Sagittal-plane leg IK. Returns (hip angle, knee angle) about +Z.

    Angles are measured so that angle 0 points straight down; the knee
    bows forward (+X). Target is clamped into the reachable annulus.
    """
    d = target - hip
    if abs(d[2]) > 1e-9:
        raise ValueError("IK target must lie in the leg's sagittal plane")
    r = math.hypot(d[0], d[1])
    r = min(max(r, abs(l1 - l2) + 1e-4), l1 + l2 - 1e-4)
    theta = math.atan2(d[0], -d[1])
    alpha = math.acos((l1 * l1 + r * r - l2 * l2) / (2.0 * l1 * r))
    gamma = math.acos((l1 * l1 + l2 * l2 - r * r) / (2.0 * l1 * l2))
    return theta + alpha, gamma - math.pi


def generate_toy_gait(params: GaitParams | None = None, seed: int = 0,
                      skeleton: Skeleton | None = None) -> MotionClip:
    """Deterministic clean walking (or idle) clip on the toy skeleton."""
    p = params or GaitParams()
    p.validate()
    skel = skeleton or toy_skeleton()
    names = skel.joint_names
    for required in ("hip_l", "knee_l", "foot_l", "hip_r", "knee_r", "foot_r"):
        if required not in names:
            raise ValueError("gait generator requires the toy biped joint names")
    rng = np.random.default_rng(seed)

    n = max(2, int(round(p.duration * p.fps)))
    t = np.arange(n) / p.fps
    dims = {nm: i for i, nm in enumerate(names)}
    l1 = abs(skel.offsets[dims["knee_l"], 1])
    l2 = abs(skel.offsets[dims["foot_l"], 1])
    # rest the toes on the ground: ankle height = -toe vertical offset
    ankle_rest = -skel.offsets[dims["toe_l"], 1] if "toe_l" in dims else 0.05

    phase0 = rng.uniform(0.0, 1.0)
    bob_amp = p.bob_amplitude * rng.uniform(0.8, 1.2)
    bob_phase = rng.uniform(0.0, 2.0 * math.pi)
    stride_period = p.resolved_stride_period()

    trans = np.zeros((n, 3))
    if p.speed > 0.0:
        trans[:, 0] = p.speed * t
    else:
        # standing idle: slow fore-aft sway keeps the IK planar
        trans[:, 0] = 0.01 * rng.uniform(0.5, 1.0) * np.sin(2.0 * math.pi * 0.5 * t + bob_phase)
    trans[:, 1] = p.root_height + bob_amp * np.cos(4.0 * math.pi * t / stride_period + bob_phase)

    rot = np.zeros((n, skel.num_joints, 4))
    rot[..., 0] = 1.0

    stride_len = p.speed * stride_period
    swing_frac = 1.0 - p.stance_fraction

    for side, leg_phase in (("l", 0.0), ("r", 0.5)):
        hip_i = dims[f"hip_{side}"]
        knee_i = dims[f"knee_{side}"]
        foot_i = dims[f"foot_{side}"]
        hip_off = skel.offsets[hip_i]
        side_z = hip_off[2]

        cycles = t / stride_period + phase0 + leg_phase
        k = np.floor(cycles)
        u = cycles - k

        if p.speed > 0.0:
            ks = np.arange(int(k.min()) - 1, int(k.max()) + 3)
            jitter = {int(c): rng.normal(0.0, p.plant_jitter) for c in ks}
            base = (np.vectorize(lambda c: jitter[int(c)])(k)
                    if p.plant_jitter > 0 else np.zeros(n))
            base_next = (np.vectorize(lambda c: jitter[int(c) + 1])(k)
                         if p.plant_jitter > 0 else np.zeros(n))
            plant = (k + 0.5 * p.stance_fraction - phase0 - leg_phase) * stride_len + base
            plant_next = plant - base + stride_len + base_next
        else:
            plant = np.zeros(n)
            plant_next = np.zeros(n)

        swing = (u >= p.stance_fraction) if p.speed > 0.0 else np.zeros(n, dtype=bool)
        s = np.where(swing, (u - p.stance_fraction) / swing_frac, 0.0)
        lo, hi = p.swing_travel
        travel = _quintic((s - lo) / (hi - lo))  # foot moves only mid-swing
        ank_x = np.where(swing, plant + travel * (plant_next - plant), plant)
        ank_y = ankle_rest + np.where(swing, p.ankle_lift * _bump(s, rise=0.25), 0.0)
        # dorsiflex only while airborne so the grounded toe never shifts
        pitch = np.where(swing, p.toe_pitch * _bump((s - 0.2) / 0.6, rise=0.45), 0.0)

        hip_world = trans + quat.rotate(rot[:, 0], hip_off)
        for f in range(n):
            target = np.array([ank_x[f], ank_y[f], hip_world[f, 2]])
            th_hip, th_knee = _two_bone_ik(hip_world[f], target, l1, l2)
            rot[f, hip_i] = quat.from_axis_angle(Z_AXIS, th_hip)
            rot[f, knee_i] = quat.from_axis_angle(Z_AXIS, th_knee)
            # level the foot, then add swing dorsiflexion
            rot[f, foot_i] = quat.from_axis_angle(Z_AXIS, -(th_hip + th_knee) + pitch[f])

    quality = np.zeros(n)
    return MotionClip(skeleton=skel, fps=p.fps, root_translation=trans,
                      joint_rotations=rot, quality=quality)


# walking speeds that keep the clean corpus inside the heuristic-detector
# envelope (see DetectorConfig); ~1 clip in 10 is standing idle
CORPUS_SPEED_RANGE = (0.55, 0.9)
CORPUS_IDLE_FRACTION = 0.1


def generate_corpus(n_clips: int, seed: int = 0, duration: float = 5.0,
                    fps: float = 20.0) -> list[tuple[str, MotionClip]]:
    """Deterministic clean corpus: varied walking speeds plus some idling."""
    rng = np.random.default_rng(seed)
    clips = []
    for i in range(n_clips):
        if rng.random() < CORPUS_IDLE_FRACTION:
            speed = 0.0
        else:
            speed = float(rng.uniform(*CORPUS_SPEED_RANGE))
        params = GaitParams(speed=speed, duration=duration, fps=fps)
        clips.append((f"clip{i:04d}", generate_toy_gait(params, seed=int(rng.integers(1 << 31)))))
    return clips
