"""Bidirectional codec between motion clips and per-frame feature rows.

Each frame becomes one row: global root translation (3), ground-projected
facing direction (2), per-joint local rotations in 6D (6J), root-relative
joint positions (3J), global foot positions (3 per foot), global foot
velocities (3 per foot), global root velocity (3), and a trailing quality
indicator column. "Global" blocks live in the canonical frame: the clip's
first-frame root is moved to the origin with its facing aligned to +X.

Decoding reads only the root translation, rotation, and quality blocks;
position/velocity blocks are derived (and recomputed on encode), which
keeps edits local and lets decoded clips be written straight back out.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import quat
from .skeleton import MotionClip, Skeleton, forward_kinematics

FORWARD = np.array([1.0, 0.0, 0.0])
UP = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class RigidTransform:
    """Yaw-and-translate map x -> R(x) + t; rotation is about +Y."""

    rotation: np.ndarray  # (4,) unit quaternion, yaw only
    translation: np.ndarray  # (3,)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(rotation=quat.IDENTITY.copy(), translation=np.zeros(3))

    def is_identity(self) -> bool:
        return (np.array_equal(self.rotation, quat.IDENTITY)
                and not np.any(self.translation))

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        return quat.rotate(self.rotation, points) + self.translation

    def apply_clip(self, clip: MotionClip) -> MotionClip:
        if self.is_identity():
            return clip.copy()
        rot = clip.joint_rotations.copy()
        root = clip.skeleton.root_index
        rot[:, root] = quat.normalize(
            quat.multiply(self.rotation[None], rot[:, root]))
        return MotionClip(
            skeleton=clip.skeleton,
            fps=clip.fps,
            root_translation=self.apply_points(clip.root_translation),
            joint_rotations=rot,
            quality=None if clip.quality is None else clip.quality.copy(),
        )

    def inverse(self) -> "RigidTransform":
        inv_rot = quat.conjugate(self.rotation)
        return RigidTransform(rotation=inv_rot,
                              translation=-quat.rotate(inv_rot, self.translation))


def canonicalize(clip: MotionClip) -> tuple[MotionClip, RigidTransform]:
    """Move frame 0 ground position to origin, facing to +X.

    Returns the canonical clip plus the inverse transform mapping it back
    to the original world placement. Exactly idempotent: a clip that is
    already canonical is returned unchanged with an identity transform.
    """
    root = clip.skeleton.root_index
    p0 = clip.root_translation[0]
    ground = np.array([p0[0], 0.0, p0[2]])

    forward0 = quat.rotate(clip.joint_rotations[0, root], FORWARD)
    planar = np.hypot(forward0[0], forward0[2])
    if planar < 1e-8:
        warnings.warn("degenerate facing direction (vertical forward axis); "
                      "canonicalizing with identity yaw")
        yaw = 0.0
    else:
        yaw = np.arctan2(forward0[2], forward0[0])
    if abs(yaw) < 1e-12:
        yaw = 0.0

    if yaw == 0.0 and not np.any(ground):
        return clip.copy(), RigidTransform.identity()

    # rotate by -yaw about +Y so the projected forward lands on +X
    q_yaw = quat.from_axis_angle(UP, -yaw)
    canonical = RigidTransform(rotation=q_yaw, translation=np.zeros(3)).apply_clip(
        MotionClip(
            skeleton=clip.skeleton,
            fps=clip.fps,
            root_translation=clip.root_translation - ground,
            joint_rotations=clip.joint_rotations,
            quality=clip.quality,
        ))
    inverse = RigidTransform(rotation=quat.conjugate(q_yaw), translation=ground)
    return canonical, inverse


@dataclass(frozen=True)
class FeatureLayout:
    """Contiguous named blocks covering a feature row of width F+1."""

    blocks: tuple[tuple[str, int, int], ...]  # (name, offset, width)

    def __post_init__(self):
        expected = 0
        for name, offset, width in self.blocks:
            if offset != expected or width <= 0:
                raise ValueError(f"blocks must be contiguous; bad block {name!r}")
            expected = offset + width
        names = [b[0] for b in self.blocks]
        if len(set(names)) != len(names):
            raise ValueError("duplicate block names")

    @property
    def total_width(self) -> int:
        last = self.blocks[-1]
        return last[1] + last[2]

    def has_block(self, name: str) -> bool:
        return any(b[0] == name for b in self.blocks)

    def sl(self, name: str) -> slice:
        for bname, offset, width in self.blocks:
            if bname == name:
                return slice(offset, offset + width)
        raise KeyError(f"no feature block named {name!r}")

    def to_dict(self) -> dict:
        return {"blocks": [list(b) for b in self.blocks]}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureLayout":
        return cls(blocks=tuple(tuple(b) for b in d["blocks"]))

    @classmethod
    def for_skeleton(cls, skeleton: Skeleton, include_quality: bool = True) -> "FeatureLayout":
        j = skeleton.num_joints
        nf = len(skeleton.foot_joints)
        widths = [
            ("root_pos", 3),
            ("facing", 2),
            ("joint_rot", 6 * j),
            ("joint_pos", 3 * j),
            ("foot_pos", 3 * nf),
            ("foot_vel", 3 * nf),
            ("root_vel", 3),
        ]
        if include_quality:
            widths.append(("quality", 1))
        blocks, offset = [], 0
        for name, width in widths:
            blocks.append((name, offset, width))
            offset += width
        return cls(blocks=tuple(blocks))


@dataclass
class FeatureSequence:
    """N x (F+1) feature matrix plus its layout; one row per frame."""

    data: np.ndarray
    layout: FeatureLayout
    fps: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[1] != self.layout.total_width:
            raise ValueError("feature data width does not match layout")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    def block(self, name: str) -> np.ndarray:
        return self.data[:, self.layout.sl(name)]


def _velocities(x: np.ndarray, fps: float) -> np.ndarray:
    """One-sided differences * fps; frame 0 copies frame 1."""
    if x.shape[0] < 2:
        warnings.warn("single-frame clip: velocities set to zero")
        return np.zeros_like(x)
    v = np.empty_like(x)
    v[1:] = (x[1:] - x[:-1]) * fps
    v[0] = v[1]
    return v


def encode_features(clip: MotionClip) -> FeatureSequence:
    """Encode a canonicalized clip into per-frame feature rows."""
    skel = clip.skeleton
    layout = FeatureLayout.for_skeleton(skel)
    n = clip.num_frames
    out = np.zeros((n, layout.total_width))

    positions = forward_kinematics(clip)
    root = skel.root_index

    out[:, layout.sl("root_pos")] = clip.root_translation

    forward = quat.rotate(clip.joint_rotations[:, root], FORWARD)
    planar = np.stack([forward[:, 0], forward[:, 2]], axis=1)
    norms = np.linalg.norm(planar, axis=1, keepdims=True)
    planar = np.where(norms < 1e-8, np.array([1.0, 0.0]), planar / np.maximum(norms, 1e-8))
    out[:, layout.sl("facing")] = planar

    out[:, layout.sl("joint_rot")] = quat.to_rot6d(clip.joint_rotations).reshape(n, -1)
    rel = positions - positions[:, root:root + 1]
    out[:, layout.sl("joint_pos")] = rel.reshape(n, -1)

    feet = list(skel.foot_joints)
    foot_pos = positions[:, feet].reshape(n, -1)
    out[:, layout.sl("foot_pos")] = foot_pos
    out[:, layout.sl("foot_vel")] = _velocities(foot_pos, clip.fps)
    out[:, layout.sl("root_vel")] = _velocities(clip.root_translation, clip.fps)

    if clip.quality is not None:
        out[:, layout.sl("quality")] = clip.quality[:, None]
    return FeatureSequence(data=out, layout=layout, fps=clip.fps)


def decode_features(fs: FeatureSequence, skeleton: Skeleton) -> MotionClip:
    """Rebuild a clip from the primary channels (root + rotations + quality).

    Redundant blocks (positions, velocities) are ignored. Raises ValueError
    on non-finite values or degenerate 6D rotations, naming the offending
    frame and block.
    """
    expected = FeatureLayout.for_skeleton(skeleton, include_quality=fs.layout.has_block("quality"))
    if expected.blocks != fs.layout.blocks:
        raise ValueError("feature layout does not match skeleton")
    n = fs.num_frames
    j = skeleton.num_joints

    for name in ("root_pos", "joint_rot"):
        block = fs.block(name)
        if not np.all(np.isfinite(block)):
            frame = int(np.argwhere(~np.isfinite(block))[0][0])
            raise ValueError(f"non-finite value in block {name!r} at frame {frame}")

    r6 = fs.block("joint_rot").reshape(n, j, 6)
    try:
        rotations = quat.from_rot6d(r6)
    except ValueError:
        rotations = np.empty((n, j, 4))
        for f in range(n):
            for ji in range(j):
                try:
                    rotations[f, ji] = quat.from_rot6d(r6[f, ji])
                except ValueError as exc:
                    raise ValueError(
                        f"degenerate 6D rotation at frame {f}, joint {ji}: {exc}") from exc

    quality = None
    if fs.layout.has_block("quality"):
        quality = np.clip(fs.block("quality")[:, 0], 0.0, 1.0)

    return MotionClip(
        skeleton=skeleton,
        fps=fs.fps,
        root_translation=fs.block("root_pos").copy(),
        joint_rotations=rotations,
        quality=quality,
    )
