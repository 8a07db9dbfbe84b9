"""Skeleton and motion clip data model with forward kinematics.

Conventions: meters, seconds, +Y up, +X forward after canonicalization.
Quaternions are (w, x, y, z) unit norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quat

QUAT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class Skeleton:
    """Joint tree with rest offsets (parent-relative, meters).

    The root joint's offset is ignored by forward kinematics; world
    placement comes from the clip's root translation.
    """

    joint_names: tuple[str, ...]
    parent_index: np.ndarray  # (J,) int, -1 for root
    offsets: np.ndarray  # (J, 3) float
    foot_joints: tuple[int, ...]
    root_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "parent_index", np.asarray(self.parent_index, dtype=int))
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=float))
        object.__setattr__(self, "foot_joints", tuple(int(j) for j in self.foot_joints))
        j = len(self.joint_names)
        if self.parent_index.shape != (j,) or self.offsets.shape != (j, 3):
            raise ValueError("parent_index/offsets shapes do not match joint count")
        if not np.all(np.isfinite(self.offsets)):
            raise ValueError("skeleton offsets must be finite")
        if self.parent_index[self.root_index] != -1:
            raise ValueError("root joint must have parent -1")
        if not self.foot_joints:
            raise ValueError("foot_joints must be nonempty")
        if any(f < 0 or f >= j for f in self.foot_joints):
            raise ValueError("foot_joints out of range")
        self._check_tree()

    def _check_tree(self):
        j = self.num_joints
        seen_root = 0
        for i, p in enumerate(self.parent_index):
            if p == -1:
                seen_root += 1
                if i != self.root_index:
                    raise ValueError("parentless joint that is not the root")
            elif not (0 <= p < j):
                raise ValueError(f"parent index {p} out of range for joint {i}")
        if seen_root != 1:
            raise ValueError("skeleton must have exactly one root")
        # every joint must reach the root without cycles
        for i in range(j):
            hops, cur = 0, i
            while cur != self.root_index:
                cur = int(self.parent_index[cur])
                hops += 1
                if hops > j:
                    raise ValueError("parent_index contains a cycle")

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    def topological_order(self) -> list[int]:
        """Joint indices with every parent before its children."""
        order, placed = [], set()
        pending = list(range(self.num_joints))
        while pending:
            rest = []
            for i in pending:
                p = int(self.parent_index[i])
                if p == -1 or p in placed:
                    order.append(i)
                    placed.add(i)
                else:
                    rest.append(i)
            pending = rest
        return order

    def foot_pairs(self) -> list[tuple[int, int]]:
        """(ankle, toe) pairs: flagged foot joints whose parent is also flagged."""
        flagged = set(self.foot_joints)
        pairs = [(int(self.parent_index[j]), j) for j in self.foot_joints
                 if int(self.parent_index[j]) in flagged]
        return pairs if pairs else [(j, j) for j in self.foot_joints]

    def fingerprint(self) -> str:
        """Stable hash of structure; used to guard checkpoint/skeleton mismatch."""
        import hashlib

        blob = repr((self.joint_names, self.parent_index.tolist(),
                     np.round(self.offsets, 9).tolist(),
                     self.foot_joints, self.root_index)).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class MotionClip:
    """A skeletal motion clip: root trajectory + per-joint local rotations.

    quality is an optional per-frame corruption indicator, 1 = corrupted,
    0 = clean; fractional values are allowed for soft labels.
    """

    skeleton: Skeleton
    fps: float
    root_translation: np.ndarray  # (N, 3)
    joint_rotations: np.ndarray  # (N, J, 4) unit quaternions (w, x, y, z)
    quality: np.ndarray | None = None  # (N,) in [0, 1]

    def __post_init__(self):
        self.root_translation = np.asarray(self.root_translation, dtype=float)
        self.joint_rotations = np.asarray(self.joint_rotations, dtype=float)
        if self.quality is not None:
            self.quality = np.asarray(self.quality, dtype=float)
        self.validate()

    def validate(self):
        n = self.num_frames
        j = self.skeleton.num_joints
        if n < 1:
            raise ValueError("clip must have at least one frame")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.root_translation.shape != (n, 3):
            raise ValueError("root_translation must be (N, 3)")
        if self.joint_rotations.shape != (n, j, 4):
            raise ValueError("joint_rotations must be (N, J, 4)")
        norms = np.linalg.norm(self.joint_rotations, axis=-1)
        if not np.allclose(norms, 1.0, atol=QUAT_NORM_TOL):
            worst = float(np.abs(norms - 1.0).max())
            raise ValueError(f"joint rotations must be unit quaternions (max |norm-1| = {worst:.2e})")
        if self.quality is not None and self.quality.shape != (n,):
            raise ValueError("quality must be per-frame (N,)")

    @property
    def num_frames(self) -> int:
        return self.root_translation.shape[0]

    def copy(self) -> "MotionClip":
        return MotionClip(
            skeleton=self.skeleton,
            fps=self.fps,
            root_translation=self.root_translation.copy(),
            joint_rotations=self.joint_rotations.copy(),
            quality=None if self.quality is None else self.quality.copy(),
        )

    def slice(self, start: int, stop: int) -> "MotionClip":
        return MotionClip(
            skeleton=self.skeleton,
            fps=self.fps,
            root_translation=self.root_translation[start:stop].copy(),
            joint_rotations=self.joint_rotations[start:stop].copy(),
            quality=None if self.quality is None else self.quality[start:stop].copy(),
        )


def forward_kinematics(clip: MotionClip) -> np.ndarray:
    """Global joint positions, shape (N, J, 3), world frame, meters."""
    skel = clip.skeleton
    n, j = clip.num_frames, skel.num_joints
    pos = np.empty((n, j, 3))
    rot = np.empty((n, j, 4))
    for i in skel.topological_order():
        p = int(skel.parent_index[i])
        if p == -1:
            pos[:, i] = clip.root_translation
            rot[:, i] = clip.joint_rotations[:, i]
        else:
            pos[:, i] = pos[:, p] + quat.rotate(rot[:, p], skel.offsets[i])
            rot[:, i] = quat.multiply(rot[:, p], clip.joint_rotations[:, i])
    return pos


def global_rotations(clip: MotionClip) -> np.ndarray:
    """Global (world) joint rotations, shape (N, J, 4)."""
    skel = clip.skeleton
    n, j = clip.num_frames, skel.num_joints
    rot = np.empty((n, j, 4))
    for i in skel.topological_order():
        p = int(skel.parent_index[i])
        if p == -1:
            rot[:, i] = clip.joint_rotations[:, i]
        else:
            rot[:, i] = quat.multiply(rot[:, p], clip.joint_rotations[:, i])
    return rot


# 11-joint desk-scale biped. Leg segments 0.40 + 0.40 m, ankle rest height
# 0.05 m, toes on the ground when standing with the root at y = 0.82.
_TOY_JOINTS = [
    # name, parent, offset
    ("root", -1, (0.0, 0.0, 0.0)),
    ("spine", 0, (0.0, 0.25, 0.0)),
    ("head", 1, (0.0, 0.40, 0.0)),
    ("hip_l", 0, (0.0, -0.05, 0.11)),
    ("knee_l", 3, (0.0, -0.40, 0.0)),
    ("foot_l", 4, (0.0, -0.40, 0.0)),
    ("toe_l", 5, (0.14, -0.05, 0.0)),
    ("hip_r", 0, (0.0, -0.05, -0.11)),
    ("knee_r", 7, (0.0, -0.40, 0.0)),
    ("foot_r", 8, (0.0, -0.40, 0.0)),
    ("toe_r", 9, (0.14, -0.05, 0.0)),
]


def toy_skeleton() -> Skeleton:
    """The default 11-joint biped used by the synthetic corpus."""
    names = tuple(j[0] for j in _TOY_JOINTS)
    parents = np.array([j[1] for j in _TOY_JOINTS])
    offsets = np.array([j[2] for j in _TOY_JOINTS])
    feet = tuple(names.index(n) for n in ("foot_l", "toe_l", "foot_r", "toe_r"))
    return Skeleton(joint_names=names, parent_index=parents, offsets=offsets,
                    foot_joints=feet)


def identity_pose(skeleton: Skeleton, n_frames: int, root_height: float = 0.82,
                  fps: float = 20.0) -> MotionClip:
    """Static clip in the rest pose; handy for tests and fixtures."""
    j = skeleton.num_joints
    rot = np.zeros((n_frames, j, 4))
    rot[..., 0] = 1.0
    trans = np.zeros((n_frames, 3))
    trans[:, 1] = root_height
    return MotionClip(skeleton=skeleton, fps=fps, root_translation=trans,
                      joint_rotations=rot)
