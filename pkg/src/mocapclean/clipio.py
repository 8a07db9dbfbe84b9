"""Clip serialization: the portable JSON clip format and BVH import/export.

The JSON document is the canonical on-disk format for every pipeline
stage: {"skeleton": {...}, "fps": ..., "frames": [{"root": [x,y,z],
"rotations": [[w,x,y,z], ...], "quality": 0|1}, ...]}.

BVH support covers the common channel sets (6-channel root with
position + rotation, 3-rotation joints); the Euler order is taken from
each joint's channel list and preserved on export.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .skeleton import MotionClip, Skeleton


class ClipFormatError(ValueError):
    """Raised when an on-disk clip cannot be parsed."""


def clip_to_dict(clip: MotionClip) -> dict:
    skel = clip.skeleton
    frames = []
    for f in range(clip.num_frames):
        frame = {
            "root": clip.root_translation[f].tolist(),
            "rotations": clip.joint_rotations[f].tolist(),
        }
        if clip.quality is not None:
            frame["quality"] = float(clip.quality[f])
        frames.append(frame)
    return {
        "skeleton": {
            "names": list(skel.joint_names),
            "parents": skel.parent_index.tolist(),
            "offsets": skel.offsets.tolist(),
            "foot_joints": list(skel.foot_joints),
        },
        "fps": clip.fps,
        "frames": frames,
    }


def clip_from_dict(doc: dict) -> MotionClip:
    try:
        sk = doc["skeleton"]
        skeleton = Skeleton(
            joint_names=tuple(sk["names"]),
            parent_index=np.array(sk["parents"]),
            offsets=np.array(sk["offsets"]),
            foot_joints=tuple(sk["foot_joints"]),
        )
        frames = doc["frames"]
        root = np.array([f["root"] for f in frames], dtype=float)
        rots = np.array([f["rotations"] for f in frames], dtype=float)
        quality = None
        if frames and "quality" in frames[0]:
            quality = np.array([f.get("quality", 0.0) for f in frames], dtype=float)
        return MotionClip(skeleton=skeleton, fps=float(doc["fps"]),
                          root_translation=root, joint_rotations=rots,
                          quality=quality)
    except (KeyError, TypeError, IndexError) as exc:
        raise ClipFormatError(f"malformed clip document: {exc}") from exc


def save_clip(clip: MotionClip, path: str | Path):
    Path(path).write_text(json.dumps(clip_to_dict(clip)))


def load_clip(path: str | Path) -> MotionClip:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ClipFormatError(f"{path}: not valid JSON: {exc}") from exc
    return clip_from_dict(doc)


def load_clip_dir(path: str | Path) -> list[tuple[str, MotionClip]]:
    """Load every *.json clip in a directory, sorted by name."""
    files = sorted(Path(path).glob("*.json"))
    files = [f for f in files if f.name != "manifest.json"]
    if not files:
        raise ClipFormatError(f"no clip files found in {path}")
    return [(f.stem, load_clip(f)) for f in files]


# --- BVH ---

_ROT_CHANNELS = {"Xrotation": "X", "Yrotation": "Y", "Zrotation": "Z"}
_POS_CHANNELS = {"Xposition": 0, "Yposition": 1, "Zposition": 2}


class BvhError(ClipFormatError):
    pass


def _tokenize(text: str):
    for line in text.splitlines():
        line = line.strip()
        if line:
            yield line.split()


def load_bvh(path: str | Path, scale: float = 1.0) -> MotionClip:
    """Parse a BVH file into a MotionClip.

    scale multiplies offsets and positions (use 0.01 for centimeter
    files). Joints must carry three rotation channels, optionally
    preceded by three position channels; anything else is rejected.
    Non-root position channels are read but discarded.
    """
    tokens = list(_tokenize(Path(path).read_text()))
    it = iter(tokens)

    names: list[str] = []
    parents: list[int] = []
    offsets: list[list[float]] = []
    channels: list[list[str]] = []  # per joint, raw channel names

    def expect(tok, what):
        if tok[0] != what:
            raise BvhError(f"expected {what}, got {' '.join(tok)}")

    try:
        expect(next(it), "HIERARCHY")
        stack: list[int] = []
        tok = next(it)
        expect(tok, "ROOT")
        pending_name = tok[1]
        while True:
            tok = next(it)
            kw = tok[0]
            if kw == "{":
                names.append(pending_name)
                parents.append(stack[-1] if stack else -1)
                offsets.append([0.0, 0.0, 0.0])
                channels.append([])
                stack.append(len(names) - 1)
            elif kw == "OFFSET":
                offsets[stack[-1]] = [float(v) * scale for v in tok[1:4]]
            elif kw == "CHANNELS":
                channels[stack[-1]] = tok[2:2 + int(tok[1])]
            elif kw == "JOINT":
                pending_name = tok[1]
            elif kw == "End":
                # consume "{ OFFSET ... }" of the end site
                expect(next(it), "{")
                end_tok = next(it)
                expect(end_tok, "OFFSET")
                expect(next(it), "}")
            elif kw == "}":
                stack.pop()
                if not stack:
                    break
            else:
                raise BvhError(f"unexpected token {kw!r} in hierarchy")
        tok = next(it)
        expect(tok, "MOTION")
        tok = next(it)
        expect(tok, "Frames:")
        n_frames = int(tok[1])
        tok = next(it)
        if tok[0] != "Frame" or tok[1] != "Time:":
            raise BvhError("expected Frame Time")
        frame_time = float(tok[2])
        rows = [next(it) for _ in range(n_frames)]
    except StopIteration:
        raise BvhError("truncated BVH file") from None

    j = len(names)
    # validate channel sets and compute per-joint column slices
    col = 0
    pos_cols: dict[int, dict[int, int]] = {}
    rot_cols: list[tuple[int, str]] = []
    for i in range(j):
        ch = channels[i]
        rot = [c for c in ch if c in _ROT_CHANNELS]
        pos = [c for c in ch if c in _POS_CHANNELS]
        if len(rot) != 3 or len(rot) + len(pos) != len(ch) or len(pos) not in (0, 3):
            raise BvhError(f"unsupported channel set {ch} on joint {names[i]}")
        if ch != pos + rot:
            raise BvhError(f"interleaved channels {ch} on joint {names[i]} not supported")
        if pos:
            pos_cols[i] = {_POS_CHANNELS[c]: col + k for k, c in enumerate(pos)}
            col += 3
        order = "".join(_ROT_CHANNELS[c] for c in rot)
        rot_cols.append((col, order))
        col += 3

    data = np.array([[float(v) for v in row] for row in rows], dtype=float)
    if data.shape != (n_frames, col):
        raise BvhError(f"expected {col} values per frame, got {data.shape[1]}")

    if 0 not in pos_cols:
        raise BvhError("root joint must carry position channels")
    root_cols = pos_cols[0]
    trans = np.stack([data[:, root_cols[axis]] for axis in range(3)], axis=1) * scale

    rotations = np.empty((n_frames, j, 4))
    for i, (c0, order) in enumerate(rot_cols):
        r = Rotation.from_euler(order, data[:, c0:c0 + 3], degrees=True)
        rotations[:, i] = r.as_quat(scalar_first=True)

    lowered = [n.lower() for n in names]
    feet = tuple(i for i, n in enumerate(lowered) if "foot" in n or "toe" in n or "ankle" in n)
    if not feet:
        children = set(parents) - {-1}
        feet = tuple(i for i in range(j) if i not in children)  # leaves

    skeleton = Skeleton(joint_names=tuple(names), parent_index=np.array(parents),
                        offsets=np.array(offsets), foot_joints=feet)
    clip = MotionClip(skeleton=skeleton, fps=1.0 / frame_time,
                      root_translation=trans, joint_rotations=rotations)
    clip._bvh_channels = channels  # preserved for round-trip export
    return clip


def save_bvh(clip: MotionClip, path: str | Path, scale: float = 1.0):
    """Write a clip as BVH, preserving import channel order when present."""
    skel = clip.skeleton
    j = skel.num_joints
    channels = getattr(clip, "_bvh_channels", None)
    if channels is None:
        channels = [["Zrotation", "Xrotation", "Yrotation"] for _ in range(j)]
        channels[skel.root_index] = ["Xposition", "Yposition", "Zposition",
                                     "Zrotation", "Xrotation", "Yrotation"]

    children: list[list[int]] = [[] for _ in range(j)]
    for i, p in enumerate(skel.parent_index):
        if p >= 0:
            children[p].append(i)

    lines: list[str] = ["HIERARCHY"]

    def emit(i: int, depth: int, keyword: str):
        pad = "  " * depth
        lines.append(f"{pad}{keyword} {skel.joint_names[i]}")
        lines.append(f"{pad}{{")
        ox, oy, oz = skel.offsets[i] / scale
        lines.append(f"{pad}  OFFSET {ox:.6f} {oy:.6f} {oz:.6f}")
        lines.append(f"{pad}  CHANNELS {len(channels[i])} " + " ".join(channels[i]))
        if children[i]:
            for c in children[i]:
                emit(c, depth + 1, "JOINT")
        else:
            lines.append(f"{pad}  End Site")
            lines.append(f"{pad}  {{")
            lines.append(f"{pad}    OFFSET 0.000000 0.000000 0.000000")
            lines.append(f"{pad}  }}")
        lines.append(f"{pad}}}")

    emit(skel.root_index, 0, "ROOT")
    lines.append("MOTION")
    lines.append(f"Frames: {clip.num_frames}")
    lines.append(f"Frame Time: {1.0 / clip.fps:.8f}")

    rows = []
    for f in range(clip.num_frames):
        vals: list[float] = []
        for i in range(j):
            pos = [c for c in channels[i] if c in _POS_CHANNELS]
            rot = [c for c in channels[i] if c in _ROT_CHANNELS]
            if pos:
                world = clip.root_translation[f] / scale if i == skel.root_index else skel.offsets[i] / scale
                vals.extend(world[_POS_CHANNELS[c]] for c in pos)
            order = "".join(_ROT_CHANNELS[c] for c in rot)
            r = Rotation.from_quat(clip.joint_rotations[f, i], scalar_first=True)
            vals.extend(r.as_euler(order, degrees=True))
        rows.append(" ".join(f"{v:.6f}" for v in vals))
    lines.extend(rows)
    Path(path).write_text("\n".join(lines) + "\n")
