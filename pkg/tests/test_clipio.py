import numpy as np
import pytest

from mocapclean.clipio import (BvhError, ClipFormatError, clip_from_dict,
                               clip_to_dict, load_bvh, load_clip,
                               load_clip_dir, save_bvh, save_clip)
from mocapclean.gait import GaitParams, generate_toy_gait
from mocapclean.skeleton import forward_kinematics


def test_json_round_trip(tmp_path):
    clip = generate_toy_gait(GaitParams(duration=1.0), seed=0)
    path = tmp_path / "clip.json"
    save_clip(clip, path)
    back = load_clip(path)
    assert back.fps == clip.fps
    assert np.allclose(back.root_translation, clip.root_translation)
    assert np.allclose(back.joint_rotations, clip.joint_rotations)
    assert np.allclose(back.quality, clip.quality)
    assert back.skeleton.joint_names == clip.skeleton.joint_names
    assert back.skeleton.foot_joints == clip.skeleton.foot_joints


def test_dict_round_trip_without_quality():
    clip = generate_toy_gait(GaitParams(duration=1.0), seed=1)
    clip.quality = None
    back = clip_from_dict(clip_to_dict(clip))
    assert back.quality is None


def test_load_clip_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ClipFormatError):
        load_clip(bad)
    bad.write_text('{"fps": 30}')
    with pytest.raises(ClipFormatError):
        load_clip(bad)


def test_load_clip_dir_sorted(tmp_path):
    for name in ("b", "a"):
        save_clip(generate_toy_gait(GaitParams(duration=0.5), seed=0), tmp_path / f"{name}.json")
    (tmp_path / "manifest.json").write_text("{}")
    clips = load_clip_dir(tmp_path)
    assert [n for n, _ in clips] == ["a", "b"]
    with pytest.raises(ClipFormatError):
        load_clip_dir(tmp_path / "empty")


SIMPLE_BVH = """HIERARCHY
ROOT hips
{
  OFFSET 0.0 0.0 0.0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT leg_foot
  {
    OFFSET 0.0 -0.5 0.0
    CHANNELS 3 Zrotation Xrotation Yrotation
    End Site
    {
      OFFSET 0.0 -0.1 0.0
    }
  }
}
MOTION
Frames: 2
Frame Time: 0.05
0.0 0.9 0.0 0.0 0.0 0.0 10.0 0.0 0.0
0.1 0.9 0.0 0.0 0.0 45.0 10.0 0.0 0.0
"""


def test_bvh_parse(tmp_path):
    path = tmp_path / "simple.bvh"
    path.write_text(SIMPLE_BVH)
    clip = load_bvh(path)
    assert clip.skeleton.joint_names == ("hips", "leg_foot")
    assert clip.num_frames == 2
    assert clip.fps == pytest.approx(20.0)
    assert np.allclose(clip.root_translation[1], [0.1, 0.9, 0.0])
    # foot joint picked up by name
    assert clip.skeleton.foot_joints == (1,)
    # 45 deg yaw on root in frame 1
    from mocapclean import quat

    fwd = quat.rotate(clip.joint_rotations[1, 0], np.array([1.0, 0.0, 0.0]))
    assert np.allclose(fwd, [np.cos(np.pi / 4), 0.0, -np.sin(np.pi / 4)], atol=1e-9)


def test_bvh_round_trip(tmp_path):
    path = tmp_path / "simple.bvh"
    path.write_text(SIMPLE_BVH)
    clip = load_bvh(path)
    out = tmp_path / "out.bvh"
    save_bvh(clip, out)
    again = load_bvh(out)
    assert np.allclose(again.root_translation, clip.root_translation, atol=1e-5)
    assert np.allclose(forward_kinematics(again), forward_kinematics(clip), atol=1e-5)
    # identical channel ordering preserved
    assert "CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation" in out.read_text()


def test_bvh_export_fresh_clip(tmp_path):
    clip = generate_toy_gait(GaitParams(duration=0.5), seed=3)
    out = tmp_path / "gait.bvh"
    save_bvh(clip, out)
    again = load_bvh(out)
    assert np.allclose(forward_kinematics(again), forward_kinematics(clip), atol=1e-4)


def test_bvh_rejects_unsupported_channels(tmp_path):
    bad = SIMPLE_BVH.replace("CHANNELS 3 Zrotation Xrotation Yrotation",
                             "CHANNELS 2 Zrotation Xrotation")
    bad = bad.replace("10.0 0.0 0.0", "10.0 0.0")
    path = tmp_path / "bad.bvh"
    path.write_text(bad)
    with pytest.raises(BvhError):
        load_bvh(path)


def test_bvh_truncated(tmp_path):
    path = tmp_path / "trunc.bvh"
    path.write_text(SIMPLE_BVH[: SIMPLE_BVH.index("MOTION")])
    with pytest.raises(BvhError):
        load_bvh(path)
