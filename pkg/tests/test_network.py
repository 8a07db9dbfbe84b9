import numpy as np
import pytest
import torch

from mocapclean.diffusion import DiffusionSchedule, q_sample
from mocapclean.features import FeatureLayout
from mocapclean.network import (Checkpoint, InpaintMask, ModelConfig,
                                MotionDenoiser, build_condition,
                                load_checkpoint, rope_rotate, save_checkpoint)
from mocapclean.skeleton import toy_skeleton


def tiny_config(**kw):
    base = dict(layers=2, heads=2, model_width=16, feedforward_width=32,
                max_frames=8, feature_width=6, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def eval_mask(n):
    return InpaintMask(motion=np.ones(n), quality=np.zeros(n))


def gen_mask(n, hidden):
    motion = np.ones(n)
    motion[hidden] = 0
    return InpaintMask(motion=motion, quality=np.ones(n))


def randomize(model, seed=0):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.randn(p.shape, generator=gen) * 0.05)
    return model


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_config(model_width=15)
    with pytest.raises(ValueError):
        tiny_config(max_frames=1)
    with pytest.raises(ValueError):
        tiny_config(position_mode="learned")


def test_mask_modes():
    assert eval_mask(5).mode == "evaluation"
    assert gen_mask(5, [2, 3]).mode == "generation"
    with pytest.raises(ValueError):
        InpaintMask(motion=np.zeros(4), quality=np.zeros(4)).mode
    # quality-free models are always in generation mode
    assert InpaintMask(motion=np.zeros(4), quality=None).mode == "generation"


def test_output_shape_and_finite():
    cfg = tiny_config()
    model = MotionDenoiser(cfg)
    x = torch.randn(3, 5, cfg.feature_width)
    cond = build_condition(x, eval_mask(5), has_quality=True)
    out = model(x, torch.tensor([1, 4, 7]), cond)
    assert out.shape == x.shape
    assert torch.isfinite(out).all()


def test_rejects_too_long_sequences():
    cfg = tiny_config(max_frames=4)
    model = MotionDenoiser(cfg)
    x = torch.randn(1, 5, cfg.feature_width)
    cond = build_condition(x, eval_mask(5), has_quality=True)
    with pytest.raises(ValueError, match="max_frames"):
        model(x, torch.tensor([1]), cond)


def test_mode_class_changes_output():
    cfg = tiny_config()
    model = randomize(MotionDenoiser(cfg), seed=1)
    n = 6
    x = torch.randn(1, n, cfg.feature_width)
    cond_gen = build_condition(x, gen_mask(n, [1, 2]), has_quality=True)
    cond_same = dict(cond_gen)
    cond_same["mode"] = torch.tensor([1])  # flip to evaluation id only
    with torch.no_grad():
        out_a = model(x, torch.tensor([3]), cond_gen)
        out_b = model(x, torch.tensor([3]), cond_same)
    assert not torch.allclose(out_a, out_b)


def test_inference_deterministic():
    cfg = tiny_config()
    model = randomize(MotionDenoiser(cfg), seed=2).eval()
    x = torch.randn(2, 6, cfg.feature_width)
    cond = build_condition(x, eval_mask(6), has_quality=True)
    with torch.no_grad():
        a = model(x, torch.tensor([5, 5]), cond)
        b = model(x, torch.tensor([5, 5]), cond)
    assert torch.equal(a, b)


# --- RoPE properties ---

def test_rope_position_zero_identity():
    x = torch.randn(2, 3, 5, 8, dtype=torch.float64)
    out = rope_rotate(x, torch.zeros(5))
    assert torch.allclose(out, x, atol=1e-12)


def test_rope_norm_preserved():
    x = torch.randn(4, 7, 16, dtype=torch.float64)
    out = rope_rotate(x, torch.arange(7) * 3.0)
    assert torch.allclose(out.norm(dim=-1), x.norm(dim=-1), atol=1e-12)


def test_rope_inner_product_depends_on_relative_position():
    d = 16
    gen = torch.Generator().manual_seed(3)
    q = torch.randn(d, generator=gen, dtype=torch.float64)
    k = torch.randn(d, generator=gen, dtype=torch.float64)

    def dot(p1, p2):
        rq = rope_rotate(q[None], torch.tensor([float(p1)]))[0]
        rk = rope_rotate(k[None], torch.tensor([float(p2)]))[0]
        return float(rq @ rk)

    base = dot(3, 7)
    for shift in (1, 17, 100):
        assert dot(3 + shift, 7 + shift) == pytest.approx(base, abs=1e-10)
    assert dot(3, 8) != pytest.approx(base, abs=1e-6)


def test_rope_concat_attention_logits_shift_invariant():
    """Criterion: rotated-half logits drift < 1e-5 under a +17 position shift."""
    d = 32
    gen = torch.Generator().manual_seed(4)
    q = torch.randn(1, 10, d, generator=gen, dtype=torch.float64)
    k = torch.randn(1, 10, d, generator=gen, dtype=torch.float64)
    pos = torch.arange(10, dtype=torch.float64)

    def logits(positions):
        rq = torch.cat([q, rope_rotate(q, positions)], dim=-1)
        rk = torch.cat([k, rope_rotate(k, positions)], dim=-1)
        return torch.einsum("bqd,bkd->bqk", rq, rk) / np.sqrt(2 * d)

    drift = (logits(pos + 17.0) - logits(pos)).abs().max()
    assert drift < 1e-5


def test_gradient_matches_finite_differences():
    """Criterion: loss gradient vs central differences, 2 frames width 8."""
    cfg = ModelConfig(layers=1, heads=2, model_width=8, feedforward_width=16,
                      max_frames=2, feature_width=8, dropout=0.0)
    model = randomize(MotionDenoiser(cfg), seed=5).double()
    sched = DiffusionSchedule.cosine(16)
    gen = torch.Generator().manual_seed(6)
    x0 = torch.randn(1, 2, 8, generator=gen, dtype=torch.float64)
    noise = torch.randn(1, 2, 8, generator=gen, dtype=torch.float64)
    mask = torch.ones_like(x0)
    cond = build_condition(x0, eval_mask(2), has_quality=True)
    t = torch.tensor([9])

    def loss_value():
        x_t = q_sample(x0, t, noise, sched)
        pred = model(x_t, t, cond)
        return ((x0 - pred) ** 2 * mask).sum() / mask.sum()

    loss = loss_value()
    loss.backward()

    rng = np.random.default_rng(7)
    checked = 0
    for p in model.parameters():
        if p.grad is None:
            continue
        flat = p.detach().view(-1)
        gflat = p.grad.view(-1)
        for _ in range(3):
            i = int(rng.integers(flat.numel()))
            eps = 1e-5
            with torch.no_grad():
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_value().item()
                flat[i] = orig - eps
                down = loss_value().item()
                flat[i] = orig
            fd = (up - down) / (2 * eps)
            an = gflat[i].item()
            if abs(fd) < 1e-10 and abs(an) < 1e-10:
                continue
            assert an == pytest.approx(fd, rel=1e-3, abs=1e-8)
            checked += 1
    assert checked > 10


def test_absolute_position_variant_runs():
    cfg = tiny_config(position_mode="absolute")
    model = randomize(MotionDenoiser(cfg), seed=8)
    x = torch.randn(1, 6, cfg.feature_width)
    cond = build_condition(x, eval_mask(6), has_quality=True)
    out = model(x, torch.tensor([2]), cond)
    assert out.shape == x.shape
    # absolute embeddings break shift equivariance: swapping frames changes output
    perm = torch.tensor([1, 0, 2, 3, 4, 5])
    cond_p = build_condition(x[:, perm], eval_mask(6), has_quality=True)
    out_p = model(x[:, perm], torch.tensor([2]), cond_p)
    assert not torch.allclose(out_p[:, perm], out, atol=1e-7)


def test_padding_mask_blocks_attention():
    cfg = tiny_config()
    model = randomize(MotionDenoiser(cfg), seed=9).eval()
    n = 6
    x = torch.randn(1, n, cfg.feature_width)
    cond = build_condition(x, eval_mask(n), has_quality=True)
    cond["padding"] = torch.tensor([[True, True, True, True, False, False]])
    with torch.no_grad():
        base = model(x, torch.tensor([3]), cond)
        x2 = x.clone()
        x2[0, 4:] += 100.0  # junk in padded frames must not leak into valid ones
        cond2 = build_condition(x2, eval_mask(n), has_quality=True)
        cond2["padding"] = cond["padding"]
        out = model(x2, torch.tensor([3]), cond2)
    assert torch.allclose(out[0, :4], base[0, :4], atol=1e-6)


def test_checkpoint_round_trip(tmp_path):
    cfg = tiny_config()
    model = randomize(MotionDenoiser(cfg), seed=10)
    sched = DiffusionSchedule.cosine(32)
    skel = toy_skeleton()
    layout = FeatureLayout.for_skeleton(skel)
    mean, std = np.zeros(layout.total_width), np.ones(layout.total_width)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model, sched, layout, skel.fingerprint(), mean, std,
                    extra={"note": "test"})
    ck = load_checkpoint(path)
    assert isinstance(ck, Checkpoint)
    assert ck.skeleton_fingerprint == skel.fingerprint()
    assert ck.layout.blocks == layout.blocks
    assert ck.extra["note"] == "test"
    assert ck.has_quality
    for a, b in zip(ck.model.parameters(), model.parameters()):
        assert torch.equal(a, b)


def test_checkpoint_layout_mismatch_refused(tmp_path):
    cfg = tiny_config()
    model = MotionDenoiser(cfg)
    sched = DiffusionSchedule.cosine(32)
    skel = toy_skeleton()
    layout = FeatureLayout.for_skeleton(skel)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model, sched, layout, skel.fingerprint(),
                    np.zeros(layout.total_width), np.ones(layout.total_width))
    other = FeatureLayout.for_skeleton(skel, include_quality=False)
    with pytest.raises(ValueError, match="layout"):
        load_checkpoint(path, expected_layout=other)
