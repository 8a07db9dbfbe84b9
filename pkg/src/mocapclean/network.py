"""Transformer denoiser over per-frame motion feature tokens.

Conditioning: observed features and per-frame observed/hidden flags are
concatenated to the noisy features at the input; the diffusion step and a
mask-derived mode class (generation vs evaluation) modulate every block
through adaptive layer norm (scale/shift/gate, zero-initialized).

Positions enter through rotary embeddings on Q/K. The default variant
concatenates each head's original Q/K with their rotated counterparts, so
attention logits carry both a content term and a relative-position term;
plain RoPE and absolute sinusoidal embeddings are config alternatives.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .diffusion import DiffusionSchedule
from .features import FeatureLayout

POSITION_MODES = ("rope_concat", "rope", "absolute")
MODE_GENERATION = 0
MODE_EVALUATION = 1


@dataclass
class ModelConfig:
    layers: int = 4
    heads: int = 4
    model_width: int = 128
    feedforward_width: int = 256
    max_frames: int = 100  # 5 s at 20 fps
    feature_width: int = 132  # F+1 for the toy skeleton
    dropout: float = 0.0
    rope_base: float = 10000.0
    position_mode: str = "rope_concat"

    def __post_init__(self):
        if self.model_width % self.heads != 0:
            raise ValueError("model_width must be divisible by heads")
        if self.max_frames < 2:
            raise ValueError("max_frames must be >= 2")
        if self.position_mode not in POSITION_MODES:
            raise ValueError(f"position_mode must be one of {POSITION_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class InpaintMask:
    """Per-frame observed flags for the motion block and the quality column.

    1 marks an observed (conditioning) frame entry, 0 an entry to infer.
    Exactly two shapes occur: evaluation (motion fully observed, quality
    hidden) and generation (quality fully observed, motion partly hidden).
    """

    motion: np.ndarray  # (N,)
    quality: np.ndarray | None  # (N,); None for models without a quality channel

    def __post_init__(self):
        self.motion = np.asarray(self.motion, dtype=np.float64)
        if self.quality is not None:
            self.quality = np.asarray(self.quality, dtype=np.float64)
            if self.quality.shape != self.motion.shape:
                raise ValueError("motion and quality flags must have equal length")

    @property
    def mode(self) -> str:
        if self.quality is None:
            return "generation"
        if self.motion.all() and not self.quality.any():
            return "evaluation"
        if self.quality.all() and not self.motion.all():
            return "generation"
        raise ValueError("mask matches neither evaluation nor generation pattern")

    @property
    def mode_id(self) -> int:
        return MODE_EVALUATION if self.mode == "evaluation" else MODE_GENERATION


def build_condition(x0: torch.Tensor, mask: InpaintMask,
                    has_quality: bool) -> dict:
    """Model conditioning tensors from clean features and an inpaint mask.

    x0: (B, N, F) clean (normalized) features; the observed tensor keeps
    observed entries and zeroes hidden ones. Returns the dict consumed by
    MotionDenoiser.forward.
    """
    b, n, f = x0.shape
    motion = torch.as_tensor(mask.motion, dtype=x0.dtype)
    if has_quality:
        quality = torch.as_tensor(
            mask.quality if mask.quality is not None else np.ones(n), dtype=x0.dtype)
        col_mask = motion[:, None].expand(n, f - 1)
        col_mask = torch.cat([col_mask, quality[:, None]], dim=1)
        flags = torch.stack([motion, quality], dim=1)
    else:
        col_mask = motion[:, None].expand(n, f)
        flags = torch.stack([motion, torch.zeros_like(motion)], dim=1)
    observed = x0 * col_mask
    return {
        "observed": observed,
        "flags": flags.unsqueeze(0).expand(b, n, 2),
        "mode": torch.full((b,), mask.mode_id, dtype=torch.long),
        "col_mask": col_mask,
    }


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    ang = t.double()[:, None] * freqs[None]
    emb = torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=1)
    return emb


def rope_rotate(x: torch.Tensor, positions: torch.Tensor,
                base: float = 10000.0) -> torch.Tensor:
    """Rotate feature pairs of x (..., N, d) by angle position * theta_i.

    theta_i = base^(-2i/d); position 0 is the identity and norms are
    preserved for any position.
    """
    d = x.shape[-1]
    if d % 2:
        raise ValueError("rotary dimension must be even")
    inv_freq = base ** (-torch.arange(0, d, 2, dtype=x.dtype) / d)
    ang = positions.to(x.dtype)[:, None] * inv_freq[None]  # (N, d/2)
    cos, sin = torch.cos(ang), torch.sin(ang)
    x1, x2 = x[..., 0::2], x[..., 1::2]
    out = torch.empty_like(x)
    out[..., 0::2] = x1 * cos - x2 * sin
    out[..., 1::2] = x1 * sin + x2 * cos
    return out


class RotaryAttention(nn.Module):
    """Multi-head self-attention with rotary (or absolute) positions."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.head_dim = cfg.model_width // cfg.heads
        self.qkv = nn.Linear(cfg.model_width, 3 * cfg.model_width)
        self.proj = nn.Linear(cfg.model_width, cfg.model_width)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, padding: torch.Tensor | None) -> torch.Tensor:
        b, n, _ = x.shape
        h, d = self.cfg.heads, self.head_dim
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, n, h, d).transpose(1, 2)  # (B, H, N, d)
        k = k.view(b, n, h, d).transpose(1, 2)
        v = v.view(b, n, h, d).transpose(1, 2)

        positions = torch.arange(n)
        if self.cfg.position_mode == "rope_concat":
            q = torch.cat([q, rope_rotate(q, positions, self.cfg.rope_base)], dim=-1)
            k = torch.cat([k, rope_rotate(k, positions, self.cfg.rope_base)], dim=-1)
            scale = 1.0 / math.sqrt(2 * d)
        elif self.cfg.position_mode == "rope":
            q = rope_rotate(q, positions, self.cfg.rope_base)
            k = rope_rotate(k, positions, self.cfg.rope_base)
            scale = 1.0 / math.sqrt(d)
        else:
            scale = 1.0 / math.sqrt(d)

        logits = torch.einsum("bhqd,bhkd->bhqk", q, k) * scale
        if padding is not None:
            bad = ~padding  # (B, N) True where padded
            logits = logits.masked_fill(bad[:, None, None, :], float("-inf"))
        attn = torch.softmax(logits, dim=-1)
        attn = self.drop(attn)
        out = torch.einsum("bhqk,bhkd->bhqd", attn, v)
        out = out.transpose(1, 2).reshape(b, n, h * d)
        return self.proj(out)


def _modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1.0 + scale[:, None]) + shift[:, None]


class DenoiserBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.model_width, elementwise_affine=False)
        self.attn = RotaryAttention(cfg)
        self.norm2 = nn.LayerNorm(cfg.model_width, elementwise_affine=False)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.model_width, cfg.feedforward_width),
            nn.GELU(),
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.feedforward_width, cfg.model_width),
        )
        self.ada = nn.Sequential(nn.SiLU(), nn.Linear(cfg.model_width, 6 * cfg.model_width))
        nn.init.zeros_(self.ada[1].weight)
        nn.init.zeros_(self.ada[1].bias)

    def forward(self, x, cond, padding):
        sh1, sc1, g1, sh2, sc2, g2 = self.ada(cond).chunk(6, dim=-1)
        x = x + g1[:, None] * self.attn(_modulate(self.norm1(x), sh1, sc1), padding)
        x = x + g2[:, None] * self.mlp(_modulate(self.norm2(x), sh2, sc2))
        return x


class MotionDenoiser(nn.Module):
    """Predicts clean features for every frame from noisy ones + conditions."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        f = cfg.feature_width
        self.input_proj = nn.Linear(2 * f + 2, cfg.model_width)
        self.t_mlp = nn.Sequential(
            nn.Linear(cfg.model_width, cfg.model_width), nn.SiLU(),
            nn.Linear(cfg.model_width, cfg.model_width))
        self.mode_embed = nn.Embedding(2, cfg.model_width)
        self.blocks = nn.ModuleList(DenoiserBlock(cfg) for _ in range(cfg.layers))
        self.final_norm = nn.LayerNorm(cfg.model_width, elementwise_affine=False)
        self.final_ada = nn.Sequential(nn.SiLU(), nn.Linear(cfg.model_width, 2 * cfg.model_width))
        self.head = nn.Linear(cfg.model_width, f)
        nn.init.zeros_(self.final_ada[1].weight)
        nn.init.zeros_(self.final_ada[1].bias)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        if cfg.position_mode == "absolute":
            pe = sinusoidal_embedding(torch.arange(cfg.max_frames), cfg.model_width)
            self.register_buffer("abs_pos", pe.float(), persistent=False)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, condition: dict) -> torch.Tensor:
        b, n, f = x_t.shape
        if f != self.cfg.feature_width:
            raise ValueError(f"feature width {f} != configured {self.cfg.feature_width}")
        if n > self.cfg.max_frames:
            raise ValueError(f"sequence of {n} frames exceeds max_frames "
                             f"{self.cfg.max_frames}; window the input")
        observed = condition["observed"]
        flags = condition["flags"]
        if observed.dim() == 2:
            observed = observed.expand(b, n, f)
        tokens = self.input_proj(torch.cat([x_t, observed, flags], dim=-1))
        if self.cfg.position_mode == "absolute":
            tokens = tokens + self.abs_pos[:n].to(tokens.dtype)

        cond = self.t_mlp(sinusoidal_embedding(t, self.cfg.model_width).to(tokens.dtype))
        cond = cond + self.mode_embed(condition["mode"])

        padding = condition.get("padding")
        for block in self.blocks:
            tokens = block(tokens, cond, padding)
        sh, sc = self.final_ada(cond).chunk(2, dim=-1)
        return self.head(_modulate(self.final_norm(tokens), sh, sc))

    def as_denoiser_fn(self):
        """Adapter matching the sampler's (x_t, t, condition) signature."""
        def fn(x_t, t, condition):
            return self.forward(x_t, t, condition)
        return fn


def save_checkpoint(path: str | Path, model: MotionDenoiser,
                    schedule: DiffusionSchedule, layout: FeatureLayout,
                    skeleton_fingerprint: str, norm_mean: np.ndarray,
                    norm_std: np.ndarray, extra: dict | None = None):
    """Self-describing checkpoint archive (atomic write)."""
    path = Path(path)
    payload = {
        "model_config": model.cfg.to_dict(),
        "schedule": schedule.to_dict(),
        "state_dict": model.state_dict(),
        "feature_layout": layout.to_dict(),
        "skeleton_fingerprint": skeleton_fingerprint,
        "norm_mean": np.asarray(norm_mean),
        "norm_std": np.asarray(norm_std),
        "extra": extra or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


@dataclass
class Checkpoint:
    model: MotionDenoiser
    schedule: DiffusionSchedule
    layout: FeatureLayout
    skeleton_fingerprint: str
    norm_mean: np.ndarray
    norm_std: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def has_quality(self) -> bool:
        return self.layout.has_block("quality")


def load_checkpoint(path: str | Path,
                    expected_layout: FeatureLayout | None = None) -> Checkpoint:
    """Load a checkpoint; refuses a mismatched feature layout."""
    payload = torch.load(Path(path), weights_only=False)
    layout = FeatureLayout.from_dict(payload["feature_layout"])
    if expected_layout is not None and layout.blocks != expected_layout.blocks:
        raise ValueError("checkpoint feature layout does not match the data layout")
    model = MotionDenoiser(ModelConfig.from_dict(payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return Checkpoint(
        model=model,
        schedule=DiffusionSchedule.from_dict(payload["schedule"]),
        layout=layout,
        skeleton_fingerprint=payload["skeleton_fingerprint"],
        norm_mean=payload["norm_mean"],
        norm_std=payload["norm_std"],
        extra=payload.get("extra", {}),
    )
