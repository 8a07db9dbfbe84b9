"""DDPM machinery: noise schedules, forward diffusion, ancestral sampling.

The denoiser predicts the clean sample x0 directly; the reverse step uses
the x0-parameterized posterior mean. The sampler supports per-frame start
steps (frames with start 0 pass through bit-identically), optional step
respacing for faster inference, and per-step refresh of known frames so
conditioning frames stay at the chain's current noise level.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch


@dataclass
class DiffusionSchedule:
    """Per-step beta table with cached alpha products."""

    name: str
    betas: np.ndarray  # (T,) float64, betas[i] = beta_{i+1}

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if self.betas.ndim != 1 or len(self.betas) < 1:
            raise ValueError("betas must be a 1-D array")
        if np.any(self.betas <= 0.0) or np.any(self.betas >= 1.0):
            raise ValueError("betas must lie strictly in (0, 1)")
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)

    @property
    def num_steps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t) -> np.ndarray:
        """alpha-bar at step t (scalar or array), with alpha_bar(0) = 1."""
        t = np.asarray(t)
        table = np.concatenate([[1.0], self.alpha_bars])
        return table[t]

    @classmethod
    def cosine(cls, num_steps: int = 1000, max_beta: float = 0.999) -> "DiffusionSchedule":
        """Cosine alpha-bar schedule with capped betas (bounded-SNR tails)."""
        def f(u):
            return math.cos((u + 0.008) / 1.008 * math.pi / 2.0) ** 2

        betas = [min(1.0 - f((i + 1) / num_steps) / f(i / num_steps), max_beta)
                 for i in range(num_steps)]
        return cls(name="cosine", betas=np.array(betas))

    @classmethod
    def linear(cls, num_steps: int = 1000) -> "DiffusionSchedule":
        scale = 1000.0 / num_steps
        return cls(name="linear",
                   betas=np.linspace(1e-4 * scale, 0.02 * scale, num_steps))

    @classmethod
    def create(cls, name: str, num_steps: int) -> "DiffusionSchedule":
        if name == "cosine":
            return cls.cosine(num_steps)
        if name == "linear":
            return cls.linear(num_steps)
        raise ValueError(f"unknown schedule {name!r}")

    def to_dict(self) -> dict:
        return {"name": self.name, "betas": self.betas.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DiffusionSchedule":
        return cls(name=d["name"], betas=np.array(d["betas"]))


def _gather_abar(schedule: DiffusionSchedule, t: torch.Tensor,
                 like: torch.Tensor) -> torch.Tensor:
    """alpha_bar(t) broadcast against `like` (feature dim appended as needed)."""
    table = torch.from_numpy(np.concatenate([[1.0], schedule.alpha_bars]))
    table = table.to(dtype=like.dtype)
    ab = table[t]
    while ab.dim() < like.dim():
        ab = ab.unsqueeze(-1)
    return ab


def _as_step_tensor(t, schedule: DiffusionSchedule) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.long)
    if t.min() < 0 or t.max() > schedule.num_steps:
        raise ValueError(
            f"diffusion step out of range [0, {schedule.num_steps}]: "
            f"got [{int(t.min())}, {int(t.max())}]")
    return t


def q_sample(x0: torch.Tensor, t, noise: torch.Tensor,
             schedule: DiffusionSchedule) -> torch.Tensor:
    """Forward marginal: sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.

    t may be a scalar, per-sequence (B,), or per-frame (B, N) / (N,) step
    index; t = 0 returns x0 exactly.
    """
    t = _as_step_tensor(t, schedule)
    ab = _gather_abar(schedule, t, x0)
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * noise


def respaced_steps(schedule: DiffusionSchedule, num_steps: int | None) -> list[int]:
    """Descending step subsequence ending at 1 (full schedule when None)."""
    T = schedule.num_steps
    if num_steps is None or num_steps >= T:
        return list(range(T, 0, -1))
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    grid = np.unique(np.round(np.linspace(1, T, num_steps)).astype(int))
    return [int(v) for v in grid[::-1]]


def ddpm_sample(denoiser, shape: tuple[int, ...], condition,
                rng: torch.Generator, schedule: DiffusionSchedule,
                start_step=None, x_init: torch.Tensor | None = None,
                known_x0: torch.Tensor | None = None,
                known_frames: torch.Tensor | None = None,
                num_steps: int | None = None) -> torch.Tensor:
    """Ancestral x0-parameterized DDPM loop.

    denoiser(x_t, t, condition) -> x0 prediction, with t a (B,) long tensor.
    start_step is a scalar or per-frame (N,)/(B, N) tensor; frames start
    denoising once the loop reaches their step and are bit-identical to
    x_init when their start is 0. known_frames (bool over frames) are
    re-noised from known_x0 to the current step after every update, so the
    final output carries known_x0 exactly on those frames.
    """
    T = schedule.num_steps
    if start_step is None:
        start_step = T
    start = _as_step_tensor(start_step, schedule)
    b, n = shape[0], shape[1]
    if start.dim() == 0:
        start = start.expand(b, n)
    elif start.dim() == 1:
        start = start.unsqueeze(0).expand(b, n)

    if x_init is None:
        if int(start.min()) != T or int(start.max()) != T:
            raise ValueError("x_init is required unless sampling starts at T")
        x = torch.randn(shape, generator=rng)
    else:
        if tuple(x_init.shape) != tuple(shape):
            raise ValueError("x_init shape mismatch")
        x = x_init.clone()

    steps = respaced_steps(schedule, num_steps)
    t_max = int(start.max())
    steps = [t for t in steps if t <= t_max]
    abar = schedule.alpha_bar

    for i, t in enumerate(steps):
        t_next = steps[i + 1] if i + 1 < len(steps) else 0
        active = (start >= t).unsqueeze(-1).to(x.dtype)

        t_batch = torch.full((b,), t, dtype=torch.long)
        x0_hat = denoiser(x, t_batch, condition)
        if not torch.isfinite(x0_hat).all():
            raise FloatingPointError(f"non-finite denoiser output at step {t}")

        ab_t = float(abar(t))
        ab_next = float(abar(t_next))
        alpha_hat = ab_t / ab_next
        beta_hat = 1.0 - alpha_hat
        coef_x0 = math.sqrt(ab_next) * beta_hat / (1.0 - ab_t)
        coef_xt = math.sqrt(alpha_hat) * (1.0 - ab_next) / (1.0 - ab_t)
        var = beta_hat * (1.0 - ab_next) / (1.0 - ab_t)

        noise = torch.randn(shape, generator=rng, dtype=x.dtype)
        if t_next == 0:
            noise = torch.zeros_like(noise)
        mean = coef_x0 * x0_hat + coef_xt * x
        x_new = mean + math.sqrt(max(var, 0.0)) * noise
        x = active * x_new + (1.0 - active) * x

        if known_frames is not None and known_x0 is not None:
            refresh_noise = torch.randn(shape, generator=rng, dtype=x.dtype)
            refreshed = q_sample(known_x0, t_next, refresh_noise, schedule)
            mask = known_frames
            if mask.dim() == 1:
                mask = mask.unsqueeze(0).expand(b, n)
            mask = mask.unsqueeze(-1).to(x.dtype)
            x = mask * refreshed + (1.0 - mask) * x

    return x


def training_target_loss(denoiser, x0: torch.Tensor, t, noise: torch.Tensor,
                         loss_mask: torch.Tensor,
                         schedule: DiffusionSchedule, condition=None) -> torch.Tensor:
    """Masked mean-squared error between x0 and the denoiser's prediction."""
    t = _as_step_tensor(t, schedule)
    x_t = q_sample(x0, t, noise, schedule)
    if t.dim() == 0:
        t = t.expand(x0.shape[0])
    pred = denoiser(x_t, t, condition) if condition is not None else denoiser(x_t, t)
    mask = loss_mask.to(x0.dtype)
    total = mask.sum()
    if total == 0:
        warnings.warn("loss mask selects no entries; returning zero loss")
        return torch.zeros((), dtype=x0.dtype)
    return ((x0 - pred) ** 2 * mask).sum() / total
