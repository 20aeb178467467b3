"""Rectified-flow objective, Euler sampler with guidance, and inversion
inpainting.

Training pairs a noise draw x0 with a data point x1 along the straight path
x_t = (1-t) x0 + t x1 whose velocity x1 - x0 the model regresses. Sampling
integrates dx/dt = v(x, t) with plain Euler steps on the grid t_k = k/steps.
Guidance combines the conditional and unconditional predictions as
v_u + s (v_c - v_u); s=1 and s=0 short-circuit to a single forward so the
algebraic collapse is exact. The unconditional branch nulls the prompt but
keeps the context lane: context frames are constraints, not style.

Inversion inpainting re-anchors known frames to their noise-level-matched
interpolation (1-t) eps + t x1 before every step, reusing the noise drawn at
t=0, and once more at t=1 so anchored frames match the conditioning exactly.
With no anchored frames it reduces bit-for-bit to plain sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import NonFinite, ShapeMismatch
from .motion import FRAME_DIM, MotionSequence, NormStats, denormalize
from .tasks import FramePlan, build_context
from .tokenizer import default_vocab


@dataclass
class SamplerConfig:
    steps: int = 50
    cfg_scale: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.cfg_scale < 0:
            raise ValueError("cfg_scale must be non-negative")


NULL_TOKENS = [default_vocab().eot_id]  # tokenize("") == [end-of-text]


def _check_pair(x0, x1):
    if x0.shape != x1.shape:
        raise ShapeMismatch(f"shape mismatch {tuple(x0.shape)} vs {tuple(x1.shape)}")


def interpolate(x0: torch.Tensor, x1: torch.Tensor, t) -> torch.Tensor:
    """x_t = (1 - t) x0 + t x1. t is a scalar or broadcastable tensor."""
    _check_pair(x0, x1)
    if not torch.is_tensor(t):
        t = torch.as_tensor(t, dtype=x0.dtype, device=x0.device)
    return (1.0 - t) * x0 + t * x1


def velocity_target(x0: torch.Tensor, x1: torch.Tensor) -> torch.Tensor:
    """Straight-path velocity x1 - x0; independent of t."""
    _check_pair(x0, x1)
    return x1 - x0


@dataclass
class FlowBatch:
    """One training batch: equal-length normalized targets, prompt token
    lists, and optional per-sample frame plans (compiled into the context
    lane inside the loss so the op table receives gradients)."""

    x1: torch.Tensor  # (B, T, 201)
    tokens: list[list[int]]
    plans: list[FramePlan] | None = None

    def __post_init__(self):
        if self.x1.ndim != 3 or self.x1.shape[2] != FRAME_DIM:
            raise ShapeMismatch(f"x1 must be (B, T, {FRAME_DIM})")
        if len(self.tokens) != self.x1.shape[0]:
            raise ShapeMismatch("one token list per sample required")
        if self.plans is not None:
            if len(self.plans) != self.x1.shape[0]:
                raise ShapeMismatch("one plan per sample required")
            if any(len(p) != self.x1.shape[1] for p in self.plans):
                raise ShapeMismatch("plan length must match x1")


def fm_loss(
    model,
    batch: FlowBatch,
    generator: torch.Generator | None = None,
    cond_drop: float = 0.1,
    *,
    t: torch.Tensor | None = None,
    x0: torch.Tensor | None = None,
    drop_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean squared error between predicted and target velocity.

    t uniform per sample, x0 standard normal, and the prompt falls back to
    the null embedding with probability cond_drop (context kept). The
    keyword overrides pin each random draw for oracle tests.
    """
    if batch.x1.shape[0] == 0:
        raise ValueError("batch is empty")
    x1 = batch.x1
    B = x1.shape[0]
    if t is None:
        t = torch.rand(B, generator=generator, dtype=x1.dtype, device=x1.device)
    if x0 is None:
        x0 = torch.randn(x1.shape, generator=generator, dtype=x1.dtype, device=x1.device)
    if drop_mask is None:
        drop_mask = (
            torch.rand(B, generator=generator, device=x1.device) < cond_drop
        )
    tokens = [
        NULL_TOKENS if bool(drop_mask[i]) else batch.tokens[i] for i in range(B)
    ]
    text, text_mask = model.encode_text(tokens, device=x1.device)
    ctx = None
    if batch.plans is not None:
        ctx = torch.stack([build_context(p, model.meta_table) for p in batch.plans])
        ctx = ctx.to(dtype=x1.dtype, device=x1.device)
    x_t = interpolate(x0, x1, t[:, None, None])
    target = velocity_target(x0, x1)
    pred = model(x_t, t, text, text_mask, ctx)
    loss = torch.mean((pred - target) ** 2)
    if not torch.isfinite(loss):
        raise NonFinite("flow-matching loss is not finite")
    return loss


def _context_tensor(model, plan: FramePlan | None, dtype, device):
    if plan is None:
        return None
    return build_context(plan, model.meta_table.to(dtype)).unsqueeze(0).to(device)


def _guided_euler(
    model,
    x: torch.Tensor,
    tokens: list[int] | None,
    ctx: torch.Tensor | None,
    cfg: SamplerConfig,
    anchor=None,
) -> torch.Tensor:
    """Shared Euler loop. anchor(x, t) mutates rows in place before each step
    (and once at t=1); both sampling entry points run through here so the
    empty-anchor case is bitwise identical to plain sampling."""
    with torch.no_grad():
        scale = float(cfg.cfg_scale)
        text_c = text_u = mask_c = mask_u = None
        if scale != 0.0:
            text_c, mask_c = model.encode_text(
                [tokens if tokens is not None else NULL_TOKENS], device=x.device
            )
        if scale != 1.0:
            text_u, mask_u = model.encode_text([NULL_TOKENS], device=x.device)
        dt = 1.0 / cfg.steps
        for k in range(cfg.steps):
            t = k / cfg.steps
            if anchor is not None:
                anchor(x, t)
            if scale == 1.0:
                v = model(x, t, text_c, mask_c, ctx)
            elif scale == 0.0:
                v = model(x, t, text_u, mask_u, ctx)
            else:
                v_c = model(x, t, text_c, mask_c, ctx)
                v_u = model(x, t, text_u, mask_u, ctx)
                v = v_u + scale * (v_c - v_u)
            if not torch.isfinite(v).all():
                raise NonFinite("velocity diverged", step=k)
            x = x + dt * v
        if anchor is not None:
            anchor(x, 1.0)
    return x


def _finish(x: torch.Tensor, stats: NormStats | None) -> MotionSequence:
    data = x.squeeze(0).to(torch.float64).cpu().numpy()
    seq = MotionSequence(data)
    if stats is not None:
        seq = denormalize(seq, stats)
    return seq


def sample_euler(
    model,
    tokens: list[int] | None,
    plan: FramePlan | None,
    T: int,
    cfg: SamplerConfig,
    stats: NormStats | None = None,
) -> MotionSequence:
    """Draw seeded noise and integrate the learned field for cfg.steps.

    tokens None means unconditional (null prompt). plan, when given, is
    compiled into the Eq.-style context lane from the model's op table.
    Output is denormalized through stats when provided.
    """
    p = next(model.parameters())
    gen = torch.Generator().manual_seed(cfg.seed)
    x = torch.randn(1, T, FRAME_DIM, generator=gen, dtype=p.dtype, device=p.device)
    ctx = _context_tensor(model, plan, p.dtype, p.device)
    x = _guided_euler(model, x, tokens, ctx, cfg)
    return _finish(x, stats)


def inversion_inpaint(
    model,
    known: np.ndarray,
    values: torch.Tensor | np.ndarray,
    tokens: list[int] | None,
    T: int,
    cfg: SamplerConfig,
    stats: NormStats | None = None,
    plan: FramePlan | None = None,
) -> MotionSequence:
    """Training-free inpainting: anchor frames `known` to `values`.

    values holds the conditioning motion rows for the anchored frame indices
    (normalized space, shape (len(known), 201)). Before each Euler step at
    time t those rows are overwritten with (1-t) eps + t value using the
    noise cached from t=0, and once more after the final step, so anchored
    rows land on the conditioning exactly. known may be empty, in which case
    the result is bit-identical to sample_euler.
    """
    p = next(model.parameters())
    known = np.asarray(known, dtype=np.int64).reshape(-1)
    if np.unique(known).size != known.size:
        raise ValueError("duplicate anchored frame indices")
    if known.size and (known.min() < 0 or known.max() >= T):
        raise ValueError("anchored frame index out of range")
    vals = torch.as_tensor(values, dtype=p.dtype, device=p.device).reshape(
        known.size, FRAME_DIM
    )
    gen = torch.Generator().manual_seed(cfg.seed)
    x = torch.randn(1, T, FRAME_DIM, generator=gen, dtype=p.dtype, device=p.device)
    eps_known = x[0, known].clone()
    idx = torch.as_tensor(known, device=p.device)

    def anchor(state: torch.Tensor, t: float) -> None:
        if idx.numel():
            state[0, idx] = (1.0 - t) * eps_known + t * vals

    ctx = _context_tensor(model, plan, p.dtype, p.device)
    x = _guided_euler(model, x, tokens, ctx, cfg, anchor=anchor)
    return _finish(x, stats)
