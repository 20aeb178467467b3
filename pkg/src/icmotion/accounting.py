"""Analytic parameter and FLOP accounting for the conditioning ablation.

Parameter counts are exact closed forms over ModelConfig; tests cross-check
them against torch numel sums on a constructed model. FLOPs count 2*m*n*k
per (m,n)x(n,k) matrix multiply and ignore elementwise work, nonlinearities,
and normalization. One guided sampling run is

    steps * (conditional forward + unconditional forward) + 2 text encodings

with the context path recomputed on every forward (no caching). Both CFG
branches carry the context lane, so per-forward context deltas count twice
per step. Text encoding cost is architecture-independent and cancels in
every delta. Latency is a wall-clock median over repeated guided runs.
"""

from __future__ import annotations

import time

import torch

from .model import CondArch, ModelConfig, MotionDenoiser
from .motion import FRAME_DIM
from .tasks import NUM_META_OPS


def _linear(i: int, o: int) -> int:
    return i * o + o


# ------------------------------------------------------------------- params


def encoder_params(cfg: ModelConfig) -> int:
    """E_in/E_ctx: Linear(201,h) -> SiLU -> Linear(h,h)."""
    h = cfg.hidden_dim
    return _linear(FRAME_DIM, h) + _linear(h, h)


def block_params(cfg: ModelConfig) -> int:
    h, d = cfg.hidden_dim, cfg.text_dim
    attn = _linear(h, 3 * h) + _linear(h, h)
    cross = _linear(h, h) + 2 * _linear(d, h) + _linear(h, h)
    norm2 = 2 * h
    ffn = _linear(h, cfg.ffn_mult * h) + _linear(cfg.ffn_mult * h, h)
    adaln = _linear(h, 6 * h)
    return attn + cross + norm2 + ffn + adaln


def text_encoder_params(cfg: ModelConfig) -> int:
    d = cfg.text_dim
    layer = (
        2 * d  # norm1
        + _linear(d, 3 * d)
        + _linear(d, d)
        + 2 * d  # norm2
        + _linear(d, 4 * d)
        + _linear(4 * d, d)
    )
    return cfg.vocab_size * d + cfg.max_text_tokens * d + cfg.text_layers * layer + 2 * d


def base_params(cfg: ModelConfig) -> int:
    h = cfg.hidden_dim
    final = _linear(h, 2 * h) + _linear(h, FRAME_DIM)
    return (
        encoder_params(cfg)  # E_in
        + cfg.max_T * h  # positional table
        + 2 * _linear(h, h)  # timestep MLP
        + text_encoder_params(cfg)
        + cfg.n_layers * block_params(cfg)
        + final
    )


def delta_params(cfg: ModelConfig) -> int:
    """Additional parameters over the context-free base."""
    h = cfg.hidden_dim
    delta = encoder_params(cfg) + NUM_META_OPS * FRAME_DIM  # E_ctx + op table
    if cfg.cond_arch is CondArch.ADALN:
        delta += h + 3 * _linear(h, h)  # query + k/v/out projections
    elif cfg.cond_arch is CondArch.CONTROLNET:
        delta += cfg.n_layers * (block_params(cfg) + _linear(h, h))
    return delta


def count_params(cfg: ModelConfig) -> dict[str, int]:
    base = base_params(cfg)
    delta = delta_params(cfg)
    return {"base": base, "delta": delta, "total": base + delta}


# -------------------------------------------------------------------- flops


def encoder_flops(cfg: ModelConfig, T: int) -> int:
    h = cfg.hidden_dim
    return T * (2 * FRAME_DIM * h + 2 * h * h)


def block_flops(cfg: ModelConfig, T: int, L: int) -> int:
    h, d = cfg.hidden_dim, cfg.text_dim
    qkv = 6 * T * h * h
    attn = 4 * T * T * h  # scores + value mix, summed over heads
    attn_proj = 2 * T * h * h
    cross = 2 * T * h * h + 4 * L * d * h + 4 * T * L * h + 2 * T * h * h
    ffn = 4 * cfg.ffn_mult * T * h * h
    adaln = 12 * h * h
    return qkv + attn + attn_proj + cross + ffn + adaln


def text_flops(cfg: ModelConfig, L: int) -> int:
    d = cfg.text_dim
    layer = 6 * L * d * d + 4 * L * L * d + 2 * L * d * d + 16 * L * d * d
    return cfg.text_layers * layer


def base_forward_flops(cfg: ModelConfig, T: int, L: int) -> int:
    h = cfg.hidden_dim
    final = 4 * h * h + 2 * T * h * FRAME_DIM
    t_mlp = 4 * h * h
    return encoder_flops(cfg, T) + t_mlp + cfg.n_layers * block_flops(cfg, T, L) + final


def delta_forward_flops(cfg: ModelConfig, T: int, L: int) -> int:
    """Extra FLOPs of one context-bearing forward over the base forward."""
    h, n = cfg.hidden_dim, cfg.n_layers
    delta = encoder_flops(cfg, T)  # E_ctx on the context lane
    if cfg.cond_arch is CondArch.SEQ_CONCAT:
        delta += n * (block_flops(cfg, 2 * T, L) - block_flops(cfg, T, L))
    elif cfg.cond_arch is CondArch.ADALN:
        delta += 4 * T * h * h + 4 * T * h + 2 * h * h  # pooling head
    elif cfg.cond_arch is CondArch.CONTROLNET:
        delta += n * (block_flops(cfg, T, L) + 2 * T * h * h)
    return delta


def count_flops(cfg: ModelConfig, T: int, steps: int = 50, text_len: int = 64) -> dict[str, int]:
    """FLOPs of one guided run (2 forwards per step + 2 text encodings),
    the base-model equivalent, and the delta. text_len is the assumed prompt
    length; the ablation orderings hold for any length up to the 256 cap."""
    per_base = base_forward_flops(cfg, T, text_len)
    per_delta = delta_forward_flops(cfg, T, text_len)
    base_run = 2 * steps * per_base + 2 * text_flops(cfg, text_len)
    return {
        "base": base_run,
        "delta": 2 * steps * per_delta,
        "total": base_run + 2 * steps * per_delta,
    }


# ------------------------------------------------------------------ latency


def measure_latency(
    cfg: ModelConfig,
    T: int,
    steps: int = 50,
    repeats: int = 10,
    seed: int = 0,
) -> dict[str, float]:
    """Median wall-clock seconds of a guided run, with and without context.

    Reported, never asserted: wall time is hardware noise by nature.
    """
    torch.manual_seed(seed)
    model = MotionDenoiser(cfg).eval()
    tokens = [[1, 2, 3, 0]]
    x = torch.randn(1, T, FRAME_DIM)
    ctx = torch.randn(1, T, FRAME_DIM)

    def run(with_ctx: bool) -> float:
        start = time.perf_counter()
        with torch.no_grad():
            text_c, mask_c = model.encode_text(tokens)
            text_u, mask_u = model.encode_text([[0]])
            xi = x.clone()
            for k in range(steps):
                t = k / steps
                v_c = model(xi, t, text_c, mask_c, ctx if with_ctx else None)
                v_u = model(xi, t, text_u, mask_u, ctx if with_ctx else None)
                xi = xi + (1.0 / steps) * (v_u + 2.0 * (v_c - v_u))
        return time.perf_counter() - start

    run(True)  # warm up
    with_ctx = sorted(run(True) for _ in range(repeats))
    without = sorted(run(False) for _ in range(repeats))
    med_c = with_ctx[repeats // 2]
    med_b = without[repeats // 2]
    return {"base": med_b, "total": med_c, "delta": med_c - med_b}
