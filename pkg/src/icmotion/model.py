"""Velocity-prediction transformer with four pluggable context architectures.

The backbone is a single-stream DiT: motion tokens go through blocks of
self-attention, cross-attention to text features, and a feed-forward net,
each modulated by AdaLN-zero scale/shift/gate vectors predicted from the
timestep embedding. A small trainable text encoder replaces any external
language model. Everything is smooth (SiLU) and dropout-free so forward
passes are pure functions and finite-difference gradient checks behave.

The per-frame context lane (ctx, from build_context) can be injected four
ways, selected by ModelConfig.cond_arch:

  temporal_fusion  E_in(x_t) + E_ctx(ctx) added frame-wise at the input
  seq_concat       context tokens appended along time (2T tokens) behind an
                   asymmetric mask; context rows never read noisy rows, and
                   only the noisy half is returned
  adaln            E_ctx(ctx) rows pooled by single-query attention into one
                   vector added to the timestep conditioning
  controlnet       a trainable clone of the block stack consumes
                   E_in(x_t) + E_ctx(ctx) and feeds each frozen base block
                   through zero-initialized linear projections

With ctx=None every architecture reduces to the same base forward pass.
E_ctx starts as an exact copy of E_in; call init_context_from_base() to
refresh that copy (and re-clone the controlnet branch) at fine-tune start.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from enum import Enum

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeMismatch, TooLong
from .motion import FRAME_DIM
from .tasks import NUM_META_OPS
from .tokenizer import MAX_TOKENS, default_vocab


class CondArch(Enum):
    TEMPORAL_FUSION = "temporal_fusion"
    SEQ_CONCAT = "seq_concat"
    ADALN = "adaln"
    CONTROLNET = "controlnet"


@dataclass
class ModelConfig:
    hidden_dim: int = 192
    n_layers: int = 6
    n_heads: int = 4
    ffn_mult: int = 4
    max_T: int = 190
    text_layers: int = 2
    text_dim: int = 128
    max_text_tokens: int = MAX_TOKENS
    cond_arch: CondArch = CondArch.TEMPORAL_FUSION
    vocab_size: int = field(default_factory=lambda: len(default_vocab()))

    def __post_init__(self):
        if isinstance(self.cond_arch, str):
            self.cond_arch = CondArch(self.cond_arch)
        if self.hidden_dim % self.n_heads != 0:
            raise ValueError("hidden_dim must be divisible by n_heads")

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["cond_arch"] = self.cond_arch.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features of t in [0, 1], scaled by 1000 for resolution."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0)
        * torch.arange(half, dtype=t.dtype, device=t.device)
        / half
    )
    args = t[:, None].to(freqs.dtype) * 1000.0 * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


def _attention(q, k, v, n_heads, mask=None):
    """Plain multi-head attention. mask is additive, broadcast to scores."""
    B, Lq, D = q.shape
    Lk = k.shape[1]
    hd = D // n_heads
    q = q.view(B, Lq, n_heads, hd).transpose(1, 2)
    k = k.view(B, Lk, n_heads, hd).transpose(1, 2)
    v = v.view(B, Lk, n_heads, hd).transpose(1, 2)
    scores = q @ k.transpose(-2, -1) / math.sqrt(hd)
    if mask is not None:
        scores = scores + mask
    probs = torch.softmax(scores, dim=-1)
    out = probs @ v
    return out.transpose(1, 2).reshape(B, Lq, D)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, mask=None):
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        return self.proj(_attention(q, k, v, self.n_heads, mask))


class CrossAttention(nn.Module):
    def __init__(self, dim: int, kv_dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(kv_dim, dim)
        self.v = nn.Linear(kv_dim, dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, kv, key_padding_mask=None):
        mask = None
        if key_padding_mask is not None:
            # True marks padding; broadcast over heads and query positions
            mask = torch.where(
                key_padding_mask[:, None, None, :],
                torch.full((), -torch.inf, dtype=x.dtype, device=x.device),
                torch.zeros((), dtype=x.dtype, device=x.device),
            )
        return self.proj(_attention(self.q(x), self.k(kv), self.v(kv), self.n_heads, mask))


def modulate(x, shift, scale):
    return x * (1.0 + scale.unsqueeze(1)) + shift.unsqueeze(1)


class Block(nn.Module):
    """Self-attn + text cross-attn + FFN with AdaLN-zero timestep modulation."""

    def __init__(self, dim: int, kv_dim: int, n_heads: int, ffn_mult: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False)
        self.attn = SelfAttention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.cross = CrossAttention(dim, kv_dim, n_heads)
        self.norm3 = nn.LayerNorm(dim, elementwise_affine=False)
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_mult * dim),
            nn.SiLU(),
            nn.Linear(ffn_mult * dim, dim),
        )
        self.adaln = nn.Sequential(nn.SiLU(), nn.Linear(dim, 6 * dim))
        nn.init.zeros_(self.adaln[1].weight)
        nn.init.zeros_(self.adaln[1].bias)

    def forward(self, x, cond, text, text_mask=None, attn_mask=None):
        sh1, s1, g1, sh2, s2, g2 = self.adaln(cond).chunk(6, dim=-1)
        x = x + g1.unsqueeze(1) * self.attn(modulate(self.norm1(x), sh1, s1), attn_mask)
        x = x + self.cross(self.norm2(x), text, text_mask)
        x = x + g2.unsqueeze(1) * self.ffn(modulate(self.norm3(x), sh2, s2))
        return x


class FinalLayer(nn.Module):
    """AdaLN-modulated projection to velocity space, zero-initialized."""

    def __init__(self, dim: int, out_dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim, elementwise_affine=False)
        self.adaln = nn.Sequential(nn.SiLU(), nn.Linear(dim, 2 * dim))
        self.proj = nn.Linear(dim, out_dim)
        nn.init.zeros_(self.adaln[1].weight)
        nn.init.zeros_(self.adaln[1].bias)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, x, cond):
        shift, scale = self.adaln(cond).chunk(2, dim=-1)
        return self.proj(modulate(self.norm(x), shift, scale))


class TextBlock(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.SiLU(), nn.Linear(4 * dim, dim)
        )

    def forward(self, x, pad_mask=None):
        mask = None
        if pad_mask is not None:
            mask = torch.where(
                pad_mask[:, None, None, :],
                torch.full((), -torch.inf, dtype=x.dtype, device=x.device),
                torch.zeros((), dtype=x.dtype, device=x.device),
            )
        x = x + self.attn(self.norm1(x), mask)
        x = x + self.ffn(self.norm2(x))
        return x


class TextEncoder(nn.Module):
    """Tiny bidirectional transformer over prompt tokens.

    The empty prompt tokenizes to a lone end-of-text token, whose processed
    feature acts as the learned null embedding for the unconditional branch.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.max_tokens = cfg.max_text_tokens
        self.embed = nn.Embedding(cfg.vocab_size, cfg.text_dim)
        self.pos = nn.Parameter(torch.empty(cfg.max_text_tokens, cfg.text_dim))
        self.blocks = nn.ModuleList(
            TextBlock(cfg.text_dim, cfg.n_heads) for _ in range(cfg.text_layers)
        )
        self.norm = nn.LayerNorm(cfg.text_dim)
        nn.init.normal_(self.embed.weight, std=0.02)
        nn.init.normal_(self.pos, std=0.02)

    def forward(self, ids: torch.Tensor, pad_mask: torch.Tensor | None = None):
        if ids.ndim != 2:
            raise ShapeMismatch("token ids must be (B, L)")
        L = ids.shape[1]
        if L > self.max_tokens:
            raise TooLong(f"{L} text tokens exceeds the {self.max_tokens} cap")
        x = self.embed(ids) + self.pos[:L].to(self.embed.weight.dtype)
        for blk in self.blocks:
            x = blk(x, pad_mask)
        return self.norm(x)


def pad_token_batch(token_lists: list[list[int]], device=None):
    """Stack variable-length token id lists. Returns (ids, pad_mask); the
    mask is True on padded positions. Padding uses id 0 (end-of-text)."""
    if not token_lists:
        raise ValueError("empty token batch")
    L = max(len(ts) for ts in token_lists)
    ids = torch.zeros(len(token_lists), L, dtype=torch.long, device=device)
    mask = torch.ones(len(token_lists), L, dtype=torch.bool, device=device)
    for i, ts in enumerate(token_lists):
        ids[i, : len(ts)] = torch.as_tensor(ts, dtype=torch.long, device=device)
        mask[i, : len(ts)] = False
    return ids, mask


class MotionDenoiser(nn.Module):
    """v_theta(x_t, t, text, ctx) -> velocity, per the configured CondArch."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden_dim
        self.e_in = nn.Sequential(
            nn.Linear(FRAME_DIM, h), nn.SiLU(), nn.Linear(h, h)
        )
        self.e_ctx = nn.Sequential(
            nn.Linear(FRAME_DIM, h), nn.SiLU(), nn.Linear(h, h)
        )
        self.meta_table = nn.Parameter(torch.zeros(NUM_META_OPS, FRAME_DIM))
        nn.init.normal_(self.meta_table, std=0.02)
        self.pos = nn.Parameter(torch.empty(cfg.max_T, h))
        nn.init.normal_(self.pos, std=0.02)
        self.t_mlp = nn.Sequential(nn.Linear(h, h), nn.SiLU(), nn.Linear(h, h))
        self.text_encoder = TextEncoder(cfg)
        self.blocks = nn.ModuleList(
            Block(h, cfg.text_dim, cfg.n_heads, cfg.ffn_mult)
            for _ in range(cfg.n_layers)
        )
        self.final = FinalLayer(h, FRAME_DIM)

        if cfg.cond_arch is CondArch.ADALN:
            self.pool_query = nn.Parameter(torch.empty(h))
            nn.init.normal_(self.pool_query, std=0.02)
            self.pool_k = nn.Linear(h, h)
            self.pool_v = nn.Linear(h, h)
            self.pool_out = nn.Linear(h, h)
        if cfg.cond_arch is CondArch.CONTROLNET:
            self.ctrl_blocks = nn.ModuleList(
                Block(h, cfg.text_dim, cfg.n_heads, cfg.ffn_mult)
                for _ in range(cfg.n_layers)
            )
            self.ctrl_projs = nn.ModuleList(
                nn.Linear(h, h) for _ in range(cfg.n_layers)
            )
            for proj in self.ctrl_projs:
                nn.init.zeros_(proj.weight)
                nn.init.zeros_(proj.bias)
        self.init_context_from_base()

    # ----------------------------------------------------------- preparation

    def init_context_from_base(self) -> None:
        """Copy E_ctx from E_in exactly; re-clone the controlnet branch from
        the base blocks and zero its injection projections."""
        with torch.no_grad():
            self.e_ctx.load_state_dict(copy.deepcopy(self.e_in.state_dict()))
            if self.cfg.cond_arch is CondArch.CONTROLNET:
                for blk, cblk in zip(self.blocks, self.ctrl_blocks):
                    cblk.load_state_dict(copy.deepcopy(blk.state_dict()))
                for proj in self.ctrl_projs:
                    proj.weight.zero_()
                    proj.bias.zero_()

    def base_param_names(self) -> set[str]:
        """Parameters of the context-free base model."""
        context = self.context_param_names()
        return {n for n, _ in self.named_parameters() if n not in context}

    def context_param_names(self) -> set[str]:
        names = {n for n, _ in self.named_parameters() if n.startswith("e_ctx.")}
        names.add("meta_table")
        if self.cfg.cond_arch is CondArch.ADALN:
            names |= {
                n
                for n, _ in self.named_parameters()
                if n == "pool_query" or n.startswith(("pool_k.", "pool_v.", "pool_out."))
            }
        if self.cfg.cond_arch is CondArch.CONTROLNET:
            names |= {
                n
                for n, _ in self.named_parameters()
                if n.startswith(("ctrl_blocks.", "ctrl_projs."))
            }
        return names

    def freeze_base(self) -> None:
        """Controlnet fine-tuning: only the branch and context params train."""
        context = self.context_param_names()
        for n, p in self.named_parameters():
            p.requires_grad = n in context

    # -------------------------------------------------------------- encoding

    def encode_text(self, token_lists: list[list[int]], device=None):
        """Token id lists -> (features (B, L, text_dim), pad mask (B, L))."""
        device = device or self.pos.device
        ids, mask = pad_token_batch(token_lists, device=device)
        return self.text_encoder(ids, mask), mask

    def _pool_context(self, e_ctx: torch.Tensor) -> torch.Tensor:
        """Single-query attention pooling of context rows -> (B, hidden)."""
        B = e_ctx.shape[0]
        q = self.pool_query.to(e_ctx.dtype).expand(B, 1, -1)
        k = self.pool_k(e_ctx)
        v = self.pool_v(e_ctx)
        scores = q @ k.transpose(1, 2) / math.sqrt(k.shape[-1])
        pooled = torch.softmax(scores, dim=-1) @ v
        return self.pool_out(pooled.squeeze(1))

    # --------------------------------------------------------------- forward

    def _check_shapes(self, x_t, ctx):
        if x_t.ndim != 3 or x_t.shape[2] != FRAME_DIM:
            raise ShapeMismatch(f"x_t must be (B, T, {FRAME_DIM})")
        if x_t.shape[1] > self.cfg.max_T:
            raise ShapeMismatch(
                f"T={x_t.shape[1]} exceeds max_T={self.cfg.max_T}"
            )
        if ctx is not None and ctx.shape != x_t.shape:
            raise ShapeMismatch("ctx must match x_t shape")

    def forward(self, x_t, t, text, text_mask=None, ctx=None):
        """Predict velocity. x_t (B,T,201); t scalar or (B,) in [0,1]; text
        (B,L,text_dim) from encode_text; ctx (B,T,201) context lane or None
        for the base (context-free) pass."""
        self._check_shapes(x_t, ctx)
        B, T, _ = x_t.shape
        if not torch.is_tensor(t):
            t = torch.full((B,), float(t), dtype=x_t.dtype, device=x_t.device)
        elif t.ndim == 0:
            t = t.expand(B).to(x_t.dtype)
        cond = self.t_mlp(timestep_embedding(t, self.cfg.hidden_dim))

        arch = self.cfg.cond_arch
        pos = self.pos[:T].to(x_t.dtype)
        h = self.e_in(x_t) + pos

        if ctx is None:
            for blk in self.blocks:
                h = blk(h, cond, text, text_mask)
            return self.final(h, cond)

        e_ctx = self.e_ctx(ctx)
        if arch is CondArch.TEMPORAL_FUSION:
            h = h + e_ctx
            for blk in self.blocks:
                h = blk(h, cond, text, text_mask)
            return self.final(h, cond)

        if arch is CondArch.SEQ_CONCAT:
            # context tokens reuse the noisy tokens' positional rows; the
            # asymmetric mask stops context rows from reading noisy rows
            seq = torch.cat([h, e_ctx + pos], dim=1)
            attn_mask = torch.zeros(2 * T, 2 * T, dtype=x_t.dtype, device=x_t.device)
            attn_mask[T:, :T] = -torch.inf
            for blk in self.blocks:
                seq = blk(seq, cond, text, text_mask, attn_mask)
            return self.final(seq[:, :T], cond)

        if arch is CondArch.ADALN:
            cond = cond + self._pool_context(e_ctx)
            for blk in self.blocks:
                h = blk(h, cond, text, text_mask)
            return self.final(h, cond)

        # controlnet: frozen base stream plus trainable branch
        hc = h + e_ctx
        for blk, cblk, proj in zip(self.blocks, self.ctrl_blocks, self.ctrl_projs):
            hc = cblk(hc, cond, text, text_mask)
            h = blk(h, cond, text, text_mask) + proj(hc)
        return self.final(h, cond)
