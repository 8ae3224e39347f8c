"""Transformer building blocks: rotary phases, windowed multi-head
attention, pre-norm encoder blocks, and cross-attention blocks.

All tensors are float64 and carry a batch dimension.  Attention masks are
boolean "allowed" matrices (True = query may attend key).  Invalid token
rows are kept all-zero after every block.
"""

from __future__ import annotations

import dataclasses
import math

import torch
from torch import nn


@dataclasses.dataclass(frozen=True)
class TransformerConfig:
    depth: int
    heads: int = 8
    window: int | None = 32
    width: int = 256
    ff_hidden: int = 1024

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be >= 1")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")


def rotary_cos_sin(positions: torch.Tensor, head_dim: int, base: float = 10000.0):
    """Rotary phase tables for integer positions.

    Args:
        positions: (B, N) integer tensor of sequence positions.
        head_dim: per-head width (must be even).

    Returns:
        (cos, sin), each (B, N, head_dim // 2) float64.
    """
    half = head_dim // 2
    inv_freq = base ** (-torch.arange(half, dtype=torch.float64) / half)
    angles = positions.to(torch.float64)[..., None] * inv_freq
    return torch.cos(angles), torch.sin(angles)


def apply_rotary(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Rotate pairs of channels of (B, H, N, head_dim) by per-position phases."""
    x1, x2 = x[..., 0::2], x[..., 1::2]
    c, s = cos[:, None], sin[:, None]  # broadcast over heads
    out = torch.empty_like(x)
    out[..., 0::2] = x1 * c - x2 * s
    out[..., 1::2] = x1 * s + x2 * c
    return out


def sinusoidal_encoding(positions: torch.Tensor, width: int, base: float = 10000.0) -> torch.Tensor:
    """Classic fixed sin/cos encoding of integer positions -> (B, N, width)."""
    half = width // 2
    inv_freq = base ** (-torch.arange(half, dtype=torch.float64) / half)
    angles = positions.to(torch.float64)[..., None] * inv_freq
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


def window_allowed(q_positions: torch.Tensor, k_positions: torch.Tensor,
                   window: int | None) -> torch.Tensor | None:
    """(B, Nq, Nk) True where |q_pos - k_pos| <= window; None if unwindowed."""
    if window is None:
        return None
    diff = q_positions[:, :, None] - k_positions[:, None, :]
    return diff.abs() <= window


class MultiheadAttention(nn.Module):
    """Standard scaled dot-product attention with a boolean allowed-mask.

    Queries whose allowed-key set is empty produce exact-zero output rows
    (they are temporarily pointed at key 0 so the softmax stays finite,
    then zeroed).
    """

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.q_proj = nn.Linear(width, width)
        self.k_proj = nn.Linear(width, width)
        self.v_proj = nn.Linear(width, width)
        self.out_proj = nn.Linear(width, width)

    def forward(self, query, key_value, allowed, q_positions=None, kv_positions=None):
        B, Nq, _ = query.shape
        Nk = key_value.shape[1]
        H, dh = self.heads, self.head_dim
        q = self.q_proj(query).view(B, Nq, H, dh).transpose(1, 2)
        k = self.k_proj(key_value).view(B, Nk, H, dh).transpose(1, 2)
        v = self.v_proj(key_value).view(B, Nk, H, dh).transpose(1, 2)
        if q_positions is not None:
            q = apply_rotary(q, *rotary_cos_sin(q_positions, dh))
        if kv_positions is not None:
            k = apply_rotary(k, *rotary_cos_sin(kv_positions, dh))

        logits = (q @ k.transpose(-2, -1)) / math.sqrt(dh)
        any_allowed = allowed.any(dim=-1)  # (B, Nq)
        safe = allowed.clone()
        safe[..., 0] |= ~any_allowed
        logits = logits.masked_fill(~safe[:, None], float("-inf"))
        attn = torch.softmax(logits, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, Nq, H * dh)
        out = self.out_proj(out)
        return out * any_allowed[..., None].to(out.dtype)


class FeedForward(nn.Module):
    def __init__(self, width: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(width, hidden), nn.GELU(), nn.Linear(hidden, width))

    def forward(self, x):
        return self.net(x)


class EncoderBlock(nn.Module):
    """Pre-norm self-attention block with windowed, maskable attention."""

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.window = cfg.window
        self.norm1 = nn.LayerNorm(cfg.width)
        self.attn = MultiheadAttention(cfg.width, cfg.heads)
        self.norm2 = nn.LayerNorm(cfg.width)
        self.ff = FeedForward(cfg.width, cfg.ff_hidden)

    def forward(self, x, positions, valid, extra_allowed=None):
        allowed = valid[:, None, :].expand(-1, x.shape[1], -1)
        win = window_allowed(positions, positions, self.window)
        if win is not None:
            allowed = allowed & win
        if extra_allowed is not None:
            allowed = allowed & extra_allowed
        keep = valid[..., None].to(x.dtype)
        h = self.norm1(x)
        x = (x + self.attn(h, h, allowed, positions, positions)) * keep
        x = (x + self.ff(self.norm2(x))) * keep
        return x


class TransformerStack(nn.Module):
    """A sequence of encoder blocks; depth 0 is the identity."""

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.blocks = nn.ModuleList(EncoderBlock(cfg) for _ in range(cfg.depth))

    def forward(self, x, positions, valid, extra_allowed=None):
        if x.shape[1] == 0:
            return x
        for block in self.blocks:
            x = block(x, positions, valid, extra_allowed)
        return x


class CrossAttentionBlock(nn.Module):
    """Pre-norm cross-attention (+ feed-forward) from queries to a key set."""

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.norm_q = nn.LayerNorm(cfg.width)
        self.norm_kv = nn.LayerNorm(cfg.width)
        self.attn = MultiheadAttention(cfg.width, cfg.heads)
        self.norm2 = nn.LayerNorm(cfg.width)
        self.ff = FeedForward(cfg.width, cfg.ff_hidden)

    def forward(self, q, kv, kv_allowed):
        # kv_allowed: (B, Nk) keys every query may use
        allowed = kv_allowed[:, None, :].expand(-1, q.shape[1], -1)
        q = q + self.attn(self.norm_q(q), self.norm_kv(kv), allowed)
        q = q + self.ff(self.norm2(q))
        return q
