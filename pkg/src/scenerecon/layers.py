"""Transformer building blocks shared by the point autoencoder and the
image-to-scene-token model.

All blocks are pre-norm residual and operate on unbatched (N, C) token
matrices; the training loops iterate over samples, which keeps every
forward identical to the single-sample contracts the tests pin down.
Timestep conditioning follows the adaptive-normalization convention:
a sinusoidal embedding of t is mapped to per-layer scale/shift pairs
applied after a parameter-free LayerNorm.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor, nn


def sinusoidal_embedding(t: Tensor, dim: int) -> Tensor:
    """Sin/cos features of a scalar timestep, spread over `dim` channels."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half
    )
    ang = t.reshape(1) * 1000.0 * freqs
    emb = torch.cat([torch.sin(ang), torch.cos(ang)])
    if dim % 2:
        emb = torch.cat([emb, emb.new_zeros(1)])
    return emb


class TimeConditioner(nn.Module):
    """Sinusoidal embedding + MLP producing the conditioning vector."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim * 4), nn.SiLU(), nn.Linear(dim * 4, dim))

    def forward(self, t: Tensor) -> Tensor:
        return self.mlp(sinusoidal_embedding(t, self.dim))


class AdaLayerNorm(nn.Module):
    """LayerNorm without affine params, modulated by the time conditioning.

    The projection is zero-initialized so an untrained block behaves as a
    plain LayerNorm.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim, elementwise_affine=False)
        self.proj = nn.Linear(dim, 2 * dim)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, x: Tensor, cond: Tensor) -> Tensor:
        scale, shift = self.proj(cond).chunk(2)
        return self.norm(x) * (1.0 + scale) + shift


class Attention(nn.Module):
    """Multi-head scaled dot-product attention over (N, C) matrices."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"channels {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.to_q = nn.Linear(dim, dim)
        self.to_k = nn.Linear(dim, dim)
        self.to_v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, q_in: Tensor, kv_in: Tensor) -> Tensor:
        nq, nk = q_in.shape[0], kv_in.shape[0]
        q = self.to_q(q_in).reshape(nq, self.heads, self.head_dim).transpose(0, 1)
        k = self.to_k(kv_in).reshape(nk, self.heads, self.head_dim).transpose(0, 1)
        v = self.to_v(kv_in).reshape(nk, self.heads, self.head_dim).transpose(0, 1)
        out = F.scaled_dot_product_attention(q, k, v)
        return self.proj(out.transpose(0, 1).reshape(nq, -1))


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int = 4):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, dim * mult), nn.GELU(), nn.Linear(dim * mult, dim))

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class SelfAttnBlock(nn.Module):
    """Pre-norm self-attention + feed-forward residual block (no time cond)."""

    def __init__(self, dim: int, heads: int, ffn_mult: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, ffn_mult)

    def forward(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h)
        return x + self.ff(self.norm2(x))


class CrossAttnBlock(nn.Module):
    """Pre-norm cross-attention + feed-forward, queries attend to a context."""

    def __init__(self, dim: int, heads: int, ffn_mult: int = 4):
        super().__init__()
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, ffn_mult)

    def forward(self, x: Tensor, context: Tensor) -> Tensor:
        x = x + self.attn(self.norm_q(x), self.norm_kv(context))
        return x + self.ff(self.norm2(x))


def assert_finite(x: Tensor, what: str) -> Tensor:
    if not torch.isfinite(x).all():
        raise FloatingPointError(f"non-finite activations in {what}")
    return x
