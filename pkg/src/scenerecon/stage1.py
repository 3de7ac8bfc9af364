"""Stage 1: the 3D point autoencoder.

A transformer encoder compresses a point cloud into a fixed set of latent
tokens; a joint decoder predicts flow velocities for noisy query points
conditioned on those tokens. Queries are initialized from farthest point
sampling, learnable tokens, or a hybrid of both. The latent carries no KL
or other regularization.

In deterministic mode (default) every reduction over the unordered point
set runs in a canonical lexicographic point order, so permutation
invariance/equivariance holds bitwise, not just to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor, nn

from .flowmatch import FlowConfig, euler_sample, fm_loss, interpolate, sample_timestep, velocity_target
from .geometry import PointCloud, farthest_point_sample
from .layers import AdaLayerNorm, Attention, CrossAttnBlock, FeedForward, SelfAttnBlock, TimeConditioner, assert_finite

QUERY_MODES = ("point", "learnable", "hybrid")
DECODER_MODES = ("joint", "independent")
OBJECTIVES = ("flow", "chamfer")


@dataclass
class Stage1Config:
    """Autoencoder hyperparameters. Desk defaults; the paper-scale operating
    point (768 tokens, 128 channels, 10k input points) is config-reachable."""

    m_tokens: int = 64
    channels: int = 64
    heads: int = 0  # 0 = channels // 16 (min 1)
    encoder_self_layers: int = 8
    decoder_blocks: int = 3
    query_mode: str = "hybrid"
    fourier_freqs: int = 8
    decoder_mode: str = "joint"
    objective: str = "flow"
    ffn_mult: int = 4
    deterministic: bool = True

    def __post_init__(self):
        if self.heads == 0:
            self.heads = max(1, self.channels // 16)
        if self.channels % self.heads:
            raise ValueError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.query_mode not in QUERY_MODES:
            raise ValueError(f"query_mode must be one of {QUERY_MODES}")
        if self.decoder_mode not in DECODER_MODES:
            raise ValueError(f"decoder_mode must be one of {DECODER_MODES}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")


def fourier_features(points: np.ndarray, n_freqs: int) -> np.ndarray:
    """Raw coordinates plus [sin(2^j pi p), cos(2^j pi p)] for j < n_freqs."""
    feats = [points]
    for j in range(n_freqs):
        ang = (2.0**j) * math.pi * points
        feats.append(np.sin(ang))
        feats.append(np.cos(ang))
    return np.concatenate(feats, axis=1)


class PointEmbed(nn.Module):
    """Fourier feature lift followed by a learned affine map to C channels."""

    def __init__(self, channels: int, n_freqs: int):
        super().__init__()
        self.n_freqs = n_freqs
        self.proj = nn.Linear(3 * (1 + 2 * n_freqs), channels)

    def forward(self, points: Tensor) -> Tensor:
        feats = [points]
        for j in range(self.n_freqs):
            ang = (2.0**j) * math.pi * points
            feats.append(torch.sin(ang))
            feats.append(torch.cos(ang))
        return self.proj(torch.cat(feats, dim=1))


class JointDecoderBlock(nn.Module):
    """Point-token information exchange at token cost.

    (i) cross-attention pulls point features into the tokens, (ii) token
    self-attention mixes global context, (iii) a second cross-attention
    pushes it back to the points. All normalizations are time-modulated.
    """

    def __init__(self, dim: int, heads: int, ffn_mult: int):
        super().__init__()
        self.tok_norm_q = AdaLayerNorm(dim)
        self.tok_norm_kv = AdaLayerNorm(dim)
        self.tok_cross = Attention(dim, heads)
        self.tok_self_norm = AdaLayerNorm(dim)
        self.tok_self = Attention(dim, heads)
        self.tok_ff_norm = AdaLayerNorm(dim)
        self.tok_ff = FeedForward(dim, ffn_mult)
        self.pt_norm_q = AdaLayerNorm(dim)
        self.pt_norm_kv = AdaLayerNorm(dim)
        self.pt_cross = Attention(dim, heads)
        self.pt_ff_norm = AdaLayerNorm(dim)
        self.pt_ff = FeedForward(dim, ffn_mult)

    def forward(self, pts: Tensor, tokens: Tensor, cond: Tensor) -> tuple[Tensor, Tensor]:
        tokens = tokens + self.tok_cross(self.tok_norm_q(tokens, cond), self.tok_norm_kv(pts, cond))
        h = self.tok_self_norm(tokens, cond)
        tokens = tokens + self.tok_self(h, h)
        tokens = tokens + self.tok_ff(self.tok_ff_norm(tokens, cond))
        pts = pts + self.pt_cross(self.pt_norm_q(pts, cond), self.pt_norm_kv(tokens, cond))
        pts = pts + self.pt_ff(self.pt_ff_norm(pts, cond))
        return pts, tokens


class IndependentDecoderBlock(nn.Module):
    """Cross-attention-only ablation: points read tokens but never exchange
    information with each other; the token stream stays fixed."""

    def __init__(self, dim: int, heads: int, ffn_mult: int):
        super().__init__()
        self.pt_norm_q = AdaLayerNorm(dim)
        self.pt_norm_kv = AdaLayerNorm(dim)
        self.pt_cross = Attention(dim, heads)
        self.pt_ff_norm = AdaLayerNorm(dim)
        self.pt_ff = FeedForward(dim, ffn_mult)

    def forward(self, pts: Tensor, tokens: Tensor, cond: Tensor) -> tuple[Tensor, Tensor]:
        pts = pts + self.pt_cross(self.pt_norm_q(pts, cond), self.pt_norm_kv(tokens, cond))
        pts = pts + self.pt_ff(self.pt_ff_norm(pts, cond))
        return pts, tokens


def _lex_order(points: np.ndarray) -> np.ndarray:
    """Canonical point order: lexicographic by (x, y, z)."""
    return np.lexsort((points[:, 2], points[:, 1], points[:, 0]))


class PointAutoencoder(nn.Module):
    """Encoder (1 cross + N self layers) and flow decoder (joint blocks)."""

    def __init__(self, config: Stage1Config, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        c, h = config.channels, config.heads
        self.embed = PointEmbed(c, config.fourier_freqs)
        self.query_tokens = nn.Parameter(torch.randn(config.m_tokens, c) * 0.02)
        self.hybrid_proj = nn.Linear(2 * c, c) if config.query_mode == "hybrid" else None
        self.enc_cross = CrossAttnBlock(c, h, config.ffn_mult)
        self.enc_self = nn.ModuleList(
            SelfAttnBlock(c, h, config.ffn_mult) for _ in range(config.encoder_self_layers)
        )
        self.dec_embed = PointEmbed(c, config.fourier_freqs)
        self.time_cond = TimeConditioner(c)
        block_cls = JointDecoderBlock if config.decoder_mode == "joint" else IndependentDecoderBlock
        self.dec_blocks = nn.ModuleList(
            block_cls(c, h, config.ffn_mult) for _ in range(config.decoder_blocks)
        )
        self.out_norm = AdaLayerNorm(c)
        self.head = nn.Linear(c, 3)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        self.to(dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.head.weight.dtype

    def _tensor(self, array: np.ndarray) -> Tensor:
        return torch.as_tensor(np.ascontiguousarray(array), dtype=self.dtype)

    def embed_points(self, points: np.ndarray) -> Tensor:
        """Spec surface: Fourier-lift + affine embedding of raw coordinates."""
        return self.embed(self._tensor(points))

    def build_query(self, points: np.ndarray, seed_index: int) -> Tensor:
        """Initial decoder queries per query_mode; needs N >= m_tokens."""
        m = self.config.m_tokens
        if self.config.query_mode != "learnable" and len(points) < m:
            raise ValueError(f"need at least m_tokens={m} points, got {len(points)}")
        if self.config.query_mode == "learnable":
            return self.query_tokens
        sel = farthest_point_sample(PointCloud(points), m, seed_index)
        point_q = self.embed(self._tensor(points[sel]))
        if self.config.query_mode == "point":
            return point_q
        return self.hybrid_proj(torch.cat([point_q, self.query_tokens], dim=1))

    def encode(self, points: np.ndarray, seed_index: int = 0) -> Tensor:
        """Compress a normalized cloud into (m_tokens, channels) latents."""
        if len(points) < self.config.m_tokens:
            raise ValueError(
                f"need at least m_tokens={self.config.m_tokens} points, got {len(points)}"
            )
        q = self.build_query(points, seed_index)
        kv_points = points[_lex_order(points)] if self.config.deterministic else points
        ctx = self.embed(self._tensor(kv_points))
        q = self.enc_cross(q, ctx)
        for i, block in enumerate(self.enc_self):
            q = assert_finite(block(q), f"encoder self-attention layer {i}")
        return q

    def decode_velocity(self, x_t: Tensor | np.ndarray, z: Tensor, t: float) -> Tensor:
        """Velocity prediction for noisy queries x_t at flow time t.

        Resolution-agnostic: any number of query rows works against the same
        latent. Permutation-equivariant over query rows.
        """
        if not 0.0 <= float(t) <= 1.0:
            raise ValueError(f"t must be in [0, 1], got {t}")
        if not torch.is_tensor(x_t):
            x_t = self._tensor(x_t)
        order = None
        if self.config.deterministic:
            order_np = _lex_order(x_t.detach().cpu().numpy())
            order = torch.as_tensor(order_np)
            x_t = x_t[order]
        cond = self.time_cond(x_t.new_tensor(float(t)))
        pts = self.dec_embed(x_t)
        tokens = z
        for i, block in enumerate(self.dec_blocks):
            pts, tokens = block(pts, tokens, cond)
            assert_finite(pts, f"decoder block {i}")
        v = self.head(self.out_norm(pts, cond))
        if order is not None:
            inverse = torch.empty_like(order)
            inverse[order] = torch.arange(len(order))
            v = v[inverse]
        return v

    def velocity_np(self, x: np.ndarray, z: Tensor, t: float) -> np.ndarray:
        with torch.no_grad():
            return self.decode_velocity(self._tensor(x), z, t).double().numpy()


def build_stage1_model(config: Stage1Config, seed: int = 0, dtype: torch.dtype = torch.float32) -> PointAutoencoder:
    torch.manual_seed(seed)
    return PointAutoencoder(config, dtype=dtype)


def chamfer_loss_torch(a: Tensor, b: Tensor) -> Tensor:
    """Differentiable symmetric Chamfer distance between (N,3) and (M,3)."""
    d = torch.cdist(a, b)
    return 0.5 * (d.min(dim=1).values.mean() + d.min(dim=0).values.mean())


def flow_sample_loss(
    model: PointAutoencoder, z: Tensor, x0: np.ndarray, t: float, eps: np.ndarray
) -> Tensor:
    """Flow-matching loss for one sample at fixed draws (t, eps).

    Shared by both training stages: stage 2 calls it with its predicted
    latent in place of the encoder output.
    """
    x_t = interpolate(x0, eps, t)
    target = model._tensor(velocity_target(x0, eps))
    pred = model.decode_velocity(model._tensor(x_t), z, t)
    return fm_loss(pred, target)


def _training_subset(cloud: np.ndarray, n_train: int, rng: np.random.Generator) -> np.ndarray:
    """FPS subset with a random seed point; the full cloud if small enough."""
    if len(cloud) <= n_train:
        return cloud
    seed_index = int(rng.integers(len(cloud)))
    idx = farthest_point_sample(PointCloud(cloud), n_train, seed_index)
    return cloud[idx]


def train_step_ae(
    model: PointAutoencoder,
    optimizer: torch.optim.Optimizer,
    batch: list[np.ndarray],
    rng: np.random.Generator,
    flow_config: FlowConfig,
    n_train: int = 2048,
    grad_clip: float = 1.0,
) -> float:
    """One optimizer step on a batch of normalized clouds; returns the loss."""
    if not batch:
        raise ValueError("batch must be non-empty")
    model.train()
    total = None
    for cloud in batch:
        x0 = _training_subset(cloud, n_train, rng)
        enc_seed = int(rng.integers(len(cloud)))
        z = model.encode(cloud, enc_seed)
        if model.config.objective == "chamfer":
            x1 = rng.uniform(-1.0, 1.0, size=(n_train, 3))
            x1_t = model._tensor(x1)
            pred_x0 = x1_t - model.decode_velocity(x1_t, z, 1.0)
            loss = chamfer_loss_torch(pred_x0, model._tensor(x0))
        else:
            t = sample_timestep(rng, flow_config)
            eps = rng.uniform(-1.0, 1.0, size=x0.shape)
            loss = flow_sample_loss(model, z, x0, t, eps)
        total = loss if total is None else total + loss
    total = total / len(batch)
    if not torch.isfinite(total):
        raise FloatingPointError(f"non-finite training loss: {total.item()}")
    optimizer.zero_grad()
    total.backward()
    if grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return float(total.detach())


def reconstruct(
    model: PointAutoencoder,
    points: PointCloud | np.ndarray,
    n_out: int,
    flow_config: FlowConfig,
    rng: np.random.Generator,
) -> PointCloud:
    """Encode a cloud and sample n_out points back out of the latent."""
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points)
    model.eval()
    with torch.no_grad():
        z = model.encode(pts, int(rng.integers(len(pts))))
    return sample_from_latent(model, z, n_out, flow_config, rng)


def sample_from_latent(
    model: PointAutoencoder,
    z: Tensor,
    n_out: int,
    flow_config: FlowConfig,
    rng: np.random.Generator,
) -> PointCloud:
    """Decode a latent to n_out points (Euler flow, or one pass for the
    chamfer-objective ablation variant)."""
    model.eval()
    if model.config.objective == "chamfer":
        x1 = rng.uniform(-1.0, 1.0, size=(n_out, 3))
        with torch.no_grad():
            v = model.velocity_np(x1, z, 1.0)
        return PointCloud(x1 - v)
    return euler_sample(lambda x, t: model.velocity_np(x, z, t), n_out, flow_config, rng)
