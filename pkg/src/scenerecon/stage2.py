"""Stage 2: unposed images to scene tokens.

Each view is patchified into tokens and prefixed with a per-view learnable
camera register. A bank of learnable scene tokens rides along as an extra
pseudo-frame that reuses the first view's camera token, marking it as the
frame whose coordinate system the output lives in. Alternating frame-level
and global self-attention layers fuse everything; the activations at the
scene-token positions, mapped through a linear head, become the latent fed
to the frozen Stage-1 flow decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .flowmatch import FlowConfig, sample_timestep
from .geometry import PointCloud
from .layers import SelfAttnBlock, assert_finite
from .stage1 import PointAutoencoder, _training_subset, flow_sample_loss, sample_from_latent


@dataclass
class Stage2Config:
    """Image tokenizer and fusion-transformer hyperparameters."""

    image_size: int = 64
    patch_size: int = 8
    layers: int = 4  # frame-level/global attention pairs
    channels: int = 64
    heads: int = 0  # 0 = channels // 16 (min 1)
    max_views: int = 4
    ffn_mult: int = 4

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.heads == 0:
            self.heads = max(1, self.channels // 16)
        if self.channels % self.heads:
            raise ValueError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.max_views < 1:
            raise ValueError("max_views must be >= 1")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def tokens_per_view(self) -> int:
        return self.grid**2


@dataclass
class ViewTokens:
    """Patch tokens (L, C) plus the view's learnable camera register (1, C)."""

    tokens: Tensor
    camera_token: Tensor


class SceneTokenTransformer(nn.Module):
    """K unposed views + learnable scene tokens -> latent (M, C_latent)."""

    def __init__(
        self,
        config: Stage2Config,
        latent_tokens: int,
        latent_channels: int,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.config = config
        self.latent_tokens = latent_tokens
        c = config.channels
        self.patch_proj = nn.Linear(3 * config.patch_size**2, c)
        self.pos_embed = nn.Parameter(torch.randn(config.tokens_per_view, c) * 0.02)
        self.camera_tokens = nn.Parameter(torch.randn(config.max_views, c) * 0.02)
        self.scene_tokens = nn.Parameter(torch.randn(latent_tokens, c) * 0.02)
        self.frame_blocks = nn.ModuleList(
            SelfAttnBlock(c, config.heads, config.ffn_mult) for _ in range(config.layers)
        )
        self.global_blocks = nn.ModuleList(
            SelfAttnBlock(c, config.heads, config.ffn_mult) for _ in range(config.layers)
        )
        self.out_norm = nn.LayerNorm(c)
        self.head = nn.Linear(c, latent_channels)
        self.to(dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.head.weight.dtype

    def tokenize_view(self, image: np.ndarray, view_index: int) -> ViewTokens:
        """Non-overlapping patch embedding + positions + camera register."""
        s, p = self.config.image_size, self.config.patch_size
        image = np.asarray(image)
        if image.shape != (s, s, 3):
            raise ValueError(f"expected image of shape ({s}, {s}, 3), got {image.shape}")
        if not 0 <= view_index < self.config.max_views:
            raise ValueError(f"view_index {view_index} not in [0, {self.config.max_views})")
        g = self.config.grid
        patches = (
            image.reshape(g, p, g, p, 3).transpose(0, 2, 1, 3, 4).reshape(g * g, p * p * 3)
        )
        patches = torch.as_tensor(patches, dtype=self.dtype)
        tokens = self.patch_proj(patches) + self.pos_embed
        return ViewTokens(tokens=tokens, camera_token=self.camera_tokens[view_index : view_index + 1])

    def aggregate(self, views: list[ViewTokens]) -> Tensor:
        """Fuse view frames with the scene pseudo-frame; emit the latent.

        The scene frame is [first view's camera token; scene tokens]. Output
        shape is (latent_tokens, latent_channels) for any view count.
        """
        k = len(views)
        if not 1 <= k <= self.config.max_views:
            raise ValueError(f"view count {k} not in [1, {self.config.max_views}]")
        frames = [torch.cat([vt.camera_token, vt.tokens]) for vt in views]
        frames.append(torch.cat([views[0].camera_token, self.scene_tokens]))
        sizes = [len(f) for f in frames]
        for i, (frame_block, global_block) in enumerate(zip(self.frame_blocks, self.global_blocks)):
            frames = [frame_block(f) for f in frames]
            merged = global_block(torch.cat(frames))
            assert_finite(merged, f"global attention layer {i}")
            frames = list(torch.split(merged, sizes))
        scene = frames[-1][1:]  # drop the camera register
        return self.head(self.out_norm(scene))

    def forward(self, images: list[np.ndarray]) -> Tensor:
        return self.aggregate([self.tokenize_view(img, i) for i, img in enumerate(images)])


def build_stage2_model(
    config: Stage2Config,
    latent_tokens: int,
    latent_channels: int,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
) -> SceneTokenTransformer:
    torch.manual_seed(seed)
    return SceneTokenTransformer(config, latent_tokens, latent_channels, dtype=dtype)


def train_step_img(
    model: SceneTokenTransformer,
    decoder: PointAutoencoder,
    optimizer: torch.optim.Optimizer,
    batch: list[tuple[list[np.ndarray], np.ndarray]],
    rng: np.random.Generator,
    flow_config: FlowConfig,
    n_train: int = 2048,
    grad_clip: float = 1.0,
) -> float:
    """One optimizer step; batch items are (view images, normalized gt cloud).

    Only the scene-token transformer trains: the Stage-1 decoder is frozen
    here and must not be part of the optimizer's parameter set.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    decoder.eval()
    decoder.requires_grad_(False)
    model.train()
    total = None
    for images, cloud in batch:
        z_hat = model(list(images))
        x0 = _training_subset(cloud, n_train, rng)
        t = sample_timestep(rng, flow_config)
        eps = rng.uniform(-1.0, 1.0, size=x0.shape)
        loss = flow_sample_loss(decoder, z_hat.to(decoder.dtype), x0, t, eps)
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


@dataclass
class InferResult:
    cloud: PointCloud
    normalized_units: bool


def infer(
    model: SceneTokenTransformer,
    decoder: PointAutoencoder,
    images: list[np.ndarray],
    n_points: int,
    flow_config: FlowConfig,
    rng: np.random.Generator,
    norm_scale: float | None = None,
    norm_offset: np.ndarray | None = None,
) -> InferResult:
    """Full inference path: tokenize, aggregate, integrate the flow.

    Output lives in the first view's normalized frame; when the per-sample
    normalization is supplied it is mapped back to scene units.
    """
    model.eval()
    decoder.eval()
    with torch.no_grad():
        z_hat = model(list(images)).to(decoder.dtype)
    cloud = sample_from_latent(decoder, z_hat, n_points, flow_config, rng)
    if norm_scale is not None and norm_offset is not None:
        return InferResult(
            PointCloud(cloud.points / norm_scale + np.asarray(norm_offset)), False
        )
    return InferResult(cloud, True)
