"""Minimal frozen ViT encoder used as the patch-feature backbone.

Weights load from a checkpoint when given; otherwise they are initialized
deterministically from a seed, so exports are reproducible end to end.  The
weight digest recorded in the manifest covers every parameter tensor.
"""

from __future__ import annotations

import hashlib

import torch
from torch import nn

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * mlp_ratio), nn.GELU(), nn.Linear(dim * mlp_ratio, dim)
        )

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class PatchVit(nn.Module):
    """Patchify -> [CLS | patches] + positions -> transformer -> patch tokens."""

    def __init__(
        self,
        resolution: int = 224,
        patch_size: int = 16,
        dim: int = 64,
        depth: int = 2,
        heads: int = 4,
    ):
        super().__init__()
        if resolution % patch_size:
            raise ValueError(f"resolution {resolution} not divisible by patch size {patch_size}")
        self.resolution = resolution
        self.patch_size = patch_size
        self.grid = resolution // patch_size
        self.dim = dim
        self.proj = nn.Conv2d(3, dim, kernel_size=patch_size, stride=patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, self.grid * self.grid + 1, dim))
        self.blocks = nn.ModuleList([Block(dim, heads) for _ in range(depth)])
        self.norm = nn.LayerNorm(dim)

    @property
    def n_patches(self) -> int:
        return self.grid * self.grid

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        """(3, H, W) normalized image -> (n_patches, dim); the CLS token is
        dropped."""
        x = self.proj(image.unsqueeze(0))  # (1, dim, g, g)
        x = x.flatten(2).transpose(1, 2)  # (1, g*g, dim)
        x = torch.cat([self.cls_token, x], dim=1) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return x[0, 1:, :]


def build_backbone(
    resolution: int,
    patch_size: int = 16,
    dim: int = 64,
    depth: int = 2,
    heads: int = 4,
    weights_path=None,
    seed: int = 0,
) -> tuple[PatchVit, str]:
    """Construct the frozen model; returns (model, weight digest)."""
    model = PatchVit(resolution, patch_size, dim, depth, heads)
    if weights_path is not None:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    else:
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in model.parameters():
                p.copy_(torch.randn(p.shape, generator=gen) * 0.02)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model, weight_digest(model)


def weight_digest(model: nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(str(tuple(tensor.shape)).encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
