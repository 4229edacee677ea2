"""Vision Transformer with Shifted Patch Tokenization for small datasets."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from thermask.models.cae import N_CLASSES

# (dx, dy) of the four diagonal shifts, in units of half a patch
DIAGONAL_SHIFTS = ((-1, -1), (1, -1), (-1, 1), (1, 1))


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 128
    channels: int = 1
    patch_size: int = 8
    dim: int = 512
    depth: int = 4
    heads: int = 8
    mlp_dim: int = 512
    dropout: float = 0.1
    emb_dropout: float = 0.1
    spt: bool = True
    n_classes: int = N_CLASSES

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError(f"image side {self.image_size} not divisible by patch size {self.patch_size}")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")

    @property
    def num_tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def token_dim(self) -> int:
        copies = 5 if self.spt else 1
        return self.patch_size**2 * copies * self.channels

    def to_dict(self) -> dict:
        return asdict(self)


def shift_image(x: torch.Tensor, dx: int, dy: int) -> torch.Tensor:
    """Translate by (dx, dy) pixels with zero fill; positive dx moves content right."""
    h, w = x.shape[-2:]
    padded = F.pad(x, (max(dx, 0), max(-dx, 0), max(dy, 0), max(-dy, 0)))
    top, left = max(-dy, 0), max(-dx, 0)
    return padded[..., top : top + h, left : left + w]


def patchify(x: torch.Tensor, patch_size: int) -> torch.Tensor:
    """(N, C, H, W) -> (N, (H/p)*(W/p), p*p*C), row-major patches."""
    n, c, h, w = x.shape
    if h % patch_size or w % patch_size:
        raise ValueError(f"image {h}x{w} not divisible by patch size {patch_size}")
    x = x.reshape(n, c, h // patch_size, patch_size, w // patch_size, patch_size)
    x = x.permute(0, 2, 4, 3, 5, 1)
    return x.reshape(n, (h // patch_size) * (w // patch_size), patch_size * patch_size * c)


def spt_tokenize(batch: torch.Tensor, patch_size: int) -> torch.Tensor:
    """Raw SPT tokens: image plus its four diagonal half-patch shifts, patchified."""
    if batch.dim() != 4:
        raise ValueError(f"expected (N, C, H, W), got {tuple(batch.shape)}")
    s = patch_size // 2
    shifted = [shift_image(batch, dx * s, dy * s) for dx, dy in DIAGONAL_SHIFTS]
    return patchify(torch.cat([batch, *shifted], dim=1), patch_size)


class ShiftedPatchTokenizer(nn.Module):
    def __init__(self, config: ViTConfig):
        super().__init__()
        self.patch_size = config.patch_size
        self.spt = config.spt
        self.norm = nn.LayerNorm(config.token_dim)
        self.proj = nn.Linear(config.token_dim, config.dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        tokens = spt_tokenize(x, self.patch_size) if self.spt else patchify(x, self.patch_size)
        return self.proj(self.norm(tokens))


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=False)
        self.out = nn.Sequential(nn.Linear(dim, dim), nn.Dropout(dropout))
        self.attn_drop = nn.Dropout(dropout)

    def forward(self, x):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        x = (self.attn_drop(attn) @ v).transpose(1, 2).reshape(b, n, d)
        return self.out(x)


class FeedForward(nn.Sequential):
    def __init__(self, dim: int, hidden: int, dropout: float):
        super().__init__(
            nn.Linear(dim, hidden),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(hidden, dim),
            nn.Dropout(dropout),
        )


class Block(nn.Module):
    def __init__(self, config: ViTConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(config.dim)
        self.attn = Attention(config.dim, config.heads, config.dropout)
        self.norm2 = nn.LayerNorm(config.dim)
        self.ff = FeedForward(config.dim, config.mlp_dim, config.dropout)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.ff(self.norm2(x))


class SPTViT(nn.Module):
    """SPT -> embedding dropout -> pre-norm transformer -> mean pool -> logits."""

    kind = "vit"

    def __init__(self, config: ViTConfig):
        super().__init__()
        self.config = config
        self.tokenizer = ShiftedPatchTokenizer(config)
        self.pos_embedding = nn.Parameter(torch.randn(1, config.num_tokens, config.dim) * 0.02)
        self.emb_dropout = nn.Dropout(config.emb_dropout)
        self.blocks = nn.Sequential(*[Block(config) for _ in range(config.depth)])
        self.head = nn.Sequential(nn.LayerNorm(config.dim), nn.Linear(config.dim, config.n_classes))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        c = self.config
        if x.dim() != 4 or tuple(x.shape[1:]) != (c.channels, c.image_size, c.image_size):
            raise ValueError(f"expected input of shape (N, {c.channels}, {c.image_size}, {c.image_size}), got {tuple(x.shape)}")
        tokens = self.emb_dropout(self.tokenizer(x) + self.pos_embedding)
        return self.head(self.blocks(tokens).mean(dim=1))

    @torch.no_grad()
    def predict_proba(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.forward(x), dim=1)

    def config_dict(self) -> dict:
        return self.config.to_dict()


def build_vit(config: ViTConfig | None = None, seed: int | None = None) -> SPTViT:
    if seed is not None:
        torch.manual_seed(seed)
    return SPTViT(config or ViTConfig())


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
