from contextlib import contextmanager
from dataclasses import dataclass, replace
from typing import Iterator, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from enums.forward_mode import ForwardModeEnum
from exceptions.pipeline_exceptions import ShapeException
from models.pos_embed import sincos_2d
from requests_models.train_config import ModelParams


Logits = torch.Tensor


@dataclass(frozen=True)
class PatchGrid:
    """Row-major flattened patches: [B, N, P*P*C]."""
    patches: torch.Tensor
    grid_h: int
    grid_w: int
    patch_size: int
    channels: int

    @property
    def num_patches(self) -> int:
        return self.grid_h * self.grid_w


@dataclass(frozen=True)
class TokenSequence:
    tokens: torch.Tensor
    pos_embedded: bool = True
    has_class_token: bool = False

    def with_tokens(self, tokens: torch.Tensor) -> "TokenSequence":
        return replace(self, tokens=tokens)


def patchify(images: torch.Tensor, patch_size: int) -> PatchGrid:
    if images.ndim != 4:
        raise ShapeException(f"expected images [B, C, H, W], got {tuple(images.shape)}")
    b, c, h, w = images.shape
    if h % patch_size != 0 or w % patch_size != 0:
        raise ShapeException(f"image {h}x{w} is not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    x = images.reshape(b, c, gh, patch_size, gw, patch_size)
    x = torch.einsum("nchpwq->nhwpqc", x)
    x = x.reshape(b, gh * gw, patch_size * patch_size * c)
    return PatchGrid(patches=x, grid_h=gh, grid_w=gw, patch_size=patch_size, channels=c)


def unpatchify(grid: PatchGrid) -> torch.Tensor:
    b, n, d = grid.patches.shape
    p, c = grid.patch_size, grid.channels
    if n != grid.num_patches or d != p * p * c:
        raise ShapeException(
            f"patches {tuple(grid.patches.shape)} do not match grid {grid.grid_h}x{grid.grid_w}, patch {p}, channels {c}")
    x = grid.patches.reshape(b, grid.grid_h, grid.grid_w, p, p, c)
    x = torch.einsum("nhwpqc->nchpwq", x)
    return x.reshape(b, c, grid.grid_h * p, grid.grid_w * p)


def gather_tokens(x: torch.Tensor, index: torch.Tensor) -> torch.Tensor:
    """x [B, N, D], index [B, M] -> [B, M, D]"""
    return torch.gather(x, 1, index.unsqueeze(-1).expand(-1, -1, x.shape[-1]))


@contextmanager
def forward_mode(module: nn.Module, mode: ForwardModeEnum) -> Iterator[nn.Module]:
    was_training = module.training
    module.train(ForwardModeEnum(mode) == ForwardModeEnum.TRAIN)
    try:
        yield module
    finally:
        module.train(was_training)


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int, dropout: float = 0.0):
        super().__init__()
        if dim % num_heads != 0:
            raise ShapeException(f"width {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.attn_drop = nn.Dropout(dropout)
        self.proj = nn.Linear(dim, dim)
        self.proj_drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        qkv = self.qkv(x).reshape(b, t, 3, self.num_heads, d // self.num_heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.unbind(0)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = self.attn_drop(attn.softmax(dim=-1))
        x = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return self.proj_drop(self.proj(x))


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden_dim: int, dropout: float = 0.0):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.drop(self.fc2(self.drop(F.gelu(self.fc1(x)))))


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0, dropout: float = 0.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TransformerStack(nn.Module):
    """Blocks followed by a final LayerNorm; zero depth is the identity."""

    def __init__(self, dim: int, depth: int, num_heads: int, mlp_ratio: float, dropout: float):
        super().__init__()
        self.width = dim
        self.blocks = nn.ModuleList([Block(dim, num_heads, mlp_ratio, dropout) for _ in range(depth)])
        self.norm = nn.LayerNorm(dim) if depth > 0 else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return self.norm(x)


def init_linear_and_norm(module: nn.Module) -> None:
    if isinstance(module, nn.Linear):
        nn.init.xavier_uniform_(module.weight)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class ViTClassifier(nn.Module):
    """
    Shared encoder f plus the classification head.

    The classification path sees all N patches plus the class token; the
    reconstruction path feeds `encode` a visible-only subsequence built with
    `embed_patches(..., positions=visible_idx)`.
    """

    def __init__(self, params: ModelParams):
        super().__init__()
        self.params = params
        self.patch_size = params.patch_size
        self.grid_size = params.image_size // params.patch_size
        patch_dim = params.patch_size ** 2 * params.in_channels
        width = params.encoder_width

        self.patch_embed = nn.Linear(patch_dim, width)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, width))
        self.register_buffer("pos_embed", sincos_2d(width, self.grid_size, self.grid_size, class_token=True))
        self.encoder = TransformerStack(width, params.encoder_depth, params.encoder_heads,
                                        params.mlp_ratio, params.dropout)
        self.head = nn.Linear(width, params.num_classes)
        self._init_weights()

    def _init_weights(self) -> None:
        self.apply(init_linear_and_norm)
        nn.init.trunc_normal_(self.patch_embed.weight, std=0.02)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        nn.init.trunc_normal_(self.head.weight, std=0.02)

    @property
    def num_patches(self) -> int:
        return self.grid_size ** 2

    def patchify(self, images: torch.Tensor) -> PatchGrid:
        expected = self.params.image_size
        if images.ndim != 4 or images.shape[1] != self.params.in_channels \
                or images.shape[2] != expected or images.shape[3] != expected:
            raise ShapeException(
                f"expected images [B, {self.params.in_channels}, {expected}, {expected}], got {tuple(images.shape)}")
        return patchify(images, self.patch_size)

    def embed_patches(self, patches: torch.Tensor, positions: Optional[torch.Tensor] = None) -> TokenSequence:
        """Linear patch embedding plus the positional rows of `positions` (default: all, row-major)."""
        tokens = self.patch_embed(patches)
        table = self.pos_embed[:, 1:, :]
        if positions is None:
            if tokens.shape[1] != table.shape[1]:
                raise ShapeException(f"{tokens.shape[1]} patches given without positions; grid has {table.shape[1]}")
            tokens = tokens + table
        else:
            tokens = tokens + gather_tokens(table.expand(tokens.shape[0], -1, -1), positions)
        return TokenSequence(tokens=tokens, pos_embedded=True, has_class_token=False)

    def with_class_token(self, sequence: TokenSequence) -> TokenSequence:
        if sequence.has_class_token:
            return sequence
        cls = (self.cls_token + self.pos_embed[:, :1, :]).expand(sequence.tokens.shape[0], -1, -1)
        return TokenSequence(tokens=torch.cat([cls, sequence.tokens], dim=1),
                             pos_embedded=sequence.pos_embedded, has_class_token=True)

    def encode(self, sequence: TokenSequence) -> TokenSequence:
        tokens = sequence.tokens
        if tokens.ndim != 3 or tokens.shape[-1] != self.encoder.width:
            raise ShapeException(f"expected tokens [B, T, {self.encoder.width}], got {tuple(tokens.shape)}")
        if not sequence.pos_embedded:
            raise ShapeException("positional embeddings must be added before encoding")
        return sequence.with_tokens(self.encoder(tokens))

    def forward(self, images: torch.Tensor) -> Logits:
        grid = self.patchify(images)
        latent = self.encode(self.with_class_token(self.embed_patches(grid.patches)))
        return self.head(latent.tokens[:, 0])

    def classify(self, images: torch.Tensor, mode: ForwardModeEnum = ForwardModeEnum.EVAL) -> Logits:
        with forward_mode(self, mode):
            return self(images)
