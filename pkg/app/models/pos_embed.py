import numpy as np
import torch

from exceptions.pipeline_exceptions import ShapeException


def sincos_1d(embed_dim: int, positions: np.ndarray) -> np.ndarray:
    """[M] positions -> [M, embed_dim]; first half sin, second half cos."""
    if embed_dim % 2 != 0:
        raise ShapeException(f"1-D sine-cosine width must be even, got {embed_dim}")
    omega = np.arange(embed_dim // 2, dtype=np.float64) / (embed_dim / 2.0)
    omega = 1.0 / 10000 ** omega
    out = np.einsum("m,d->md", positions.reshape(-1).astype(np.float64), omega)
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def sincos_2d(embed_dim: int, grid_h: int, grid_w: int, class_token: bool = False) -> torch.Tensor:
    """
    Fixed 2-D sine-cosine table in row-major patch order.

    Returns:
        [1, grid_h * grid_w (+1), embed_dim] float32 tensor; the class-token row is zeros.
    """
    if embed_dim % 4 != 0:
        raise ShapeException(f"2-D sine-cosine width must be a multiple of 4, got {embed_dim}")
    rows, cols = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
    emb_h = sincos_1d(embed_dim // 2, rows)
    emb_w = sincos_1d(embed_dim // 2, cols)
    table = np.concatenate([emb_h, emb_w], axis=1)
    if class_token:
        table = np.concatenate([np.zeros((1, embed_dim)), table], axis=0)
    return torch.from_numpy(table).float().unsqueeze(0)
