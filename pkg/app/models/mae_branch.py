from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Type

import torch
import torch.nn as nn

from exceptions.pipeline_exceptions import ConfigurationException, MaskingException, ShapeException
from models.pos_embed import sincos_2d
from models.vit_backbone import (
    PatchGrid,
    TokenSequence,
    TransformerStack,
    ViTClassifier,
    gather_tokens,
    init_linear_and_norm,
    patchify,
)
from requests_models.train_config import MAEParams, ModelParams, num_visible


@dataclass(frozen=True)
class MaskPlan:
    visible_idx: torch.Tensor   # [B, N_vis]
    masked_idx: torch.Tensor    # [B, N - N_vis]
    restore_perm: torch.Tensor  # [B, N]; shuffled order -> row-major
    mask_ratio: float

    @classmethod
    def from_indices(cls, visible_idx: torch.Tensor, masked_idx: torch.Tensor, mask_ratio: float) -> "MaskPlan":
        shuffle = torch.cat([visible_idx, masked_idx], dim=1)
        return cls(visible_idx=visible_idx, masked_idx=masked_idx,
                   restore_perm=torch.argsort(shuffle, dim=1), mask_ratio=mask_ratio)

    @property
    def num_patches(self) -> int:
        return self.restore_perm.shape[1]

    def mask(self) -> torch.Tensor:
        """[B, N] with 1.0 at masked positions, row-major."""
        mask = torch.zeros(self.restore_perm.shape, device=self.restore_perm.device)
        return mask.scatter_(1, self.masked_idx, 1.0)


@dataclass(frozen=True)
class Reconstruction:
    pred_patches: torch.Tensor  # [B, N, P*P*C], row-major


def random_masking(grid: PatchGrid, mask_ratio: float,
                   generator: Optional[torch.Generator] = None) -> Tuple[torch.Tensor, MaskPlan]:
    """
    Per-sample uniform shuffle; the first N_vis shuffled positions stay visible.

    Returns:
        (visible patches [B, N_vis, P*P*C], MaskPlan)
    """
    if not 0.0 <= mask_ratio < 1.0:
        raise MaskingException(f"mask_ratio must be in [0, 1), got {mask_ratio}")
    b, n, _ = grid.patches.shape
    keep = num_visible(n, mask_ratio)
    if keep == 0:
        raise MaskingException(f"mask_ratio {mask_ratio} leaves no visible patch out of {n}")
    noise = torch.rand(b, n, generator=generator).to(grid.patches.device)
    ids_shuffle = torch.argsort(noise, dim=1)
    plan = MaskPlan.from_indices(ids_shuffle[:, :keep], ids_shuffle[:, keep:], mask_ratio)
    return gather_tokens(grid.patches, plan.visible_idx), plan


def mae_loss(pred: Reconstruction, target_images: torch.Tensor, plan: MaskPlan,
             norm_pix_target: bool, patch_size: int) -> torch.Tensor:
    """Mean squared pixel error over masked patches only."""
    if plan.masked_idx.shape[1] == 0:
        raise MaskingException("no masked patches to reconstruct")
    target = patchify(target_images, patch_size).patches
    if target.shape != pred.pred_patches.shape:
        raise ShapeException(
            f"prediction {tuple(pred.pred_patches.shape)} does not match target {tuple(target.shape)}")
    if norm_pix_target:
        mean = target.mean(dim=-1, keepdim=True)
        var = target.var(dim=-1, keepdim=True)
        target = (target - mean) / (var + 1.0e-6) ** 0.5
    per_patch = ((pred.pred_patches - target) ** 2).mean(dim=-1)
    return torch.gather(per_patch, 1, plan.masked_idx).mean()


class MAEDecoder(nn.Module):
    """Small decoder, independent of the encoder: mask tokens in, pixels out."""

    def __init__(self, params: ModelParams):
        super().__init__()
        grid = params.image_size // params.patch_size
        self.num_patches = grid * grid
        width = params.decoder_width
        self.decoder_embed = nn.Linear(params.encoder_width, width)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, width))
        self.register_buffer("decoder_pos_embed", sincos_2d(width, grid, grid, class_token=True))
        self.decoder = TransformerStack(width, params.decoder_depth, params.decoder_heads,
                                        params.mlp_ratio, params.dropout)
        self.decoder_pred = nn.Linear(width, params.patch_size ** 2 * params.in_channels)
        self.apply(init_linear_and_norm)
        nn.init.trunc_normal_(self.mask_token, std=0.02)

    def decode(self, latent: TokenSequence, plan: MaskPlan) -> Reconstruction:
        x = latent.tokens
        cls = None
        if latent.has_class_token:
            cls, x = x[:, :1], x[:, 1:]
        b, n_vis, _ = x.shape
        if plan.num_patches != self.num_patches or plan.visible_idx.shape != (b, n_vis):
            raise ShapeException(
                f"latent of {n_vis} visible tokens (batch {b}) does not match plan "
                f"{tuple(plan.visible_idx.shape)} over {plan.num_patches} patches")

        x = self.decoder_embed(x)
        mask_tokens = self.mask_token.expand(b, self.num_patches - n_vis, -1)
        x = gather_tokens(torch.cat([x, mask_tokens], dim=1), plan.restore_perm)
        x = x + self.decoder_pos_embed[:, 1:, :]
        if cls is not None:
            x = torch.cat([self.decoder_embed(cls) + self.decoder_pos_embed[:, :1, :], x], dim=1)

        x = self.decoder_pred(self.decoder(x))
        if cls is not None:
            x = x[:, 1:]
        return Reconstruction(pred_patches=x)

    def forward(self, latent: TokenSequence, plan: MaskPlan) -> Reconstruction:
        return self.decode(latent, plan)


@dataclass(frozen=True)
class MIMOutput:
    loss: torch.Tensor
    plan: MaskPlan
    reconstruction: Reconstruction


class MaskedImageModelingBranch(nn.Module, ABC):
    """Reconstruction objective that shares the classifier's encoder."""

    @abstractmethod
    def reconstruct(self, backbone: ViTClassifier, images: torch.Tensor,
                    generator: Optional[torch.Generator] = None,
                    plan: Optional[MaskPlan] = None) -> Tuple[MaskPlan, Reconstruction]:
        ...

    @abstractmethod
    def compute_loss(self, backbone: ViTClassifier, images: torch.Tensor,
                     generator: Optional[torch.Generator] = None,
                     plan: Optional[MaskPlan] = None) -> MIMOutput:
        ...


class MAEBranch(MaskedImageModelingBranch):
    def __init__(self, model_params: ModelParams, mae_params: MAEParams):
        super().__init__()
        self.mask_ratio = mae_params.mask_ratio
        self.norm_pix_target = mae_params.norm_pix_target
        self.patch_size = model_params.patch_size
        self.decoder = MAEDecoder(model_params)

    def reconstruct(self, backbone: ViTClassifier, images: torch.Tensor,
                    generator: Optional[torch.Generator] = None,
                    plan: Optional[MaskPlan] = None) -> Tuple[MaskPlan, Reconstruction]:
        """Mask, encode the visible patches with the shared encoder, decode every position."""
        grid = backbone.patchify(images)
        if plan is None:
            visible, plan = random_masking(grid, self.mask_ratio, generator)
        else:
            visible = gather_tokens(grid.patches, plan.visible_idx)
        tokens = backbone.embed_patches(visible, positions=plan.visible_idx)
        latent = backbone.encode(backbone.with_class_token(tokens))
        return plan, self.decoder.decode(latent, plan)

    def compute_loss(self, backbone: ViTClassifier, images: torch.Tensor,
                     generator: Optional[torch.Generator] = None,
                     plan: Optional[MaskPlan] = None) -> MIMOutput:
        plan, reconstruction = self.reconstruct(backbone, images, generator, plan)
        loss = mae_loss(reconstruction, images, plan, self.norm_pix_target, self.patch_size)
        return MIMOutput(loss=loss, plan=plan, reconstruction=reconstruction)


MIM_BRANCHES: Dict[str, Type[MaskedImageModelingBranch]] = {
    "mae": MAEBranch,
}


def build_mim_branch(model_params: ModelParams, mae_params: MAEParams) -> MaskedImageModelingBranch:
    if mae_params.branch not in MIM_BRANCHES:
        raise ConfigurationException(
            f"mae.branch {mae_params.branch!r} is not available; choose from {sorted(MIM_BRANCHES)}")
    return MIM_BRANCHES[mae_params.branch](model_params, mae_params)
