from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
from loguru import logger
from matplotlib.figure import Figure

from enums.forward_mode import ForwardModeEnum
from models.semi_mae_model import SemiMAEModel
from models.vit_backbone import PatchGrid, forward_mode, patchify, unpatchify


@dataclass(frozen=True)
class ReconstructionPanels:
    original: torch.Tensor       # [B, C, H, W]
    masked: torch.Tensor         # masked patches greyed out
    reconstruction: torch.Tensor # visible patches from the input, masked ones predicted
    mask_ratio: float


def reconstruction_panels(model: SemiMAEModel, images: torch.Tensor,
                          mask_ratio: Optional[float] = None,
                          generator: Optional[torch.Generator] = None) -> ReconstructionPanels:
    """
    Runs the reconstruction branch in eval mode and assembles display panels.

    Predictions are de-normalized with each patch's own mean/std when the
    branch was trained on normalized pixel targets.
    """
    branch = model.mim_branch
    original_ratio = branch.mask_ratio
    if mask_ratio is not None:
        branch.mask_ratio = mask_ratio
    try:
        with torch.no_grad(), forward_mode(model, ForwardModeEnum.EVAL):
            plan, reconstruction = branch.reconstruct(model.classifier, images, generator=generator)
    finally:
        branch.mask_ratio = original_ratio

    target = patchify(images, branch.patch_size)
    pred = reconstruction.pred_patches
    if branch.norm_pix_target:
        mean = target.patches.mean(dim=-1, keepdim=True)
        var = target.patches.var(dim=-1, keepdim=True)
        pred = pred * (var + 1.0e-6) ** 0.5 + mean

    mask = plan.mask().to(images.device).unsqueeze(-1)
    grey = torch.full_like(target.patches, 0.5)
    masked = target.patches * (1 - mask) + grey * mask
    pasted = target.patches * (1 - mask) + pred * mask

    def as_images(patches: torch.Tensor) -> torch.Tensor:
        grid = PatchGrid(patches=patches, grid_h=target.grid_h, grid_w=target.grid_w,
                         patch_size=target.patch_size, channels=target.channels)
        return unpatchify(grid).clamp(0.0, 1.0)

    return ReconstructionPanels(original=images, masked=as_images(masked), reconstruction=as_images(pasted),
                                mask_ratio=plan.mask_ratio)


def _to_hwc(image: torch.Tensor) -> np.ndarray:
    array = image.detach().cpu().float().permute(1, 2, 0).numpy()
    return array[..., 0] if array.shape[-1] == 1 else array


def write_triptychs(panels: ReconstructionPanels, output_dir: Path, prefix: str = "reconstruction") -> List[Path]:
    """One PNG per image: original | masked | reconstruction."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    titles = ("original", f"masked ({panels.mask_ratio:.2f})", "reconstruction")
    for i in range(panels.original.shape[0]):
        fig = Figure(figsize=(9, 3))
        axes = fig.subplots(1, 3)
        for ax, title, image in zip(axes, titles, (panels.original[i], panels.masked[i], panels.reconstruction[i])):
            ax.imshow(_to_hwc(image), cmap="gray" if image.shape[0] == 1 else None, vmin=0.0, vmax=1.0)
            ax.set_title(title)
            ax.axis("off")
        fig.tight_layout()
        path = output_dir / f"{prefix}_{i:03d}.png"
        fig.savefig(path)
        paths.append(path)
    logger.info(f"Wrote {len(paths)} reconstruction panels to {output_dir}")
    return paths
