import torch

from models.semi_mae_model import build_model
from models.vit_backbone import patchify
from services.reconstruction_service import reconstruction_panels, write_triptychs


def test_panels_keep_visible_pixels(tiny_config, tmp_path):
    model = build_model(tiny_config)
    images = torch.rand(3, 3, 8, 8, generator=torch.Generator().manual_seed(0))
    panels = reconstruction_panels(model, images, generator=torch.Generator().manual_seed(1))
    assert panels.masked.shape == panels.reconstruction.shape == images.shape
    assert panels.mask_ratio == 0.5

    original = patchify(images, 4).patches
    masked = patchify(panels.masked, 4).patches
    pasted = patchify(panels.reconstruction, 4).patches
    grey = (masked == 0.5).all(dim=-1)
    assert grey.sum(dim=1).tolist() == [2, 2, 2]
    kept = ~grey
    assert torch.equal(pasted[kept], original[kept])
    assert model.training

    paths = write_triptychs(panels, tmp_path)
    assert [p.name for p in paths] == ["reconstruction_000.png", "reconstruction_001.png", "reconstruction_002.png"]
    assert all(p.stat().st_size > 0 for p in paths)


def test_mask_ratio_override_is_temporary(tiny_config):
    model = build_model(tiny_config)
    panels = reconstruction_panels(model, torch.rand(1, 3, 8, 8), mask_ratio=0.25)
    assert panels.mask_ratio == 0.25
    assert model.mim_branch.mask_ratio == tiny_config.mae.mask_ratio


def test_default_ratio_greys_three_quarters_of_cells(tiny_config):
    model = build_model(tiny_config)
    images = torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(2))
    panels = reconstruction_panels(model, images, mask_ratio=0.75)
    grey = (patchify(panels.masked, 4).patches == 0.5).all(dim=-1)
    assert grey.sum(dim=1).tolist() == [3, 3]


def test_unmasked_panels_reproduce_the_input(tiny_config):
    model = build_model(tiny_config)
    images = torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(3))
    panels = reconstruction_panels(model, images, mask_ratio=0.0)
    assert panels.mask_ratio == 0.0
    assert torch.equal(panels.masked, images)
    assert torch.equal(panels.reconstruction, images)
