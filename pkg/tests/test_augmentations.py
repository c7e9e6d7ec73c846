import math

import pytest
import torch

from requests_models.train_config import AugmentParams
from utils.augmentations import (
    STRONG_OP_TABLE,
    augment_batch,
    random_box,
    random_erase,
    strong_augment,
    weak_augment,
)
from utils.image_datasets import synthetic_class_images


@pytest.fixture
def images():
    return synthetic_class_images(16, 4, 32, seed=3).float_images(torch.arange(16))


def test_views_keep_shape_and_range(images, generator):
    params = AugmentParams()
    for op in (weak_augment, strong_augment):
        out = augment_batch(images, op, generator, params)
        assert out.shape == images.shape
        assert out.dtype == images.dtype
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


def test_weak_without_flip_or_crop_is_identity(images, generator):
    params = AugmentParams(weak_flip_prob=0.0, weak_crop_scale=(1.0, 1.0), weak_crop_ratio=(1.0, 1.0))
    assert torch.equal(augment_batch(images, weak_augment, generator, params), images)


def test_weak_always_flipping_with_full_crop(images, generator):
    params = AugmentParams(weak_flip_prob=1.0, weak_crop_scale=(1.0, 1.0), weak_crop_ratio=(1.0, 1.0))
    out = weak_augment(images[0], generator, params)
    assert torch.equal(out, images[0].flip(-1))


def test_strong_without_ops_or_erasing_is_identity(images, generator):
    params = AugmentParams(strong_num_ops=0, erase_prob=0.0)
    assert torch.equal(augment_batch(images, strong_augment, generator, params), images)


def test_same_generator_state_same_views(images):
    params = AugmentParams()
    for op in (weak_augment, strong_augment):
        a = augment_batch(images, op, torch.Generator().manual_seed(5), params)
        b = augment_batch(images, op, torch.Generator().manual_seed(5), params)
        assert torch.equal(a, b)


def _radial_image(size: int = 16) -> torch.Tensor:
    # mirror-symmetric and smooth, so flips are exact and crops move pixels little
    coords = torch.arange(size, dtype=torch.float32) - (size - 1) / 2
    radius = (coords[None, :] ** 2 + coords[:, None] ** 2).sqrt() / size
    base = torch.cos(math.pi * radius)
    return torch.stack([0.5 + 0.4 * base, 0.5 + 0.3 * base, 0.5 - 0.2 * base])


def test_strong_views_move_further_than_weak(generator):
    image = _radial_image()
    params = AugmentParams()
    draws = 1000
    weak = sum(float((weak_augment(image, generator, params) - image).abs().mean()) for _ in range(draws))
    strong = sum(float((strong_augment(image, generator, params) - image).abs().mean()) for _ in range(draws))
    assert strong / draws > weak / draws


@pytest.mark.parametrize("name", sorted(STRONG_OP_TABLE))
def test_every_strong_op_preserves_geometry(name, generator):
    image = torch.rand(3, 16, 16, generator=generator)
    out = STRONG_OP_TABLE[name](image, 1.0, generator)
    assert out.shape == image.shape
    assert torch.isfinite(out).all()


def test_random_erase_fills_a_box(generator):
    image = torch.zeros(3, 32, 32)
    params = AugmentParams(erase_value=0.5)
    out = random_erase(image, generator, params)
    erased = (out == 0.5).all(dim=0)
    assert 0 < int(erased.sum()) < 32 * 32


def test_random_box_within_bounds(generator):
    for _ in range(50):
        top, left, h, w = random_box(20, 30, (0.1, 0.5), (0.5, 2.0), generator)
        assert 0 <= top and top + h <= 20
        assert 0 <= left and left + w <= 30
