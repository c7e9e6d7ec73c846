import pytest
import torch

from conftest import make_tiny_config
from enums.forward_mode import ForwardModeEnum
from exceptions.pipeline_exceptions import ShapeException
from models.pos_embed import sincos_2d
from models.vit_backbone import TokenSequence, ViTClassifier, patchify, unpatchify
from requests_models.train_config import TrainConfig


@pytest.fixture
def desk_classifier(desk_config):
    torch.manual_seed(0)
    return ViTClassifier(desk_config.model)


def test_patchify_desk_geometry():
    grid = patchify(torch.rand(2, 3, 32, 32), 4)
    assert grid.patches.shape == (2, 64, 48)


def test_patchify_vit_small_geometry():
    grid = patchify(torch.zeros(1, 3, 224, 224), 16)
    assert grid.patches.shape == (1, 196, 768)


def test_patches_are_row_major_with_channels_last():
    images = torch.rand(1, 3, 8, 8)
    patches = patchify(images, 4).patches
    assert torch.equal(patches[0, 0], images[0, :, 0:4, 0:4].permute(1, 2, 0).reshape(-1))
    assert torch.equal(patches[0, 1], images[0, :, 0:4, 4:8].permute(1, 2, 0).reshape(-1))
    assert torch.equal(patches[0, 2], images[0, :, 4:8, 0:4].permute(1, 2, 0).reshape(-1))


def test_unpatchify_inverts_patchify():
    images = torch.rand(3, 3, 16, 12)
    assert torch.equal(unpatchify(patchify(images, 4)), images)


def test_indivisible_image():
    with pytest.raises(ShapeException):
        patchify(torch.rand(1, 3, 30, 32), 4)


def test_sincos_table():
    table = sincos_2d(8, 2, 3, class_token=True)
    assert table.shape == (1, 7, 8)
    assert torch.equal(table[0, 0], torch.zeros(8))
    assert torch.allclose(table[0, 1], torch.tensor([0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]))
    with pytest.raises(ShapeException):
        sincos_2d(6, 2, 2)


def test_encode_full_and_visible_sequences(desk_classifier):
    images = torch.rand(2, 3, 32, 32)
    grid = desk_classifier.patchify(images)
    full = desk_classifier.encode(desk_classifier.with_class_token(desk_classifier.embed_patches(grid.patches)))
    assert full.tokens.shape == (2, 65, 64)

    positions = torch.stack([torch.randperm(64)[:16] for _ in range(2)])
    visible = torch.gather(grid.patches, 1, positions.unsqueeze(-1).expand(-1, -1, 48))
    tokens = desk_classifier.embed_patches(visible, positions=positions)
    latent = desk_classifier.encode(desk_classifier.with_class_token(tokens))
    assert latent.tokens.shape == (2, 17, 64)


def test_zero_depth_encoder_is_identity():
    config = TrainConfig.from_preset("desk", model={"encoder_depth": 0})
    classifier = ViTClassifier(config.model)
    tokens = torch.rand(2, 5, 64)
    out = classifier.encode(TokenSequence(tokens=tokens))
    assert torch.equal(out.tokens, tokens)


def test_encode_requires_positions_and_width(desk_classifier):
    with pytest.raises(ShapeException):
        desk_classifier.encode(TokenSequence(tokens=torch.rand(2, 5, 64), pos_embedded=False))
    with pytest.raises(ShapeException):
        desk_classifier.encode(TokenSequence(tokens=torch.rand(2, 5, 32)))


def test_logits_shape(desk_classifier):
    assert desk_classifier(torch.rand(4, 3, 32, 32)).shape == (4, 10)


def test_wrong_image_size(desk_classifier):
    with pytest.raises(ShapeException):
        desk_classifier(torch.rand(1, 3, 28, 28))


def test_eval_mode_is_deterministic():
    config = TrainConfig.from_preset("desk", model={"dropout": 0.3})
    classifier = ViTClassifier(config.model)
    images = torch.rand(3, 3, 32, 32)
    first = classifier.classify(images, ForwardModeEnum.EVAL)
    second = classifier.classify(images, ForwardModeEnum.EVAL)
    assert torch.equal(first, second)
    assert classifier.training


def test_zeroed_head_predicts_uniform(desk_classifier):
    with torch.no_grad():
        desk_classifier.head.weight.zero_()
        desk_classifier.head.bias.zero_()
    probs = desk_classifier.classify(torch.rand(2, 3, 32, 32)).softmax(dim=-1)
    assert torch.allclose(probs, torch.full((2, 10), 0.1))


def test_token_order_only_permutes_outputs():
    config = make_tiny_config(model={"image_size": 16})
    classifier = ViTClassifier(config.model).double().eval()
    patches = classifier.patchify(torch.rand(2, 3, 16, 16, dtype=torch.float64)).patches
    perm = torch.randperm(16)
    positions = perm.unsqueeze(0).expand(2, -1)

    reference = classifier.encode(classifier.with_class_token(classifier.embed_patches(patches))).tokens
    shuffled = classifier.encode(classifier.with_class_token(
        classifier.embed_patches(patches[:, perm], positions=positions))).tokens
    assert torch.allclose(shuffled[:, 1:], reference[:, 1:][:, perm], atol=1e-10)
    assert torch.allclose(shuffled[:, 0], reference[:, 0], atol=1e-10)
