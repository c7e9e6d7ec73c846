import pytest
import torch

from requests_models.train_config import TrainConfig
from services.data_pipeline import make_split
from utils.image_datasets import load_dataset


# 8x8 images, 2x2 patch grid, one block each side; 6 steps per epoch
TINY = {
    "model": {
        "num_classes": 4, "image_size": 8, "patch_size": 4,
        "encoder_depth": 1, "encoder_width": 16, "encoder_heads": 2,
        "decoder_depth": 1, "decoder_width": 8, "decoder_heads": 2,
    },
    "mae": {"mask_ratio": 0.5},
    "data": {
        "synthetic_train_size": 64, "synthetic_val_size": 16, "labeled_fraction": 0.25,
        "labeled_per_batch": 2, "unlabeled_ratio": 4,
    },
    "trainer": {"warmup_epochs": 1, "total_epochs": 2, "eval_batch_size": 8},
}


def tiny_cli_overrides():
    args = []
    for section, values in TINY.items():
        for key, value in values.items():
            args += ["--set", f"{section}.{key}={value}"]
    return args


def make_tiny_config(**sections) -> TrainConfig:
    layers = {k: dict(v) for k, v in TINY.items()}
    for section, values in sections.items():
        if isinstance(values, dict):
            layers.setdefault(section, {}).update(values)
        else:
            layers[section] = values
    return TrainConfig.from_preset("desk", **layers)


@pytest.fixture
def tiny_config():
    return make_tiny_config()


@pytest.fixture
def tiny_train_set(tiny_config):
    return load_dataset(tiny_config, train=True)


@pytest.fixture
def tiny_val_set(tiny_config):
    return load_dataset(tiny_config, train=False)


@pytest.fixture
def tiny_manifest(tiny_config, tiny_train_set):
    return make_split(len(tiny_train_set), tiny_train_set.labels.numpy(), tiny_config.data.labeled_fraction,
                      tiny_config.seed, tiny_config.model.num_classes)


@pytest.fixture
def desk_config():
    return TrainConfig.from_preset("desk")


@pytest.fixture
def generator():
    return torch.Generator().manual_seed(1234)
