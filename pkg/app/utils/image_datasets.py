"""
Desk-scale image sources.

- synthetic: class-structured oriented gratings, one hue per class
- cifar10:   torchvision CIFAR-10 files already present under `data.root`
- npz:       archive with images [M, H, W, C] uint8 and labels [M]
             (plus val_images / val_labels for the validation split)
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np
import torch
from loguru import logger
from matplotlib.colors import hsv_to_rgb

from enums.data_source import DataSourceEnum
from exceptions.pipeline_exceptions import DataException
from requests_models.train_config import TrainConfig


@dataclass(frozen=True)
class ImageDataset:
    images: torch.Tensor  # uint8 [M, C, H, W]
    labels: torch.Tensor  # int64 [M]
    num_classes: int

    def __len__(self) -> int:
        return self.labels.shape[0]

    def float_images(self, index: torch.Tensor) -> torch.Tensor:
        """Pixels of `index` as float32 in [0, 1]."""
        return self.images[index].float() / 255.0

    @classmethod
    def from_hwc(cls, images: np.ndarray, labels: np.ndarray, num_classes: int) -> "ImageDataset":
        if images.ndim != 4 or images.dtype != np.uint8:
            raise DataException(f"expected uint8 images [M, H, W, C], got {images.dtype} {images.shape}")
        if len(images) != len(labels):
            raise DataException(f"{len(images)} images but {len(labels)} labels")
        return cls(images=torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))),
                   labels=torch.as_tensor(np.asarray(labels), dtype=torch.long),
                   num_classes=num_classes)


def synthetic_class_images(num_samples: int, num_classes: int, image_size: int,
                           channels: int = 3, seed: int = 0) -> ImageDataset:
    """
    Balanced synthetic set: class c is a sinusoidal grating with its own
    orientation, frequency and hue; samples differ in phase, orientation
    jitter and pixel noise.
    """
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(num_samples) % num_classes)

    angles = np.pi * np.arange(num_classes) / num_classes
    freqs = 2.0 + np.arange(num_classes) % 3
    hues = np.stack([np.arange(num_classes) / num_classes,
                     np.full(num_classes, 0.8), np.full(num_classes, 0.9)], axis=1)
    colors = hsv_to_rgb(hues)  # [K, 3]

    coords = np.arange(image_size) / image_size
    ys, xs = np.meshgrid(coords, coords, indexing="ij")
    theta = angles[labels] + rng.uniform(-0.1, 0.1, num_samples)
    phase = rng.uniform(0.0, 2 * np.pi, num_samples)
    proj = xs[None] * np.cos(theta)[:, None, None] + ys[None] * np.sin(theta)[:, None, None]
    grating = np.sin(2 * np.pi * freqs[labels][:, None, None] * proj + phase[:, None, None])

    rgb = colors[labels][:, None, None, :] * (0.6 + 0.4 * grating[..., None])
    if channels == 1:
        rgb = rgb.mean(axis=-1, keepdims=True)
    elif channels != 3:
        raise DataException(f"synthetic images support 1 or 3 channels, got {channels}")
    rgb = rgb + rng.normal(0.0, 0.05, rgb.shape)
    images = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    return ImageDataset.from_hwc(images, labels, num_classes)


def load_cifar10(root: str, train: bool) -> ImageDataset:
    from torchvision.datasets import CIFAR10

    try:
        dataset = CIFAR10(root=root, train=train, download=False)
    except RuntimeError as e:
        raise DataException(f"CIFAR-10 not found under {root}: {e}") from e
    return ImageDataset.from_hwc(dataset.data, np.asarray(dataset.targets), num_classes=10)


def load_npz(path: str, train: bool, num_classes: int) -> ImageDataset:
    image_key, label_key = ("images", "labels") if train else ("val_images", "val_labels")
    try:
        with np.load(path) as archive:
            images, labels = archive[image_key], archive[label_key]
    except (OSError, KeyError) as e:
        raise DataException(f"Failed to read {image_key}/{label_key} from {path}: {e}") from e
    return ImageDataset.from_hwc(images, labels, num_classes)


def load_dataset(config: TrainConfig, train: bool) -> ImageDataset:
    """Training or validation split of the configured source, checked against the model geometry."""
    m, d = config.model, config.data
    name = "train" if train else "validation"
    if d.source == DataSourceEnum.SYNTHETIC:
        size = d.synthetic_train_size if train else d.synthetic_val_size
        # validation draws from a different seed so no image is shared with training
        dataset = synthetic_class_images(size, m.num_classes, m.image_size, m.in_channels,
                                         config.seed if train else config.seed + 1)
    else:
        if not d.root or not Path(d.root).exists():
            raise DataException(f"data.root {d.root!r} does not exist for source {d.source.value}")
        if d.source == DataSourceEnum.CIFAR10:
            dataset = load_cifar10(d.root, train=train)
        else:
            dataset = load_npz(d.root, train, m.num_classes)

    _, c, h, w = dataset.images.shape
    if (c, h, w) != (m.in_channels, m.image_size, m.image_size):
        raise DataException(
            f"{name} images are {c}x{h}x{w}; config expects {m.in_channels}x{m.image_size}x{m.image_size}")
    if len(dataset) and int(dataset.labels.max()) >= m.num_classes:
        raise DataException(f"{name} labels exceed model.num_classes={m.num_classes}")
    logger.info(f"Loaded {d.source.value} {name} data: {len(dataset)} images")
    return dataset


def load_datasets(config: TrainConfig) -> Tuple[ImageDataset, ImageDataset]:
    return load_dataset(config, train=True), load_dataset(config, train=False)
