from typing import Optional

import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F

from exceptions.pipeline_exceptions import DataException
from services.training_pipeline import evaluate
from utils.image_datasets import ImageDataset


class PixelOracle(nn.Module):
    """Reads the label back out of the first pixel."""

    def __init__(self, num_classes: int, constant: Optional[int] = None):
        super().__init__()
        self.num_classes = num_classes
        self.constant = constant

    def forward(self, images):
        if self.constant is not None:
            labels = torch.full((images.shape[0],), self.constant, dtype=torch.long)
        else:
            labels = (images[:, 0, 0, 0] * 255).round().long()
        return F.one_hot(labels, self.num_classes).float()


def _dataset(labels):
    labels = torch.tensor(labels, dtype=torch.long)
    images = labels.to(torch.uint8).view(-1, 1, 1, 1).expand(-1, 3, 4, 4).contiguous()
    return ImageDataset(images=images, labels=labels, num_classes=4)


def test_all_correct():
    report = evaluate(PixelOracle(4), _dataset([0, 1, 2, 3, 1, 2]), batch_size=4)
    assert report.top1_accuracy == 1.0
    assert report.num_correct == report.num_samples == 6
    assert report.per_class_accuracy == [1.0, 1.0, 1.0, 1.0]


def test_constant_prediction():
    report = evaluate(PixelOracle(4, constant=2), _dataset([0, 2, 2, 1, 3]), batch_size=2)
    assert report.top1_accuracy == pytest.approx(0.4)
    assert report.per_class_accuracy == [0.0, 0.0, 1.0, 0.0]


def test_sample_order_does_not_matter():
    labels = [0, 1, 1, 3, 2, 0, 3]
    model = PixelOracle(4, constant=1)
    assert evaluate(model, _dataset(labels), 3) == evaluate(model, _dataset(labels[::-1]), 3)


def test_absent_class_has_no_accuracy():
    report = evaluate(PixelOracle(4), _dataset([0, 1, 1]), batch_size=8)
    assert report.per_class_accuracy == [1.0, 1.0, None, None]


def test_eval_restores_training_mode():
    model = PixelOracle(4)
    evaluate(model, _dataset([0, 1]))
    assert model.training


def test_empty_validation_set():
    with pytest.raises(DataException):
        evaluate(PixelOracle(4), _dataset([]))


class RandomGuess(nn.Module):
    def __init__(self, num_classes: int, seed: int):
        super().__init__()
        self.num_classes = num_classes
        self.generator = torch.Generator().manual_seed(seed)

    def forward(self, images):
        return torch.randn(images.shape[0], self.num_classes, generator=self.generator)


def test_random_guessing_on_balanced_classes():
    labels = torch.arange(2000) % 10
    dataset = ImageDataset(images=torch.zeros(2000, 3, 4, 4, dtype=torch.uint8), labels=labels, num_classes=10)
    report = evaluate(RandomGuess(10, seed=0), dataset, batch_size=500)
    # 4 standard deviations of a binomial(2000, 0.1) rate
    assert report.top1_accuracy == pytest.approx(0.1, abs=0.027)
