import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
from loguru import logger

from exceptions.pipeline_exceptions import DataException, SplitException
from requests_models.train_config import TrainConfig
from responses.split_manifest import SplitManifest
from utils.augmentations import augment_batch, strong_augment, weak_augment
from utils.image_datasets import ImageDataset
from utils.run_tracker import RngStreams


def make_split(dataset_size: int, labels: Sequence[int], fraction: float, seed: int,
               num_classes: Optional[int] = None) -> SplitManifest:
    """
    Stratified labeled/unlabeled split.

    Each class keeps round_half_up(n_c * fraction) labeled samples, drawn
    with a numpy Generator seeded by `seed`; everything else is unlabeled.

    Args:
        dataset_size: number of training samples
        labels: class index per sample
        fraction: labeled fraction in (0, 1)
        seed: split seed
        num_classes: when given, every class in range(num_classes) must be present

    Returns:
        SplitManifest with sorted, disjoint index lists
    """
    labels = np.asarray(labels)
    if labels.shape != (dataset_size,):
        raise SplitException(f"expected {dataset_size} labels, got shape {labels.shape}")
    if not 0.0 < fraction < 1.0:
        raise SplitException(f"fraction must be in (0, 1), got {fraction}")
    classes = np.unique(labels)
    if num_classes is not None:
        missing = sorted(set(range(num_classes)) - set(classes.tolist()))
        if missing:
            raise SplitException(f"classes {missing} have no samples")

    rng = np.random.default_rng(seed)
    labeled: List[int] = []
    for cls in classes:
        members = np.flatnonzero(labels == cls)
        count = int(math.floor(len(members) * fraction + 0.5))
        if count == 0:
            raise SplitException(
                f"class {cls} has {len(members)} samples; fraction {fraction} leaves it with no labeled sample")
        labeled.extend(rng.permutation(members)[:count].tolist())

    labeled_set = set(labeled)
    unlabeled = [i for i in range(dataset_size) if i not in labeled_set]
    logger.info(f"Split {dataset_size} samples: labeled={len(labeled)}, unlabeled={len(unlabeled)}, "
                f"classes={len(classes)}, fraction={fraction}")
    return SplitManifest(labeled_indices=sorted(labeled), unlabeled_indices=unlabeled,
                         fraction=fraction, seed=seed)


@dataclass(frozen=True)
class LabeledBatch:
    images: torch.Tensor   # [N_l, C, H, W], weak view
    labels: torch.Tensor   # [N_l]
    indices: torch.Tensor  # dataset indices

    def to(self, device: str) -> "LabeledBatch":
        return LabeledBatch(self.images.to(device), self.labels.to(device), self.indices)


@dataclass(frozen=True)
class UnlabeledBatch:
    weak_images: torch.Tensor    # [N_u, C, H, W]
    strong_images: torch.Tensor  # [N_u, C, H, W], same sources as weak_images
    indices: torch.Tensor

    def to(self, device: str) -> "UnlabeledBatch":
        return UnlabeledBatch(self.weak_images.to(device), self.strong_images.to(device), self.indices)


@dataclass(frozen=True)
class BatchPlan:
    labeled_indices: torch.Tensor
    unlabeled_indices: torch.Tensor
    augmentation_seed: int


class DatasetService:
    """
    Composes 1:ratio labeled/unlabeled batches from a split training set.

    Epoch = one pass over the unlabeled indices (the last partial batch is
    dropped); labeled indices cycle, reshuffled at each exhaustion. Index
    order comes only from the data-order stream. Each batch's augmentation
    randomness comes from a seed drawn from the augmentation stream in
    batch order, so prefetching on worker threads yields identical batches.
    """

    def __init__(self, config: TrainConfig, dataset: ImageDataset, manifest: SplitManifest):
        self.config = config
        self.dataset = dataset
        self.augment = config.augment
        self.labeled_per_batch = config.data.labeled_per_batch
        self.unlabeled_per_batch = config.unlabeled_per_batch

        if not manifest.labeled_indices:
            raise DataException("split has no labeled samples")
        if not manifest.unlabeled_indices:
            raise DataException("split has no unlabeled samples")
        top = max(manifest.labeled_indices[-1], manifest.unlabeled_indices[-1])
        if top >= len(dataset):
            raise DataException(f"split references index {top} but dataset has {len(dataset)} samples")

        self.labeled_indices = torch.tensor(manifest.labeled_indices, dtype=torch.long)
        self.unlabeled_indices = torch.tensor(manifest.unlabeled_indices, dtype=torch.long)
        self.steps_per_epoch = len(self.unlabeled_indices) // self.unlabeled_per_batch
        if self.steps_per_epoch == 0:
            raise DataException(
                f"{len(self.unlabeled_indices)} unlabeled samples cannot fill one batch of {self.unlabeled_per_batch}")

        self._labeled_perm: Optional[torch.Tensor] = None
        self._labeled_pos = 0
        self._unlabeled_perm: Optional[torch.Tensor] = None
        self._unlabeled_pos = 0
        logger.info(f"DatasetService ready: N_l={self.labeled_per_batch}, N_u={self.unlabeled_per_batch}, "
                    f"steps_per_epoch={self.steps_per_epoch}")

    def _take_labeled(self, generator: torch.Generator) -> torch.Tensor:
        taken: List[torch.Tensor] = []
        needed = self.labeled_per_batch
        while needed > 0:
            if self._labeled_perm is None or self._labeled_pos >= len(self._labeled_perm):
                self._labeled_perm = torch.randperm(len(self.labeled_indices), generator=generator)
                self._labeled_pos = 0
            chunk = self._labeled_perm[self._labeled_pos:self._labeled_pos + needed]
            self._labeled_pos += len(chunk)
            needed -= len(chunk)
            taken.append(chunk)
        return self.labeled_indices[torch.cat(taken)]

    def _take_unlabeled(self, generator: torch.Generator) -> torch.Tensor:
        if self._unlabeled_perm is None or self._unlabeled_pos + self.unlabeled_per_batch > len(self._unlabeled_perm):
            self._unlabeled_perm = torch.randperm(len(self.unlabeled_indices), generator=generator)
            self._unlabeled_pos = 0
        chunk = self._unlabeled_perm[self._unlabeled_pos:self._unlabeled_pos + self.unlabeled_per_batch]
        self._unlabeled_pos += self.unlabeled_per_batch
        return self.unlabeled_indices[chunk]

    def plan_batch(self, rng: RngStreams) -> BatchPlan:
        unlabeled = self._take_unlabeled(rng.data_order)
        labeled = self._take_labeled(rng.data_order)
        seed = int(torch.randint(0, 2 ** 62, (1,), generator=rng.augmentation).item())
        return BatchPlan(labeled_indices=labeled, unlabeled_indices=unlabeled, augmentation_seed=seed)

    def build_batch(self, plan: BatchPlan) -> Tuple[LabeledBatch, UnlabeledBatch]:
        generator = torch.Generator().manual_seed(plan.augmentation_seed)
        labeled_images = augment_batch(self.dataset.float_images(plan.labeled_indices),
                                       weak_augment, generator, self.augment)
        sources = self.dataset.float_images(plan.unlabeled_indices)
        weak = augment_batch(sources, weak_augment, generator, self.augment)
        strong = augment_batch(sources, strong_augment, generator, self.augment)
        return (
            LabeledBatch(images=labeled_images, labels=self.dataset.labels[plan.labeled_indices],
                         indices=plan.labeled_indices),
            UnlabeledBatch(weak_images=weak, strong_images=strong, indices=plan.unlabeled_indices),
        )

    def next_batch(self, rng: RngStreams) -> Tuple[LabeledBatch, UnlabeledBatch]:
        return self.build_batch(self.plan_batch(rng))

    def iter_batches(self, num_steps: int, rng: RngStreams,
                     num_workers: Optional[int] = None) -> Iterator[Tuple[LabeledBatch, UnlabeledBatch]]:
        """
        Plans `num_steps` batches up front, then builds them in order.

        Stream state and the cursor advance past all planned batches before the
        first one is yielded.
        """
        workers = self.config.data.num_workers if num_workers is None else num_workers
        plans = [self.plan_batch(rng) for _ in range(num_steps)]
        if workers <= 0:
            for plan in plans:
                yield self.build_batch(plan)
            return
        with ThreadPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(self.build_batch, plans)

    def state_dict(self) -> Dict[str, Any]:
        return {
            "labeled_perm": None if self._labeled_perm is None else self._labeled_perm.clone(),
            "labeled_pos": self._labeled_pos,
            "unlabeled_perm": None if self._unlabeled_perm is None else self._unlabeled_perm.clone(),
            "unlabeled_pos": self._unlabeled_pos,
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        if not state:
            return
        self._labeled_perm = state["labeled_perm"]
        self._labeled_pos = int(state["labeled_pos"])
        self._unlabeled_perm = state["unlabeled_perm"]
        self._unlabeled_pos = int(state["unlabeled_pos"])
