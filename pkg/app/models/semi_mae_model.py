from typing import Dict, List

import torch
import torch.nn as nn

from models.mae_branch import MaskedImageModelingBranch, build_mim_branch
from models.vit_backbone import ViTClassifier
from requests_models.train_config import TrainConfig


# parameters never decayed: tokens, norms, biases
_NO_DECAY_NAMES = ("cls_token", "mask_token")


class SemiMAEModel(nn.Module):
    """Classifier (shared encoder + head) and the reconstruction branch."""

    def __init__(self, config: TrainConfig):
        super().__init__()
        self.classifier = ViTClassifier(config.model)
        self.mim_branch: MaskedImageModelingBranch = build_mim_branch(config.model, config.mae)

    def parameter_groups(self, weight_decay: float) -> List[Dict]:
        decay, no_decay = [], []
        for name, param in self.named_parameters():
            if not param.requires_grad:
                continue
            if param.ndim <= 1 or name.endswith(_NO_DECAY_NAMES):
                no_decay.append(param)
            else:
                decay.append(param)
        return [
            {"params": decay, "weight_decay": weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ]

    def encoder_parameters(self) -> Dict[str, nn.Parameter]:
        return {name: p for name, p in self.classifier.named_parameters() if not name.startswith("head.")}

    def head_parameters(self) -> Dict[str, nn.Parameter]:
        return {name: p for name, p in self.classifier.named_parameters() if name.startswith("head.")}

    def decoder_parameters(self) -> Dict[str, nn.Parameter]:
        return dict(self.mim_branch.named_parameters())


def build_model(config: TrainConfig, device: str = "cpu") -> SemiMAEModel:
    """Parameter init draws from a generator seeded by config.seed, leaving global rng untouched."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        model = SemiMAEModel(config)
    return model.to(device)
