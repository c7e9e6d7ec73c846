import math
from dataclasses import dataclass
from typing import List, Tuple

import torch
import torch.nn.functional as F

from exceptions.pipeline_exceptions import (
    AlignmentException,
    LabelException,
    NumericalException,
    ShapeException,
)
from responses.train_step_response import LossBreakdown


@dataclass(frozen=True)
class PseudoLabel:
    class_index: int
    confidence: float
    accepted: bool


@dataclass(frozen=True)
class PseudoLabelBatch:
    """Hard pseudo labels for one unlabeled batch, index-aligned with it."""
    class_index: torch.Tensor  # long [N_u]
    confidence: torch.Tensor   # [N_u], max softmax probability
    accepted: torch.Tensor     # bool [N_u], confidence > tau
    tau: float

    def __len__(self) -> int:
        return self.class_index.shape[0]

    @property
    def acceptance_rate(self) -> float:
        return int(self.accepted.sum()) / len(self) if len(self) else 0.0

    def records(self) -> List[PseudoLabel]:
        return [PseudoLabel(int(c), float(p), bool(a))
                for c, p, a in zip(self.class_index.tolist(), self.confidence.tolist(), self.accepted.tolist())]


def supervised_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean softmax cross-entropy over the labeled batch."""
    if logits.ndim != 2 or labels.shape != logits.shape[:1]:
        raise ShapeException(f"logits {tuple(logits.shape)} and labels {tuple(labels.shape)} do not align")
    num_classes = logits.shape[1]
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= num_classes):
        raise LabelException(
            f"labels must lie in [0, {num_classes}), got range [{int(labels.min())}, {int(labels.max())}]")
    return F.cross_entropy(logits, labels)


def make_pseudo_labels(weak_logits: torch.Tensor, tau: float) -> PseudoLabelBatch:
    """argmax of softmax (lowest index wins ties); accepted iff max probability > tau."""
    with torch.no_grad():
        probs = weak_logits.detach().softmax(dim=-1)
        class_index = probs.argmax(dim=-1)
        confidence = probs.gather(1, class_index.unsqueeze(1)).squeeze(1)
        accepted = confidence > tau
    return PseudoLabelBatch(class_index=class_index, confidence=confidence, accepted=accepted, tau=tau)


def unsupervised_loss(strong_logits: torch.Tensor, pseudo: PseudoLabelBatch) -> Tuple[torch.Tensor, float]:
    """
    Cross-entropy on accepted samples only, summed and divided by N_u
    (the whole unlabeled batch, not the accepted count).

    Returns:
        (loss, acceptance_rate)
    """
    if strong_logits.ndim != 2 or strong_logits.shape[0] != len(pseudo):
        raise AlignmentException(
            f"strong logits {tuple(strong_logits.shape)} do not align with {len(pseudo)} pseudo labels")
    if len(pseudo) == 0:
        raise AlignmentException("empty unlabeled batch")
    per_sample = F.cross_entropy(strong_logits, pseudo.class_index.to(strong_logits.device), reduction="none")
    accepted = pseudo.accepted.to(strong_logits.device)
    loss = per_sample[accepted].sum() / len(pseudo)
    return loss, pseudo.acceptance_rate


def combine_losses(l_s: torch.Tensor, l_u: torch.Tensor, l_mae: torch.Tensor,
                   lambda_u: float, mu_mae: float) -> torch.Tensor:
    """Differentiable L = L_s + lambda * L_u + mu * L_MAE, same evaluation order as total_loss."""
    return l_s + lambda_u * l_u + mu_mae * l_mae


def total_loss(l_s: float, l_u: float, l_mae: float, lambda_u: float, mu_mae: float,
               acceptance_rate: float = 0.0) -> LossBreakdown:
    terms = {"l_s": l_s, "l_u": l_u, "l_mae": l_mae, "lambda_u": lambda_u, "mu_mae": mu_mae}
    if not all(math.isfinite(v) for v in terms.values()):
        raise NumericalException("non-finite loss term, step aborted", breakdown=terms)
    total = l_s + lambda_u * l_u + mu_mae * l_mae
    if not math.isfinite(total):
        raise NumericalException("non-finite total loss, step aborted", breakdown={**terms, "total": total})
    return LossBreakdown(l_s=l_s, l_u=l_u, l_mae=l_mae, total=total, acceptance_rate=acceptance_rate)
