from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field


class EvalReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    top1_accuracy: float = Field(..., ge=0.0, le=1.0, description="correct / num_samples")
    num_samples: int = Field(..., ge=1)
    num_correct: int = Field(..., ge=0)
    per_class_accuracy: List[Optional[float]] = Field(
        ..., description="Recall per class; None when the class has no validation samples"
    )


class BaselineComparison(BaseModel):
    """Final top-1 of the configured objective next to a supervised-only run from the same seed and split."""

    model_config = ConfigDict(frozen=True)

    semi_mae: EvalReport
    supervised_baseline: EvalReport
    delta_top1: float = Field(..., description="semi_mae minus supervised_baseline top-1")
