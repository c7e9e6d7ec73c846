from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class LossBreakdown(BaseModel):
    """Unweighted loss terms of one step plus their weighted total."""

    model_config = ConfigDict(frozen=True)

    l_s: float = Field(..., ge=0.0, description="Supervised cross-entropy")
    l_u: float = Field(..., ge=0.0, description="Thresholded pseudo-label cross-entropy")
    l_mae: float = Field(..., ge=0.0, description="Masked-patch reconstruction MSE")
    total: float = Field(..., description="l_s + lambda_u * l_u + mu_mae * l_mae")
    acceptance_rate: float = Field(..., ge=0.0, le=1.0, description="Accepted pseudo labels / N_u")


class MetricsRecord(BaseModel):
    """One line of the metrics log."""

    step: int = Field(..., ge=0)
    epoch: int = Field(..., ge=0)
    phase: str = Field(..., description="warmup / main / eval")
    l_s: Optional[float] = None
    l_u: Optional[float] = None
    l_mae: Optional[float] = None
    total: Optional[float] = None
    acceptance_rate: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    lr: Optional[float] = None
    top1_accuracy: Optional[float] = Field(default=None, ge=0.0, le=1.0)
