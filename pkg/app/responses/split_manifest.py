import json
from pathlib import Path
from typing import List

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from exceptions.pipeline_exceptions import SplitException


class SplitManifest(BaseModel):
    """Labeled/unlabeled partition of a training set."""

    model_config = ConfigDict(frozen=True)

    labeled_indices: List[int] = Field(..., description="Sorted dataset indices with labels kept")
    unlabeled_indices: List[int] = Field(..., description="Sorted dataset indices with labels dropped")
    fraction: float = Field(..., gt=0.0, lt=1.0)
    seed: int

    @model_validator(mode="after")
    def _disjoint(self) -> "SplitManifest":
        if set(self.labeled_indices) & set(self.unlabeled_indices):
            raise SplitException("labeled and unlabeled indices overlap")
        return self

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.model_dump(mode="json"), indent=2))
        return path

    @classmethod
    def load(cls, path: Path) -> "SplitManifest":
        try:
            return cls.model_validate_json(Path(path).read_text())
        except ValidationError as e:
            raise SplitException(f"Invalid split manifest {path}: {e}") from e
