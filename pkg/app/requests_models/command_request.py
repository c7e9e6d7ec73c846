from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from enums.subcommand import SubcommandEnum
from requests_models.train_config import parse_overrides


class CommandInvocation(BaseModel):
    """One parsed command line."""

    model_config = ConfigDict(frozen=True)

    subcommand: SubcommandEnum = Field(..., description="train / eval / make-split / reconstruct / compare")
    config_path: Optional[Path] = Field(default=None, description="TOML run config")
    preset: Optional[str] = Field(default=None, description="Named preset used under the config file")
    overrides: List[str] = Field(default_factory=list, description="dotted.key=value pairs")
    output_dir: Path = Field(default=Path("runs/latest"), description="Created if absent")
    checkpoint: Optional[Path] = None
    resume: Optional[Path] = None
    mask_ratio: Optional[float] = Field(default=None, gt=0.0, lt=1.0, description="Reconstruct only; at least one patch is masked")
    num_images: int = Field(default=4, ge=1)
    print_config: bool = False

    def override_tree(self) -> Dict[str, Any]:
        tree = parse_overrides(self.overrides)
        if self.mask_ratio is not None:
            tree.setdefault("mae", {})["mask_ratio"] = self.mask_ratio
        return tree

    def prepare_output_dir(self) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self.output_dir
