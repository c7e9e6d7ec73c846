import hashlib
import math
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import torch
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from enums.rng_stream import RngStreamEnum
from exceptions.pipeline_exceptions import (
    CheckpointIncompatibleException,
    CheckpointIntegrityException,
    MetricsSinkException,
)
from responses.eval_response import EvalReport
from responses.train_step_response import LossBreakdown, MetricsRecord


CHECKPOINT_VERSION = "semi-mae-ckpt/1"


class RngStreams:
    """
    Named, independently seeded random streams.

    Masking, augmentation and data order each own a torch.Generator so that
    changing how much randomness one concern consumes never shifts another.
    The dropout stream is the torch default generator.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self._generators: Dict[str, torch.Generator] = {}
        for index, stream in enumerate(RngStreamEnum):
            derived = int(np.random.SeedSequence([seed, index]).generate_state(1)[0])
            if stream == RngStreamEnum.DROPOUT:
                generator = torch.default_generator
            else:
                generator = torch.Generator()
            generator.manual_seed(derived)
            self._generators[stream.value] = generator

    def __getitem__(self, stream: RngStreamEnum) -> torch.Generator:
        return self._generators[RngStreamEnum(stream).value]

    @property
    def masking(self) -> torch.Generator:
        return self[RngStreamEnum.MASKING]

    @property
    def augmentation(self) -> torch.Generator:
        return self[RngStreamEnum.AUGMENTATION]

    @property
    def data_order(self) -> torch.Generator:
        return self[RngStreamEnum.DATA_ORDER]

    def state_dict(self) -> Dict[str, torch.Tensor]:
        return {name: gen.get_state().clone() for name, gen in self._generators.items()}

    def load_state_dict(self, states: Dict[str, torch.Tensor]) -> None:
        missing = set(self._generators) - set(states)
        if missing:
            raise CheckpointIntegrityException(f"rng streams missing from checkpoint: {sorted(missing)}")
        for name, gen in self._generators.items():
            gen.set_state(states[name].clone())


class RunState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    epoch: int = Field(default=0, ge=0, description="Completed epochs")
    global_step: int = Field(default=0, ge=0)
    rng_streams: Dict[str, torch.Tensor] = Field(default_factory=dict)
    best_metric: float = -math.inf
    data_cursor: Dict[str, Any] = Field(default_factory=dict, description="Batch sampler position")


class Checkpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    version: str = CHECKPOINT_VERSION
    config: Dict[str, Any] = Field(..., description="TrainConfig snapshot (json mode)")
    model_state: Dict[str, torch.Tensor] = Field(..., description="Encoder, head, decoder and mask token")
    optimizer_state: Dict[str, Any] = Field(default_factory=dict)
    run_state: RunState = Field(default_factory=RunState)


def parameter_payload(model_state: Dict[str, torch.Tensor]) -> bytes:
    """Raw bytes of every tensor in key order."""
    chunks: List[bytes] = []
    for name in sorted(model_state):
        tensor = model_state[name].detach().cpu().contiguous()
        chunks.append(name.encode())
        chunks.append(tensor.numpy().tobytes())
    return b"".join(chunks)


def _digest(model_state: Dict[str, torch.Tensor]) -> str:
    return hashlib.sha256(parameter_payload(model_state)).hexdigest()


def save_checkpoint(state: Checkpoint, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    model_state = {k: v.detach().cpu().clone() for k, v in state.model_state.items()}
    payload = {
        "version": state.version,
        "digest": _digest(model_state),
        "config": state.config,
        "model_state": model_state,
        "optimizer_state": state.optimizer_state,
        "run_state": state.run_state.model_dump(),
    }
    tmp_path = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp_path)
    tmp_path.replace(path)
    logger.info(f"Checkpoint saved to {path} (step {state.run_state.global_step})")
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointIntegrityException(f"Failed to read checkpoint {path}: {e}") from e

    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointIntegrityException(f"Checkpoint {path} has no version tag")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointIncompatibleException(
            f"Checkpoint {path} has version {payload['version']!r}, expected {CHECKPOINT_VERSION!r}")
    try:
        checkpoint = Checkpoint(
            version=payload["version"],
            config=payload["config"],
            model_state=payload["model_state"],
            optimizer_state=payload["optimizer_state"],
            run_state=RunState(**payload["run_state"]),
        )
    except Exception as e:
        raise CheckpointIntegrityException(f"Checkpoint {path} is malformed: {e}") from e
    if _digest(checkpoint.model_state) != payload.get("digest"):
        raise CheckpointIntegrityException(f"Checkpoint {path} parameter digest mismatch")
    logger.info(f"Checkpoint loaded from {path} (step {checkpoint.run_state.global_step})")
    return checkpoint


def load_model_state(model: torch.nn.Module, model_state: Dict[str, torch.Tensor]) -> None:
    """Strict load; a parameter set that does not fit the configured model is incompatible."""
    try:
        model.load_state_dict(model_state)
    except RuntimeError as e:
        raise CheckpointIncompatibleException(f"Checkpoint parameters do not fit the configured model: {e}") from e


class MetricsLogger:
    """
    Append-only line-delimited JSON metrics, one MetricsRecord per call.

    Records go through a dedicated loguru file sink; console and file log
    sinks filter them out by the `metrics_sink` extra.
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self._sink_name = f"{self.path}#{id(self)}"
        try:
            self._sink_id = logger.add(
                str(self.path),
                format="{message}",
                level="INFO",
                filter=lambda record, name=self._sink_name: record["extra"].get("metrics_sink") == name,
                catch=False,
                mode="a",
                buffering=1,
            )
        except OSError as e:
            raise MetricsSinkException(f"Cannot open metrics sink {self.path}: {e}") from e
        self._logger = logger.bind(metrics_sink=self._sink_name)
        self._closed = False

    def log_metrics(self, breakdown: Optional[LossBreakdown], step: int, epoch: int, phase: str,
                    lr: Optional[float] = None, eval_report: Optional[EvalReport] = None) -> MetricsRecord:
        values = breakdown.model_dump() if breakdown is not None else {}
        record = MetricsRecord(
            step=step,
            epoch=epoch,
            phase=phase,
            lr=lr,
            top1_accuracy=eval_report.top1_accuracy if eval_report is not None else None,
            **values,
        )
        self.write(record)
        return record

    def write(self, record: MetricsRecord) -> None:
        if self._closed:
            raise MetricsSinkException(f"Metrics sink {self.path} is closed")
        try:
            self._logger.info(record.model_dump_json())
        except OSError as e:
            raise MetricsSinkException(f"Failed to write metrics to {self.path}: {e}") from e

    def close(self) -> None:
        if not self._closed:
            logger.remove(self._sink_id)
            self._closed = True

    def __enter__(self) -> "MetricsLogger":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @staticmethod
    def read(path: Path) -> pd.DataFrame:
        return pd.read_json(Path(path), lines=True)

    @staticmethod
    def records(path: Path) -> List[MetricsRecord]:
        lines = Path(path).read_text().splitlines()
        return [MetricsRecord.model_validate_json(line) for line in lines if line.strip()]
