import math
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd
import torch
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator
from sklearn.metrics import confusion_matrix

from enums.forward_mode import ForwardModeEnum
from enums.warmup_objective import WarmupObjectiveEnum
from exceptions.pipeline_exceptions import DataException, NumericalException, ScheduleException
from models.semi_mae_model import SemiMAEModel, build_model
from models.vit_backbone import ViTClassifier, forward_mode
from requests_models.train_config import TrainConfig, deep_merge, load_config
from responses.eval_response import BaselineComparison, EvalReport
from responses.split_manifest import SplitManifest
from responses.train_step_response import LossBreakdown
from services.data_pipeline import DatasetService, LabeledBatch, UnlabeledBatch
from services.ssl_objective import (
    combine_losses,
    make_pseudo_labels,
    supervised_loss,
    total_loss,
    unsupervised_loss,
)
from utils.image_datasets import ImageDataset
from utils.run_tracker import (
    Checkpoint,
    MetricsLogger,
    RngStreams,
    RunState,
    load_checkpoint,
    load_model_state,
    save_checkpoint,
)


class Schedule(BaseModel):
    model_config = ConfigDict(frozen=True)

    warmup_epochs: int = Field(..., ge=0)
    total_epochs: int = Field(..., ge=1)
    steps_per_epoch: int = Field(..., ge=1)
    lr_init: float = Field(..., gt=0.0)
    lr_final: float = Field(..., gt=0.0)

    @model_validator(mode="after")
    def _check(self) -> "Schedule":
        if self.warmup_epochs >= self.total_epochs:
            raise ScheduleException(f"warmup_epochs {self.warmup_epochs} must be < total_epochs {self.total_epochs}")
        if self.lr_final > self.lr_init:
            raise ScheduleException(f"lr_final {self.lr_final} must be <= lr_init {self.lr_init}")
        return self

    @property
    def warmup_steps(self) -> int:
        return self.warmup_epochs * self.steps_per_epoch

    @property
    def total_steps(self) -> int:
        return self.total_epochs * self.steps_per_epoch

    @classmethod
    def from_config(cls, config: TrainConfig, steps_per_epoch: int) -> "Schedule":
        return cls(warmup_epochs=config.trainer.warmup_epochs, total_epochs=config.trainer.total_epochs,
                   steps_per_epoch=steps_per_epoch, lr_init=config.optim.lr_init, lr_final=config.optim.lr_final)


def lr_at(step: int, schedule: Schedule) -> float:
    """
    Linear ramp 0 -> lr_init over the warmup steps, then cosine decay that
    hits lr_init on the first main step and lr_final on the last.
    """
    if not 0 <= step < schedule.total_steps:
        raise ScheduleException(f"step {step} outside [0, {schedule.total_steps})")
    warmup = schedule.warmup_steps
    if step < warmup:
        return schedule.lr_init * step / warmup
    main_steps = schedule.total_steps - warmup
    index = step - warmup
    if index == 0:
        return schedule.lr_init
    if index == main_steps - 1:
        return schedule.lr_final
    progress = index / (main_steps - 1)
    return schedule.lr_final + 0.5 * (schedule.lr_init - schedule.lr_final) * (1.0 + math.cos(math.pi * progress))


def evaluate(classifier: ViTClassifier, dataset: ImageDataset, batch_size: int = 256,
             device: str = "cpu") -> EvalReport:
    """Top-1 accuracy in eval mode, no augmentation."""
    if len(dataset) == 0:
        raise DataException("validation set is empty")
    predictions = []
    with torch.no_grad(), forward_mode(classifier, ForwardModeEnum.EVAL):
        for start in range(0, len(dataset), batch_size):
            index = torch.arange(start, min(start + batch_size, len(dataset)))
            logits = classifier(dataset.float_images(index).to(device))
            predictions.append(logits.argmax(dim=-1).cpu())
    y_pred = torch.cat(predictions).numpy()
    y_true = dataset.labels.numpy()
    correct = int((y_pred == y_true).sum())

    matrix = confusion_matrix(y_true, y_pred, labels=np.arange(dataset.num_classes))
    support = matrix.sum(axis=1)
    per_class = [float(matrix[i, i] / support[i]) if support[i] else None for i in range(dataset.num_classes)]
    return EvalReport(top1_accuracy=correct / len(y_true), num_samples=len(y_true),
                      num_correct=correct, per_class_accuracy=per_class)


class SemiMAETrainingPipeline:
    """
    Warmup and main-phase training of the shared-encoder classifier with
    pseudo-labelling and the reconstruction branch.

    Orchestrates:
    1. Batch composition (DatasetService)
    2. Per-step loss wiring and one AdamW update (train_step)
    3. Warmup loop (lambda_u = 0) then main loop (full objective)
    4. Periodic evaluation, metrics records and checkpoints
    """

    def __init__(self,
                 config: TrainConfig,
                 train_set: ImageDataset,
                 val_set: Optional[ImageDataset],
                 manifest: SplitManifest,
                 output_dir: Optional[Path] = None,
                 device: str = "cpu"):
        self.config = config
        self.device = device
        self.model: SemiMAEModel = build_model(config, device)
        self.optimizer = torch.optim.AdamW(
            self.model.parameter_groups(config.optim.weight_decay),
            lr=config.optim.lr_init,
            betas=(config.optim.beta1, config.optim.beta2),
        )
        self.rng = RngStreams(config.seed)
        self.data = DatasetService(config, train_set, manifest)
        self.val_set = val_set
        self.schedule = Schedule.from_config(config, self.data.steps_per_epoch)
        self.state = RunState()

        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.metrics: Optional[MetricsLogger] = None
        if self.output_dir is not None:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            self.metrics = MetricsLogger(self.output_dir / "metrics.jsonl")

        logger.info(f"SemiMAETrainingPipeline initialized: {self.schedule.total_steps} steps "
                    f"({self.schedule.warmup_steps} warmup), device={device}")

    # ------------------------------------------------------------------ steps

    def objective_weights(self, step: int) -> Tuple[float, float]:
        """(lambda_u, mu_mae) in force at `step`."""
        ssl = self.config.ssl
        if step >= self.schedule.warmup_steps:
            return ssl.lambda_u, ssl.mu_mae
        if self.config.trainer.warmup_objective == WarmupObjectiveEnum.SUPERVISED_ONLY:
            return 0.0, 0.0
        return 0.0, ssl.mu_mae

    def train_step(self, labeled: LabeledBatch, unlabeled: UnlabeledBatch,
                   lambda_u: Optional[float] = None, mu_mae: Optional[float] = None,
                   lr: Optional[float] = None) -> LossBreakdown:
        """
        One optimizer update on L = L_s + lambda * L_u + mu * L_MAE.

        Pseudo labels come from an eval-mode, no-grad forward of the weak view.
        Terms with zero weight are not computed and report 0.
        """
        lambda_u = self.config.ssl.lambda_u if lambda_u is None else lambda_u
        mu_mae = self.config.ssl.mu_mae if mu_mae is None else mu_mae
        if lr is not None:
            for group in self.optimizer.param_groups:
                group["lr"] = lr

        self.model.train()
        classifier = self.model.classifier

        l_s = supervised_loss(classifier(labeled.images), labeled.labels)
        l_u = l_s.new_zeros(())
        l_mae = l_s.new_zeros(())
        acceptance_rate = 0.0

        if lambda_u > 0:
            with torch.no_grad(), forward_mode(classifier, ForwardModeEnum.EVAL):
                weak_logits = classifier(unlabeled.weak_images)
            pseudo = make_pseudo_labels(weak_logits, self.config.ssl.tau)
            l_u, acceptance_rate = unsupervised_loss(classifier(unlabeled.strong_images), pseudo)

        if mu_mae > 0:
            l_mae = self.model.mim_branch.compute_loss(
                classifier, unlabeled.weak_images, generator=self.rng.masking).loss

        breakdown = total_loss(l_s.item(), l_u.item(), l_mae.item(), lambda_u, mu_mae, acceptance_rate)
        loss = combine_losses(l_s, l_u, l_mae, lambda_u, mu_mae)

        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if self.config.optim.grad_clip_norm is not None:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.config.optim.grad_clip_norm)
        self.optimizer.step()

        logger.debug(f"step {self.state.global_step}: {breakdown}")
        return breakdown

    def _run_step(self, labeled: LabeledBatch, unlabeled: UnlabeledBatch) -> LossBreakdown:
        step = self.state.global_step
        lr = lr_at(step, self.schedule)
        lambda_u, mu_mae = self.objective_weights(step)
        breakdown = self.train_step(labeled.to(self.device), unlabeled.to(self.device), lambda_u, mu_mae, lr)
        self.state.global_step += 1

        if self.metrics is not None and step % self.config.trainer.log_every_steps == 0:
            phase = "warmup" if step < self.schedule.warmup_steps else "main"
            self.metrics.log_metrics(breakdown, step=step, epoch=step // self.schedule.steps_per_epoch,
                                     phase=phase, lr=lr)
        return breakdown

    def step(self) -> LossBreakdown:
        """Draw the next batch and train on it."""
        labeled, unlabeled = self.data.next_batch(self.rng)
        return self._run_step(labeled, unlabeled)

    # ------------------------------------------------------------------ loops

    def _run_until(self, end_step: int) -> RunState:
        steps_per_epoch = self.schedule.steps_per_epoch
        while self.state.global_step < end_step:
            in_epoch = self.state.global_step % steps_per_epoch
            count = min(steps_per_epoch - in_epoch, end_step - self.state.global_step)
            for labeled, unlabeled in self.data.iter_batches(count, self.rng):
                try:
                    self._run_step(labeled, unlabeled)
                except NumericalException:
                    self._dump_crash()
                    raise
            if self.state.global_step % steps_per_epoch == 0:
                self.state.epoch = self.state.global_step // steps_per_epoch
                self._end_of_epoch()
        return self.state

    def warmup_loop(self) -> RunState:
        if self.state.global_step < self.schedule.warmup_steps:
            logger.info(f"Warmup: {self.config.trainer.warmup_epochs} epochs, "
                        f"objective={self.config.trainer.warmup_objective.value}")
        return self._run_until(self.schedule.warmup_steps)

    def main_loop(self) -> RunState:
        logger.info(f"Main phase: epochs {self.config.trainer.warmup_epochs}..{self.config.trainer.total_epochs}")
        return self._run_until(self.schedule.total_steps)

    def run_pipeline(self) -> RunState:
        try:
            self.warmup_loop()
            self.main_loop()
            if self.output_dir is not None:
                self.save(self.output_dir / "last.ckpt")
                trend = self.smoothed_supervised_loss()
                if len(trend):
                    logger.info(f"Smoothed l_s: first={trend.iloc[0]:.4f}, last={trend.iloc[-1]:.4f}")
            return self.state
        finally:
            if self.metrics is not None:
                self.metrics.close()

    def _end_of_epoch(self) -> None:
        epoch = self.state.epoch
        trainer = self.config.trainer
        if self.val_set is not None and epoch % trainer.eval_every_epochs == 0:
            report = evaluate(self.model.classifier, self.val_set, trainer.eval_batch_size, self.device)
            logger.info(f"Epoch {epoch}: top1={report.top1_accuracy:.4f} ({report.num_correct}/{report.num_samples})")
            if self.metrics is not None:
                self.metrics.log_metrics(None, step=self.state.global_step, epoch=epoch, phase="eval",
                                         eval_report=report)
            if report.top1_accuracy > self.state.best_metric:
                self.state.best_metric = report.top1_accuracy
                if self.output_dir is not None:
                    self.save(self.output_dir / "best.ckpt")
        if self.output_dir is not None and epoch % trainer.checkpoint_every_epochs == 0:
            self.save(self.output_dir / "last.ckpt")

    def _dump_crash(self) -> None:
        if self.output_dir is not None:
            path = self.save(self.output_dir / "crash.ckpt")
            logger.error(f"Numerical failure at step {self.state.global_step}; state dumped to {path}")

    # ------------------------------------------------------------- persistence

    def to_checkpoint(self) -> Checkpoint:
        self.state.rng_streams = self.rng.state_dict()
        self.state.data_cursor = self.data.state_dict()
        return Checkpoint(
            config=self.config.model_dump(mode="json"),
            model_state=self.model.state_dict(),
            optimizer_state=self.optimizer.state_dict(),
            run_state=self.state.model_copy(deep=True),
        )

    def save(self, path: Path) -> Path:
        return save_checkpoint(self.to_checkpoint(), path)

    def restore(self, checkpoint: Checkpoint) -> RunState:
        load_model_state(self.model, checkpoint.model_state)
        self.optimizer.load_state_dict(checkpoint.optimizer_state)
        self.rng.load_state_dict(checkpoint.run_state.rng_streams)
        self.data.load_state_dict(checkpoint.run_state.data_cursor)
        self.state = checkpoint.run_state.model_copy(deep=True)
        logger.info(f"Restored run at step {self.state.global_step}, epoch {self.state.epoch}")
        return self.state

    def resume(self, path: Path) -> RunState:
        return self.restore(load_checkpoint(path))

    def _training_records(self) -> pd.DataFrame:
        path = self.output_dir / "metrics.jsonl" if self.output_dir is not None else None
        if path is None or not path.is_file() or path.stat().st_size == 0:
            return pd.DataFrame(columns=["epoch", "l_s"])
        frame = MetricsLogger.read(path)
        return frame[frame["phase"] != "eval"]

    def smoothed_supervised_loss(self, window: int = 10) -> pd.Series:
        """Rolling mean of l_s over training records of the metrics log."""
        frame = self._training_records()
        if frame.empty:
            return pd.Series(dtype=float)
        return frame["l_s"].rolling(window, min_periods=1).mean().reset_index(drop=True)

    def epoch_supervised_loss(self) -> pd.Series:
        """Mean l_s per epoch, indexed by epoch."""
        frame = self._training_records()
        if frame.empty:
            return pd.Series(dtype=float)
        return frame.groupby("epoch")["l_s"].mean()


def compare_with_baseline(config: TrainConfig,
                          train_set: ImageDataset,
                          val_set: ImageDataset,
                          manifest: SplitManifest,
                          output_dir: Optional[Path] = None,
                          device: str = "cpu") -> BaselineComparison:
    """
    Train the configured objective and a supervised-only baseline (lambda_u = mu_mae = 0)
    with the same seed, split and schedule, then evaluate both final models.

    Each run writes its artifacts under output_dir/<run name> when output_dir is given.
    """
    baseline_config = load_config(overrides=deep_merge(config.model_dump(mode="json"),
                                                       {"ssl": {"lambda_u": 0.0, "mu_mae": 0.0}}))
    reports = {}
    for name, run_config in (("semi_mae", config), ("supervised_baseline", baseline_config)):
        logger.info(f"Comparison run {name}: lambda_u={run_config.ssl.lambda_u}, mu_mae={run_config.ssl.mu_mae}")
        run_dir = Path(output_dir) / name if output_dir is not None else None
        pipeline = SemiMAETrainingPipeline(run_config, train_set, val_set, manifest, run_dir, device)
        pipeline.run_pipeline()
        reports[name] = evaluate(pipeline.model.classifier, val_set, run_config.trainer.eval_batch_size, device)

    comparison = BaselineComparison(
        semi_mae=reports["semi_mae"],
        supervised_baseline=reports["supervised_baseline"],
        delta_top1=reports["semi_mae"].top1_accuracy - reports["supervised_baseline"].top1_accuracy,
    )
    logger.info(f"Semi-MAE top1={comparison.semi_mae.top1_accuracy:.4f}, "
                f"supervised baseline top1={comparison.supervised_baseline.top1_accuracy:.4f}, "
                f"delta={comparison.delta_top1:+.4f}")
    return comparison
