import pytest
import torch
from pydantic import ValidationError

from enums.rng_stream import RngStreamEnum
from exceptions.pipeline_exceptions import (
    CheckpointIncompatibleException,
    CheckpointIntegrityException,
    MetricsSinkException,
)
from models.semi_mae_model import build_model
from responses.eval_response import EvalReport
from responses.train_step_response import LossBreakdown
from utils.run_tracker import (
    Checkpoint,
    MetricsLogger,
    RngStreams,
    RunState,
    load_checkpoint,
    parameter_payload,
    save_checkpoint,
)


@pytest.fixture
def checkpoint(tiny_config):
    model = build_model(tiny_config)
    rng = RngStreams(tiny_config.seed)
    return Checkpoint(config=tiny_config.model_dump(mode="json"), model_state=model.state_dict(),
                      run_state=RunState(epoch=1, global_step=6, rng_streams=rng.state_dict(), best_metric=0.5))


def test_round_trip_keeps_parameters_byte_identical(checkpoint, tmp_path):
    loaded = load_checkpoint(save_checkpoint(checkpoint, tmp_path / "run.ckpt"))
    assert parameter_payload(loaded.model_state) == parameter_payload(checkpoint.model_state)
    assert loaded.config == checkpoint.config
    assert loaded.run_state.global_step == 6
    assert loaded.run_state.best_metric == 0.5


def test_same_seed_same_parameters(tiny_config):
    a = build_model(tiny_config).state_dict()
    b = build_model(tiny_config).state_dict()
    assert parameter_payload(a) == parameter_payload(b)


def test_version_mismatch(checkpoint, tmp_path):
    path = save_checkpoint(checkpoint, tmp_path / "run.ckpt")
    payload = torch.load(path, weights_only=True)
    payload["version"] = "semi-mae-ckpt/0"
    torch.save(payload, path)
    with pytest.raises(CheckpointIncompatibleException):
        load_checkpoint(path)


def test_corrupt_file(tmp_path):
    path = tmp_path / "run.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointIntegrityException):
        load_checkpoint(path)


def test_tampered_parameters(checkpoint, tmp_path):
    path = save_checkpoint(checkpoint, tmp_path / "run.ckpt")
    payload = torch.load(path, weights_only=True)
    name = next(iter(payload["model_state"]))
    payload["model_state"][name] = payload["model_state"][name] + 1.0
    torch.save(payload, path)
    with pytest.raises(CheckpointIntegrityException, match="digest"):
        load_checkpoint(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_rng_streams_are_independent_and_restorable():
    rng = RngStreams(0)
    state = rng.state_dict()
    masking = torch.rand(3, generator=rng.masking)
    torch.rand(100, generator=rng.augmentation)

    other = RngStreams(0)
    assert torch.equal(torch.rand(3, generator=other.masking), masking)
    assert not torch.equal(torch.rand(3, generator=rng[RngStreamEnum.DATA_ORDER]), masking)

    rng.load_state_dict(state)
    assert torch.equal(torch.rand(3, generator=rng.masking), masking)


def test_rng_state_missing_a_stream():
    state = RngStreams(0).state_dict()
    state.pop(RngStreamEnum.MASKING.value)
    with pytest.raises(CheckpointIntegrityException):
        RngStreams(1).load_state_dict(state)


def _breakdown(step: int) -> LossBreakdown:
    return LossBreakdown(l_s=1.0 / (step + 1), l_u=0.1, l_mae=0.2, total=2.0, acceptance_rate=0.25)


def test_metrics_records_append_in_order(tmp_path):
    path = tmp_path / "metrics.jsonl"
    with MetricsLogger(path) as metrics:
        for step in range(3):
            metrics.log_metrics(_breakdown(step), step=step, epoch=0, phase="warmup", lr=1e-4 * step)
        metrics.log_metrics(None, step=3, epoch=1, phase="eval",
                            eval_report=EvalReport(top1_accuracy=0.5, num_samples=4, num_correct=2,
                                                   per_class_accuracy=[0.5, None]))
    records = MetricsLogger.records(path)
    assert [r.step for r in records] == [0, 1, 2, 3]
    assert records[1].l_s == 0.5
    assert records[3].top1_accuracy == 0.5 and records[3].l_s is None

    frame = MetricsLogger.read(path)
    assert len(frame) == 4
    assert frame["acceptance_rate"].dropna().between(0.0, 1.0).all()


def test_metrics_log_appends_across_loggers(tmp_path):
    path = tmp_path / "metrics.jsonl"
    for step in range(2):
        with MetricsLogger(path) as metrics:
            metrics.log_metrics(_breakdown(step), step=step, epoch=0, phase="main")
    assert [r.step for r in MetricsLogger.records(path)] == [0, 1]


def test_acceptance_rate_outside_unit_interval():
    with pytest.raises(ValidationError):
        LossBreakdown(l_s=1.0, l_u=0.0, l_mae=0.0, total=1.0, acceptance_rate=1.5)


def test_unwritable_metrics_location(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("file, not a directory")
    with pytest.raises(MetricsSinkException):
        MetricsLogger(blocker / "metrics.jsonl")


def test_writing_after_close(tmp_path):
    metrics = MetricsLogger(tmp_path / "metrics.jsonl")
    metrics.close()
    with pytest.raises(MetricsSinkException):
        metrics.log_metrics(_breakdown(0), step=0, epoch=0, phase="main")
