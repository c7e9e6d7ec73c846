import pytest

from requests_models.train_config import TrainConfig
from services.data_pipeline import make_split
from services.training_pipeline import SemiMAETrainingPipeline, compare_with_baseline
from utils.image_datasets import load_datasets
from utils.run_tracker import MetricsLogger

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def desk_data():
    config = TrainConfig.from_preset("desk")
    train_set, val_set = load_datasets(config)
    manifest = make_split(len(train_set), train_set.labels.numpy(), config.data.labeled_fraction,
                          config.seed, config.model.num_classes)
    return config, train_set, val_set, manifest


def test_desk_run_lowers_supervised_loss(desk_data, tmp_path):
    config, train_set, val_set, manifest = desk_data
    pipeline = SemiMAETrainingPipeline(config, train_set, val_set, manifest, tmp_path)
    state = pipeline.run_pipeline()
    assert state.epoch == config.trainer.total_epochs

    per_epoch = pipeline.epoch_supervised_loss()
    assert len(per_epoch) == config.trainer.total_epochs
    # epoch means of l_s never rise by more than 5% and end below where they started
    for previous, current in zip(per_epoch.iloc[:-1], per_epoch.iloc[1:]):
        assert current <= previous * 1.05
    assert per_epoch.iloc[-1] < per_epoch.iloc[0]


def test_semi_mae_keeps_up_with_supervised_baseline(desk_data, tmp_path):
    config, train_set, val_set, manifest = desk_data
    comparison = compare_with_baseline(config, train_set, val_set, manifest, tmp_path)
    print(comparison.model_dump_json())

    for name in ("semi_mae", "supervised_baseline"):
        records = MetricsLogger.records(tmp_path / name / "metrics.jsonl")
        train = [r for r in records if r.phase != "eval"]
        accuracy = [r.top1_accuracy for r in records if r.phase == "eval"]
        assert len(train) > 0 and len(accuracy) == config.trainer.total_epochs
        # no divergence: the final model keeps most of its best accuracy
        assert accuracy[-1] > 0.8 * max(accuracy), name

    assert comparison.semi_mae.top1_accuracy >= comparison.supervised_baseline.top1_accuracy - 0.005
