import argparse
import sys
from pathlib import Path
from typing import List, Optional

import torch
from loguru import logger
from pydantic import ValidationError

from configuration.settings import Settings, configure_logging
from enums.subcommand import SubcommandEnum
from exceptions.pipeline_exceptions import SemiMAEException, UsageException
from models.semi_mae_model import build_model
from requests_models.command_request import CommandInvocation
from requests_models.train_config import TrainConfig, deep_merge, dump_config, load_config
from responses.split_manifest import SplitManifest
from services.data_pipeline import make_split
from services.reconstruction_service import reconstruction_panels, write_triptychs
from services.training_pipeline import SemiMAETrainingPipeline, compare_with_baseline, evaluate
from utils.image_datasets import load_dataset, load_datasets
from utils.run_tracker import load_checkpoint, load_model_state


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", dest="config_path", type=Path, help="TOML run config")
    common.add_argument("--preset", help="Preset under the config file (desk, vit_small)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Dotted override, e.g. --set ssl.tau=0.9 (repeatable)")
    common.add_argument("--output-dir", type=Path, default=Path("runs/latest"))
    common.add_argument("--print-config", action="store_true", help="Print the resolved config before running")

    parser = argparse.ArgumentParser(prog="semi-mae", description="Semi-supervised ViT with a masked autoencoder branch")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    train = sub.add_parser(SubcommandEnum.TRAIN.value, parents=[common], help="Warmup + main training")
    train.add_argument("--resume", type=Path, help="Checkpoint to continue from")

    evaluate_cmd = sub.add_parser(SubcommandEnum.EVAL.value, parents=[common], help="Top-1 accuracy on the validation set")
    evaluate_cmd.add_argument("--checkpoint", type=Path, required=True)

    sub.add_parser(SubcommandEnum.MAKE_SPLIT.value, parents=[common], help="Write a labeled/unlabeled split manifest")

    reconstruct = sub.add_parser(SubcommandEnum.RECONSTRUCT.value, parents=[common],
                                 help="Save original / masked / reconstruction panels")
    reconstruct.add_argument("--checkpoint", type=Path, required=True)
    reconstruct.add_argument("--mask-ratio", type=float)
    reconstruct.add_argument("--num-images", type=int, default=4)

    sub.add_parser(SubcommandEnum.COMPARE.value, parents=[common],
                   help="Train the configured objective and a supervised-only baseline, report both")
    return parser


def parse_invocation(argv: Optional[List[str]] = None) -> CommandInvocation:
    namespace = build_parser().parse_args(argv)
    try:
        return CommandInvocation(**{k: v for k, v in vars(namespace).items() if v is not None})
    except ValidationError as e:
        raise UsageException(f"invalid arguments: {e}") from e


def _resolve_config(invocation: CommandInvocation) -> TrainConfig:
    config = load_config(invocation.config_path, invocation.override_tree(), invocation.preset)
    if invocation.print_config:
        print(dump_config(config), end="")
    return config


def _split_for(config: TrainConfig, invocation: CommandInvocation, train_set) -> SplitManifest:
    if config.data.split_manifest:
        manifest = SplitManifest.load(Path(config.data.split_manifest))
        logger.info(f"Using split manifest {config.data.split_manifest}")
        return manifest
    manifest = make_split(len(train_set), train_set.labels.numpy(), config.data.labeled_fraction,
                          config.seed, config.model.num_classes)
    manifest.save(invocation.output_dir / "split.json")
    return manifest


def _config_from_checkpoint(checkpoint, invocation: CommandInvocation) -> TrainConfig:
    config = load_config(overrides=deep_merge(checkpoint.config, invocation.override_tree()))
    if invocation.print_config:
        print(dump_config(config), end="")
    return config


def train_command(invocation: CommandInvocation, settings: Settings) -> int:
    config = _resolve_config(invocation)
    output_dir = invocation.prepare_output_dir()
    (output_dir / "config.toml").write_text(dump_config(config))
    train_set, val_set = load_datasets(config)
    manifest = _split_for(config, invocation, train_set)

    pipeline = SemiMAETrainingPipeline(config, train_set, val_set, manifest, output_dir, settings.device)
    if invocation.resume is not None:
        pipeline.resume(invocation.resume)
    pipeline.run_pipeline()
    report = evaluate(pipeline.model.classifier, val_set, config.trainer.eval_batch_size, settings.device)
    print(report.model_dump_json())
    return 0


def eval_command(invocation: CommandInvocation, settings: Settings) -> int:
    checkpoint = load_checkpoint(invocation.checkpoint)
    config = _config_from_checkpoint(checkpoint, invocation)
    model = build_model(config, settings.device)
    load_model_state(model, checkpoint.model_state)
    report = evaluate(model.classifier, load_dataset(config, train=False),
                      config.trainer.eval_batch_size, settings.device)
    print(report.model_dump_json())
    return 0


def make_split_command(invocation: CommandInvocation, settings: Settings) -> int:
    config = _resolve_config(invocation)
    invocation.prepare_output_dir()
    train_set = load_dataset(config, train=True)
    manifest = make_split(len(train_set), train_set.labels.numpy(), config.data.labeled_fraction,
                          config.seed, config.model.num_classes)
    path = manifest.save(invocation.output_dir / "split.json")
    print(path)
    return 0


def reconstruct_command(invocation: CommandInvocation, settings: Settings) -> int:
    checkpoint = load_checkpoint(invocation.checkpoint)
    config = _config_from_checkpoint(checkpoint, invocation)
    model = build_model(config, settings.device)
    load_model_state(model, checkpoint.model_state)
    val_set = load_dataset(config, train=False)
    count = min(invocation.num_images, len(val_set))
    images = val_set.float_images(torch.arange(count)).to(settings.device)
    generator = torch.Generator().manual_seed(config.seed)
    panels = reconstruction_panels(model, images, generator=generator)
    for path in write_triptychs(panels, invocation.prepare_output_dir()):
        print(path)
    return 0


def compare_command(invocation: CommandInvocation, settings: Settings) -> int:
    config = _resolve_config(invocation)
    output_dir = invocation.prepare_output_dir()
    (output_dir / "config.toml").write_text(dump_config(config))
    train_set, val_set = load_datasets(config)
    manifest = _split_for(config, invocation, train_set)
    comparison = compare_with_baseline(config, train_set, val_set, manifest, output_dir, settings.device)
    print(comparison.model_dump_json())
    return 0


COMMANDS = {
    SubcommandEnum.TRAIN: train_command,
    SubcommandEnum.EVAL: eval_command,
    SubcommandEnum.MAKE_SPLIT: make_split_command,
    SubcommandEnum.RECONSTRUCT: reconstruct_command,
    SubcommandEnum.COMPARE: compare_command,
}


def run(argv: Optional[List[str]] = None) -> int:
    """
    Entry point. Exit codes: 0 success, 1 runtime failure, 2 usage error.
    """
    settings = Settings()
    configure_logging(settings)
    if settings.torch_threads:
        torch.set_num_threads(settings.torch_threads)
    try:
        invocation = parse_invocation(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    except UsageException as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    logger.info(f"Running {invocation.subcommand.value}")
    try:
        return COMMANDS[invocation.subcommand](invocation, settings)
    except (SemiMAEException, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
