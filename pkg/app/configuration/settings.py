import sys

from loguru import logger
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings read from the environment / .env"""

    model_config = SettingsConfigDict(env_file=".env", extra="ignore")

    # Logging
    log_level: str = Field(default="INFO", alias="LOG_LEVEL")
    log_file: str = Field(default="semi_mae.log", alias="LOG_FILE")

    # Torch runtime
    device: str = Field(default="cpu", alias="DEVICE")
    torch_threads: int = Field(default=0, ge=0, alias="TORCH_THREADS")


def _not_metrics(record) -> bool:
    return "metrics_sink" not in record["extra"]


def configure_logging(settings: Settings) -> None:
    """Install the console and file sinks. Metrics records go to their own sinks."""
    logger.remove()
    logger.add(sys.stderr, level=settings.log_level, filter=_not_metrics)
    if settings.log_file:
        logger.add(settings.log_file, level=settings.log_level, filter=_not_metrics,
                   rotation="10 MB", retention=5)
