from typing import Any, Optional

from loguru import logger


class SemiMAEException(Exception):
    """Base exception for every error raised by the pipeline."""

    def __init__(self, message: str):
        super().__init__(message)
        logger.error(f"{type(self).__name__}: {message}")


class ConfigurationException(SemiMAEException):
    """Config file could not be parsed or references an unknown/ill-typed key."""


class ConfigValidationException(SemiMAEException):
    """Config parsed but violates a cross-field constraint."""


class CheckpointIncompatibleException(SemiMAEException):
    pass


class CheckpointIntegrityException(SemiMAEException):
    pass


class MetricsSinkException(SemiMAEException):
    pass


class SplitException(SemiMAEException):
    pass


class DataException(SemiMAEException):
    pass


class ShapeException(SemiMAEException):
    pass


class MaskingException(SemiMAEException):
    pass


class LabelException(SemiMAEException):
    pass


class AlignmentException(SemiMAEException):
    pass


class ScheduleException(SemiMAEException):
    pass


class UsageException(SemiMAEException):
    pass


class NumericalException(SemiMAEException):
    """Non-finite loss. `breakdown` holds the per-term values at failure time."""

    def __init__(self, message: str, breakdown: Optional[Any] = None):
        self.breakdown = breakdown
        super().__init__(message if breakdown is None else f"{message} | breakdown={breakdown}")
