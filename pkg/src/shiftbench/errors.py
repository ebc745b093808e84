"""Toolkit exception types."""


class ShiftBenchError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ShiftBenchError):
    """Invalid configuration value or violated precondition."""


class IngestionError(ShiftBenchError):
    """A dataset file could not be read or validated."""


class UnsupportedFormatError(IngestionError):
    """A signal file is in a format the toolkit refuses to convert silently."""


class TrainingError(ShiftBenchError):
    """Optimization diverged or could not run."""
