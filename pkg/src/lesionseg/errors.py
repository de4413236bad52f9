"""Exception hierarchy. Each family maps onto a CLI exit code."""

from __future__ import annotations


class LesionSegError(Exception):
    exit_code = 2


class ConfigError(LesionSegError):
    """Bad configuration, bad arguments, or a violated precondition."""

    exit_code = 1


class DataError(LesionSegError):
    """Unreadable, missing or inconsistent data on disk or in memory."""

    exit_code = 2


class ImageFormatError(DataError):
    pass


class ShapeError(DataError):
    pass


class EmptyLesionError(DataError):
    pass


class CheckpointError(DataError):
    pass


class NumericalError(LesionSegError):
    """NaN/Inf values, divergence or a failed gradient check."""

    exit_code = 3
