"""Exception hierarchy shared by every gdm module.

All toolkit errors derive from :class:`GdmError` so callers can catch one
base class at CLI boundaries while tests target the precise subclass.
"""

from __future__ import annotations


class GdmError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(GdmError, ValueError):
    """An argument violates an operation's documented precondition."""


class ConfigError(GdmError, ValueError):
    """A configuration object is internally inconsistent or incomplete."""


class ImageIOError(GdmError, OSError):
    """An image file could not be read or written."""


class CheckpointError(GdmError, RuntimeError):
    """A checkpoint file is missing, corrupt, or inconsistent with its metadata."""


class TrainingAbortError(GdmError, RuntimeError):
    """Training stopped early because the loss became non-finite."""
