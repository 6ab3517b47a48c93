"""Custom exceptions for the particle tracer."""
from typing import Optional


class TracerError(Exception):
    """Base exception class for the tracer."""
    pass


class ConfigError(TracerError):
    """Exception raised for invalid settings or configuration files."""
    pass


class SceneFormatError(TracerError):
    """Exception raised while parsing or writing a particle checkpoint."""

    def __init__(self, message: str, byte_offset: Optional[int] = None):
        if byte_offset is not None:
            message = f"{message} (at byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class MeshFormatError(TracerError):
    """Exception raised for malformed mesh files."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ImageFormatError(TracerError):
    """Exception raised for unsupported or unreadable images."""
    pass


class CameraError(TracerError):
    """Exception raised for invalid camera models or camera files."""
    pass


class ComposeError(TracerError):
    """Exception raised for invalid effect-composition descriptions."""
    pass


class ContractViolationError(TracerError):
    """Exception raised when an internal contract is broken (refit size, replay order, tree structure)."""
    pass


class NumericalError(TracerError):
    """Exception raised when a computation produces non-finite values."""
    pass
