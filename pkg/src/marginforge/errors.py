"""Exception types shared across the toolkit."""

from __future__ import annotations


class MarginforgeError(Exception):
    """Base class for all toolkit errors."""


class ParseError(MarginforgeError):
    """Malformed input data; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str) -> None:
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ConfigError(MarginforgeError):
    """Invalid configuration or parameter combination."""


class PipelineError(MarginforgeError):
    """A training pipeline stage could not proceed."""
