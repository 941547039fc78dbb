"""Schwarz waveform relaxation with physics-informed networks for (non)local ADR equations."""

__version__ = "0.1.0"

from .errors import ConfigError, NumericError, UsageError  # noqa: E402

__all__ = ["ConfigError", "NumericError", "UsageError", "__version__"]
