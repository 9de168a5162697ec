"""hazecast: wind-aware spatio-temporal PM2.5 forecasting on station graphs."""

__version__ = "0.1.0"

from .errors import DataError, HazecastError, NumericError, UsageError

__all__ = ["DataError", "HazecastError", "NumericError", "UsageError", "__version__"]
