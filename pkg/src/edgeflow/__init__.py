"""edgeflow: lightweight edge stream-processing engine for decision models."""

from .config import load_config, load_config_file, validate_config
from .types import EngineConfig, Measurement, Quality

__version__ = "0.1.0"

__all__ = [
    "EngineConfig",
    "Measurement",
    "Quality",
    "load_config",
    "load_config_file",
    "validate_config",
    "__version__",
]
