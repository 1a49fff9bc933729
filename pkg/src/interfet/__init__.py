"""Interface-reduced Poisson solver for single-layer-material transistors."""

from interfet.config import ConfigError, DeviceConfig

__all__ = ["ConfigError", "DeviceConfig"]
__version__ = "0.1.0"
