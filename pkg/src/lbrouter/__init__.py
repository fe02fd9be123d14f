"""Tail bounds, simulation and energy-delay tradeoffs for load-balanced routers."""
from .model import ConfigError, PowerModel, RouterConfig, TrafficSpec, max_load, power, validate_admissible

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "PowerModel",
    "RouterConfig",
    "TrafficSpec",
    "max_load",
    "power",
    "validate_admissible",
]
