"""Typed, layered run configuration."""

from config.settings import ConfigManager, ICLConfig, RunConfig, load_config, parse_override

__all__ = ["ConfigManager", "ICLConfig", "RunConfig", "load_config", "parse_override"]
