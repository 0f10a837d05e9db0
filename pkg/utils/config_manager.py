# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - Configuration Manager
Centralized JSON configuration loading and merging
"""

import copy
import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

from utils.logger import logger
from utils.path_manager import PathManager


class ConfigurationManager:
    """Centralized configuration manager for the application"""

    @staticmethod
    def _get_resource_path(config_path: Union[str, Path]) -> Path:
        """Resolve a config path: absolute, then working directory, then application base"""
        path = Path(config_path)
        if path.is_absolute() or path.exists():
            return path
        return PathManager.get_resource_path(path)

    @staticmethod
    def load_json_config(config_path: Union[str, Path], defaults: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """
        Load JSON configuration with fallback to defaults

        Args:
            config_path: Path to the configuration file
            defaults: Default configuration to use if file doesn't exist or is invalid

        Returns:
            Configuration dictionary
        """
        if defaults is None:
            defaults = {}

        try:
            full_path = ConfigurationManager._get_resource_path(config_path)
            if full_path.exists():
                with open(full_path, 'r', encoding='utf-8') as f:
                    config = json.load(f)
                    logger.debug(f"[CONFIG] Loaded configuration from {full_path}")
                    return config
            else:
                logger.warning(f"[CONFIG] ⚠️ Configuration file not found: {full_path}, using defaults")
                return defaults
        except (json.JSONDecodeError, IOError) as e:
            logger.error(f"[CONFIG] ❌ Error loading configuration from {config_path}: {e}")
            return defaults

    @staticmethod
    def load_required_json(config_path: Union[str, Path]) -> Dict[str, Any]:
        """
        Load a JSON document that must exist and parse

        Raises:
            ConfigError: when the file is missing or malformed
        """
        from core.errors import ConfigError

        full_path = ConfigurationManager._get_resource_path(config_path)
        if not full_path.exists():
            raise ConfigError(f"configuration file not found: {config_path}")
        try:
            with open(full_path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"configuration file {config_path} is not valid JSON: {e}") from e

    @staticmethod
    def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
        """Return ``base`` with ``override`` merged in recursively (inputs untouched)"""
        merged = copy.deepcopy(base)
        for key, value in override.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key] = ConfigurationManager.deep_merge(merged[key], value)
            else:
                merged[key] = copy.deepcopy(value)
        return merged

    @staticmethod
    def load_app_config() -> Dict[str, Any]:
        """Load main application configuration"""
        defaults = {
            "app_info": {"name": "KSTPP Toolkit", "version": "1.0.0"},
            "run_defaults": {},
        }
        return ConfigurationManager.load_json_config("config/app_config.json", defaults)

    @staticmethod
    def load_run_defaults() -> Dict[str, Any]:
        """The ``run_defaults`` block of the application config"""
        return dict(ConfigurationManager.load_app_config().get("run_defaults", {}))

    @staticmethod
    def load_plugin_config(plugin_name: str) -> Dict[str, Any]:
        """Load a model-kind plugin's config.json"""
        return ConfigurationManager.load_json_config(PathManager.get_plugin_config_path(plugin_name), {})

    @staticmethod
    def load_preset(preset_name: str) -> Dict[str, Any]:
        """Load a synthetic-process preset (``syn1`` / ``syn2``)"""
        return ConfigurationManager.load_required_json(PathManager.get_preset_path(preset_name))
