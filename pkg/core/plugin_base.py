"""
KSTPP Toolkit - Model plugin base class

Every model kind (kstpp, poisson, sthp) lives in ``plugins/<kind>/`` as a
``Plugin`` subclass of ``ModelPlugin`` next to a ``config.json`` holding
``plugin_info`` and ``available_config`` (the kind's run-config defaults).
"""

import json
import sys
import traceback
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from core.events import Domain, EventSequence, PointProcessModel
from utils.logger import logger

REQUIRED_ATTRS = ("NAME", "DISPLAY_NAME", "DESCRIPTION", "VERSION", "AUTHOR")
REQUIRED_INFO_FIELDS = ("name", "display_name", "description", "version", "author")


class ModelPlugin(ABC):
    """
    Base class for model-kind plugins

    Subclasses set the class metadata and implement ``fit`` and ``load``.
    """

    NAME: str = ""
    DISPLAY_NAME: str = ""
    DESCRIPTION: str = ""
    VERSION: str = "1.0.0"
    AUTHOR: str = ""

    def __init__(self):
        self.is_available = True
        self.error_info: Optional[str] = None
        self.plugin_dir: Optional[Path] = self._get_plugin_directory()
        self.config: Dict[str, Any] = {}
        self._check_plugin_compliance()
        if self.is_available:
            self._load_plugin_config()

    # ------------------------------------------------------------------ metadata

    def get_name(self) -> str:
        return self.NAME or self.__class__.__module__.split(".")[-1]

    def get_display_name(self) -> str:
        return self.DISPLAY_NAME or self.get_name()

    def get_version(self) -> str:
        return self.VERSION

    @property
    def enabled(self) -> bool:
        return bool(self.config.get("available_config", {}).get("enabled", False))

    def get_available_config(self) -> Dict[str, Any]:
        """Run-config defaults of this kind (without the ``enabled`` flag)"""
        defaults = dict(self.config.get("available_config", {}))
        defaults.pop("enabled", None)
        return defaults

    def get_plugin_info(self) -> Dict[str, Any]:
        return {
            "name": self.get_name(),
            "display_name": self.get_display_name(),
            "description": self.DESCRIPTION,
            "version": self.get_version(),
            "author": self.AUTHOR,
            "enabled": self.enabled,
            "is_available": self.is_available,
            "error_info": self.error_info,
        }

    def __repr__(self) -> str:
        return (
            f"<{self.__class__.__name__}(name='{self.get_name()}', "
            f"version='{self.get_version()}', available={self.is_available})>"
        )

    # ------------------------------------------------------------------ model kind

    @abstractmethod
    def fit(self, train: Sequence[EventSequence], validation: Optional[Sequence[EventSequence]], run_config, domain: Domain):
        """Fit a model of this kind; returns a ``core.train.FitResult``"""

    @abstractmethod
    def load(self, payload: dict, domain: Domain) -> PointProcessModel:
        """Rebuild a fitted model from its checkpoint payload"""

    # ------------------------------------------------------------------ logging

    def log_info(self, message: str):
        logger.info(f"[{self.get_name()}] {message}")

    def log_warning(self, message: str):
        logger.warning(f"[{self.get_name()}] {message}")

    def log_error(self, message: str):
        logger.error(f"[{self.get_name()}] {message}")

    def log_debug(self, message: str):
        logger.debug(f"[{self.get_name()}] {message}")

    # ------------------------------------------------------------------ compliance

    def _mark_unavailable(self, message: str) -> None:
        logger.error(f"❌ [Plugin Compliance] {self.get_name()} {message}")
        self.is_available = False
        self.error_info = message

    def _check_plugin_compliance(self):
        """Class metadata must be set and config.json must be well formed"""
        missing = [attr for attr in REQUIRED_ATTRS if not getattr(self.__class__, attr, "")]
        if missing:
            self._mark_unavailable(f"Missing required attributes: {', '.join(missing)}")
            return
        if self.plugin_dir is None:
            self._mark_unavailable("Cannot determine plugin directory")
            return
        config_file = self.plugin_dir / "config.json"
        if not config_file.exists():
            self._mark_unavailable(f"config.json not found in {self.plugin_dir}")
            return
        self._validate_config_file(config_file)

    def _get_plugin_directory(self) -> Optional[Path]:
        module = sys.modules.get(self.__class__.__module__)
        module_file = getattr(module, "__file__", None)
        if module_file:
            plugin_dir = Path(module_file).parent
            logger.debug(f"[PLUGIN] 🔍 Found plugin directory: {plugin_dir}")
            return plugin_dir
        return None

    def _validate_config_file(self, config_file: Path) -> bool:
        try:
            with open(config_file, "r", encoding="utf-8") as f:
                config_data = json.load(f)
        except json.JSONDecodeError as e:
            self._mark_unavailable(f"config.json is not valid JSON: {e}")
            return False

        for section in ("plugin_info", "available_config"):
            if section not in config_data:
                self._mark_unavailable(f"config.json missing '{section}' field")
                return False
        for field in REQUIRED_INFO_FIELDS:
            if field not in config_data["plugin_info"]:
                self._mark_unavailable(f"config.json missing required field: plugin_info.{field}")
                return False
        if not isinstance(config_data["available_config"].get("enabled"), bool):
            self._mark_unavailable("config.json 'enabled' field must be boolean")
            return False

        logger.debug(f"✅ [Plugin Compliance] {self.get_name()} config.json validation passed")
        return True

    def _load_plugin_config(self) -> None:
        try:
            with open(self.plugin_dir / "config.json", "r", encoding="utf-8") as f:
                self.config = json.load(f)
        except Exception as e:
            logger.error(f"[PLUGIN] ❌ Failed to read config of {self.get_name()}: {e} - {traceback.format_exc()}")
            self._mark_unavailable(f"Failed to read config.json: {e}")
