"""
KSTPP Toolkit - Plugin manager

Finds the model-kind plugins under ``plugins/`` and hands out instances.
"""

import importlib.util
import sys
import traceback
from pathlib import Path
from typing import Any, Dict, List, Optional, Type

from core.errors import PluginError
from core.plugin_base import ModelPlugin
from utils.logger import logger
from utils.path_manager import PathManager


class PluginManager:
    """Discovery and instantiation of model-kind plugins"""

    def __init__(self, plugins_dir: Optional[Path] = None):
        self.plugins_dir = Path(plugins_dir) if plugins_dir else PathManager.get_plugins_path()
        self._classes: Dict[str, Type[ModelPlugin]] = {}
        self._instances: Dict[str, ModelPlugin] = {}

    def discover_plugins(self) -> List[Dict[str, Any]]:
        """Info dicts for every plugin directory; broken ones are reported, not raised"""
        available_plugins = []
        if not self.plugins_dir.is_dir():
            logger.warning(f"[PLUGIN] ⚠️ Plugin directory not found: {self.plugins_dir}")
            return available_plugins

        for plugin_dir in sorted(self.plugins_dir.iterdir()):
            if not plugin_dir.is_dir() or plugin_dir.name.startswith("_"):
                continue
            if not (plugin_dir / "__init__.py").exists():
                continue

            plugin_info = self._get_plugin_info(plugin_dir)
            if plugin_info is None:
                plugin_info = {
                    "name": plugin_dir.name,
                    "display_name": plugin_dir.name,
                    "version": "Unknown",
                    "author": "Unknown",
                    "description": "Invalid plugin",
                    "enabled": False,
                    "is_available": False,
                    "error_info": "Plugin import failed",
                    "path": str(plugin_dir),
                }
                logger.warning(f"[PLUGIN] ⚠️ Added error plugin info for: {plugin_dir.name}")
            available_plugins.append(plugin_info)

        logger.info(f"[PLUGIN] 🔍 Discovered {len(available_plugins)} plugins")
        return available_plugins

    def _import_plugin_class(self, plugin_dir: Path) -> Optional[Type[ModelPlugin]]:
        plugin_name = plugin_dir.name
        module_name = f"plugins.{plugin_name}"
        spec = importlib.util.spec_from_file_location(module_name, plugin_dir / "__init__.py")
        if spec is None or spec.loader is None:
            return None
        module = importlib.util.module_from_spec(spec)
        sys.modules[module_name] = module
        spec.loader.exec_module(module)

        plugin_class = getattr(module, "Plugin", None)
        if plugin_class is None or not isinstance(plugin_class, type) or not issubclass(plugin_class, ModelPlugin):
            logger.error(f"[PLUGIN] ⚠️ Plugin {plugin_name} has no valid Plugin class")
            return None
        return plugin_class

    def _get_plugin_info(self, plugin_dir: Path) -> Optional[Dict[str, Any]]:
        try:
            plugin_class = self._import_plugin_class(plugin_dir)
            if plugin_class is None:
                return None
            instance = plugin_class()
            info = instance.get_plugin_info()
            info["path"] = str(plugin_dir)
            self._classes[info["name"]] = plugin_class
            self._instances[info["name"]] = instance
            logger.info(f"[PLUGIN] 🔍 Plugin {info['name']} discovered")
            return info
        except Exception as e:
            logger.error(f"[PLUGIN] ❌ Failed to get plugin info for {plugin_dir.name}: {e} - {traceback.format_exc()}")
            return None

    def available_kinds(self) -> List[str]:
        if not self._instances:
            self.discover_plugins()
        return sorted(name for name, p in self._instances.items() if p.is_available and p.enabled)

    def get_plugin(self, name: str) -> ModelPlugin:
        """
        The plugin instance for model kind ``name``

        Raises:
            PluginError: unknown kind, or a plugin that failed compliance or is disabled
        """
        if name not in self._instances:
            self.discover_plugins()
        plugin = self._instances.get(name)
        if plugin is None:
            raise PluginError(f"no plugin for model kind '{name}'")
        if not plugin.is_available:
            raise PluginError(f"plugin '{name}' is unavailable: {plugin.error_info}")
        if not plugin.enabled:
            raise PluginError(f"plugin '{name}' is disabled in its config.json")
        logger.debug(f"[PLUGIN] ✅ Using plugin {name}")
        return plugin


_manager: Optional[PluginManager] = None


def get_plugin_manager() -> PluginManager:
    global _manager
    if _manager is None:
        _manager = PluginManager()
    return _manager
