"""
Training Plugin System v1.0
===========================
Observer plugins for the experiment loop.

Plugins see a context dict at fixed points of a run and report back a
PluginResult. They observe only: nothing a plugin returns feeds back into
training, and a failing plugin never aborts a run.

Features:
- Plugin auto-discovery from a plugins/ directory
- Hook points: pre/post task, pre/post step, post run, on error
- Per-plugin configuration via YAML
- Priority ordering and per-call timing
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Optional
import importlib.util
import logging
import time

import yaml

logger = logging.getLogger(__name__)


class HookPoint(Enum):
    """Points in the training loop where plugins run"""
    PRE_TASK = "pre_task"
    PRE_STEP = "pre_step"
    POST_STEP = "post_step"
    POST_TASK = "post_task"
    POST_RUN = "post_run"
    ON_ERROR = "on_error"


class PluginPriority(Enum):
    """Execution order within a hook (lower runs first)"""
    HIGHEST = 0
    HIGH = 25
    NORMAL = 50
    LOW = 75
    LOWEST = 100


@dataclass
class PluginResult:
    """Outcome of one plugin call"""
    success: bool
    plugin_name: str
    plugin_version: str
    message: str
    data: dict = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)
    execution_time_ms: float = 0.0
    timestamp: str = field(default_factory=lambda: datetime.now().isoformat())

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "plugin_name": self.plugin_name,
            "plugin_version": self.plugin_version,
            "message": self.message,
            "data": self.data,
            "errors": self.errors,
            "execution_time_ms": self.execution_time_ms,
            "timestamp": self.timestamp,
        }


@dataclass
class PluginConfig:
    enabled: bool = True
    priority: PluginPriority = PluginPriority.NORMAL
    hooks: list[HookPoint] = field(default_factory=lambda: [HookPoint.POST_TASK])
    settings: dict = field(default_factory=dict)


class PluginBase(ABC):
    """
    Base class for training-loop plugins.

    Example:
        class TaskCounter(PluginBase):
            name = property(lambda self: "TaskCounter")
            version = property(lambda self: "1.0.0")
            description = property(lambda self: "Counts finished tasks")

            def execute(self, context: dict) -> PluginResult:
                return PluginResult(True, self.name, self.version,
                                    f"task {context['task_id']} done")
    """

    def __init__(self, config: Optional[PluginConfig] = None):
        self._config = config or PluginConfig()

    @property
    @abstractmethod
    def name(self) -> str:
        """Unique plugin name"""

    @property
    @abstractmethod
    def version(self) -> str:
        """Plugin version (semver)"""

    @property
    @abstractmethod
    def description(self) -> str:
        """Short plugin description"""

    @property
    def config(self) -> PluginConfig:
        return self._config

    @config.setter
    def config(self, value: PluginConfig):
        self._config = value

    @property
    def hooks(self) -> list[HookPoint]:
        return self._config.hooks

    @property
    def priority(self) -> PluginPriority:
        return self._config.priority

    def initialize(self) -> bool:
        """Called on registration; False rejects the plugin."""
        return True

    def cleanup(self) -> None:
        pass

    @abstractmethod
    def execute(self, context: dict) -> PluginResult:
        """
        Run the plugin for one hook.

        Args:
            context: Execution context containing:
                - hook: current HookPoint
                - method, seed: run identity
                - task_id, step: position in the stream (when applicable)
                - report: StepReport (post_step), RunReport (post_run)
                - expected_passes: backward passes the method should cost (post_step only)
                - accuracies: row of the result matrix (post_task only)
                - error: the exception (on_error only)
                - results: results from earlier plugins on this hook

        Returns:
            PluginResult with status and data
        """

    def on_error(self, error: Exception, context: dict) -> Optional[PluginResult]:
        logger.error(f"Plugin {self.name} error: {error}")
        return None


class PluginManager:
    """
    Plugin lifecycle: discovery, configuration, dispatch.

    Example:
        manager = PluginManager()
        manager.load_plugins("plugins/")
        manager.load_config("plugins/plugin_config.yaml")
        results = manager.run_hook(HookPoint.POST_TASK, {"task_id": 0})
    """

    def __init__(self):
        self._plugins: dict[str, PluginBase] = {}
        self._hook_registry: dict[HookPoint, list[PluginBase]] = {
            hook: [] for hook in HookPoint
        }

    @property
    def plugins(self) -> dict[str, PluginBase]:
        return self._plugins.copy()

    @property
    def plugin_count(self) -> int:
        return len(self._plugins)

    def has_hook(self, hook: HookPoint) -> bool:
        """True if some enabled plugin listens on hook"""
        return any(p.config.enabled for p in self._hook_registry[hook])

    def _index(self, plugin: PluginBase) -> None:
        for hook in plugin.hooks:
            self._hook_registry[hook].append(plugin)
            self._hook_registry[hook].sort(key=lambda p: p.priority.value)

    def _unindex(self, name: str) -> None:
        for hook in HookPoint:
            self._hook_registry[hook] = [
                p for p in self._hook_registry[hook] if p.name != name
            ]

    def register_plugin(self, plugin: PluginBase) -> bool:
        if plugin.name in self._plugins:
            logger.warning(f"Plugin '{plugin.name}' already registered")
            return False

        if not plugin.initialize():
            logger.error(f"Plugin '{plugin.name}' initialization failed")
            return False

        self._plugins[plugin.name] = plugin
        self._index(plugin)
        logger.info(f"Registered plugin: {plugin.name} v{plugin.version}")
        return True

    def unregister_plugin(self, name: str) -> bool:
        if name not in self._plugins:
            logger.warning(f"Plugin '{name}' not found")
            return False

        self._plugins[name].cleanup()
        self._unindex(name)
        del self._plugins[name]
        logger.info(f"Unregistered plugin: {name}")
        return True

    def load_plugins(self, plugins_path) -> int:
        """
        Discover and register every PluginBase subclass in a directory.

        Returns:
            Number of plugins loaded
        """
        plugins_dir = Path(plugins_path)
        if not plugins_dir.exists():
            logger.warning(f"Plugins directory not found: {plugins_path}")
            return 0

        loaded = 0
        for plugin_file in sorted(plugins_dir.glob("*.py")):
            if plugin_file.name.startswith("_"):
                continue
            try:
                loaded += self._load_plugin_file(plugin_file)
            except Exception as e:
                logger.error(f"Failed to load {plugin_file}: {e}")

        logger.info(f"Loaded {loaded} plugins from {plugins_path}")
        return loaded

    def _load_plugin_file(self, plugin_file: Path) -> int:
        spec = importlib.util.spec_from_file_location(plugin_file.stem, plugin_file)
        module = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(module)

        loaded = 0
        for attr_name in dir(module):
            attr = getattr(module, attr_name)
            if (isinstance(attr, type) and issubclass(attr, PluginBase)
                    and attr is not PluginBase and attr.__module__ == module.__name__):
                try:
                    if self.register_plugin(attr()):
                        loaded += 1
                except Exception as e:
                    logger.error(f"Failed to instantiate {attr_name}: {e}")
        return loaded

    def load_config(self, config_path) -> bool:
        """
        Apply per-plugin settings from a YAML file.

        Plugin defaults are merged under the file's settings; hooks and
        priority are replaced when given.
        """
        config_file = Path(config_path)
        if not config_file.exists():
            logger.warning(f"Config file not found: {config_path}")
            return False

        try:
            with open(config_file) as f:
                config = yaml.safe_load(f) or {}

            for plugin_name, settings in (config.get("plugins") or {}).items():
                plugin = self._plugins.get(plugin_name)
                if plugin is None:
                    continue
                settings = settings or {}
                current = plugin.config
                hooks = settings.get("hooks")
                plugin.config = PluginConfig(
                    enabled=settings.get("enabled", current.enabled),
                    priority=PluginPriority[settings.get("priority", current.priority.name).upper()],
                    hooks=[HookPoint(h.lower()) for h in hooks] if hooks else current.hooks,
                    settings={**current.settings, **(settings.get("settings") or {})},
                )
                self._unindex(plugin_name)
                self._index(plugin)
                logger.info(f"Configured plugin: {plugin_name}")
            return True
        except Exception as e:
            logger.error(f"Failed to load config: {e}")
            return False

    def run_hook(self, hook: HookPoint, context: dict) -> list[PluginResult]:
        """
        Run every enabled plugin registered for hook, in priority order.

        Plugin exceptions are caught and turned into failed results.
        """
        results = []
        context["hook"] = hook
        context["results"] = results

        for plugin in self._hook_registry[hook]:
            if not plugin.config.enabled:
                continue
            start = time.perf_counter()
            try:
                result = plugin.execute(context)
            except Exception as e:
                result = plugin.on_error(e, context) or PluginResult(
                    success=False,
                    plugin_name=plugin.name,
                    plugin_version=plugin.version,
                    message=f"Execution failed: {e}",
                    errors=[str(e)],
                )
            result.execution_time_ms = (time.perf_counter() - start) * 1000
            results.append(result)
            logger.debug(f"Plugin {plugin.name} ran on {hook.value} in {result.execution_time_ms:.2f}ms")

        return results

    def get_summary(self) -> dict:
        return {
            "total_plugins": self.plugin_count,
            "plugins": [
                {
                    "name": p.name,
                    "version": p.version,
                    "description": p.description,
                    "enabled": p.config.enabled,
                    "priority": p.priority.name,
                    "hooks": [h.value for h in p.hooks],
                }
                for p in self._plugins.values()
            ],
        }


def dispatch(manager: Optional[PluginManager], hook: HookPoint, **context) -> list[PluginResult]:
    """run_hook() that tolerates a missing manager; results are logged, never returned to training."""
    if manager is None or not manager.has_hook(hook):
        return []
    results = manager.run_hook(hook, context)
    for result in results:
        if result.success:
            if result.message:
                logger.info(f"[{result.plugin_name}] {result.message}")
        else:
            logger.warning(f"[{result.plugin_name}] {result.message}")
    return results
