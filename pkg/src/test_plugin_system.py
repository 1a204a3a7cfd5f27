#!/usr/bin/env python3
"""
Tests for plugin_system.py
==========================
Plugin results, configuration, registration, dispatch order, failure
isolation and YAML configuration for the training hooks.
"""

import logging

import pytest

from plugin_system import (
    HookPoint,
    PluginBase,
    PluginConfig,
    PluginManager,
    PluginPriority,
    PluginResult,
    dispatch,
)


class TestPluginResult:
    """Test PluginResult dataclass"""

    def test_success_result(self):
        """Defaults for a successful result"""
        result = PluginResult(success=True, plugin_name="Audit", plugin_version="1.0.0",
                              message="ok")
        assert result.success is True
        assert result.data == {}
        assert result.errors == []

    def test_to_dict(self):
        result = PluginResult(success=False, plugin_name="Audit", plugin_version="1.0.0",
                              message="bad step", errors=["2 != 1"])
        d = result.to_dict()
        assert d["success"] is False
        assert d["errors"] == ["2 != 1"]
        assert "timestamp" in d


class TestPluginConfig:
    """Test PluginConfig dataclass"""

    def test_default_config(self):
        config = PluginConfig()
        assert config.enabled is True
        assert config.priority == PluginPriority.NORMAL
        assert config.hooks == [HookPoint.POST_TASK]
        assert config.settings == {}

    def test_priority_values(self):
        """Lower value runs first"""
        values = [p.value for p in (PluginPriority.HIGHEST, PluginPriority.HIGH, PluginPriority.NORMAL,
                                    PluginPriority.LOW, PluginPriority.LOWEST)]
        assert values == sorted(values)

    def test_hook_values(self):
        assert [h.value for h in HookPoint] == [
            "pre_task", "pre_step", "post_step", "post_task", "post_run", "on_error",
        ]


class CountingPlugin(PluginBase):
    """Counts calls and remembers contexts"""

    def __init__(self, name="CountingPlugin", config=None, log=None):
        super().__init__(config or PluginConfig(hooks=[HookPoint.POST_STEP]))
        self._name = name
        self.contexts = []
        self.cleaned_up = False
        self.log = log if log is not None else []

    @property
    def name(self) -> str:
        return self._name

    @property
    def version(self) -> str:
        return "1.0.0"

    @property
    def description(self) -> str:
        return "Counts hook calls"

    def execute(self, context: dict) -> PluginResult:
        self.contexts.append(dict(context))
        self.log.append(self.name)
        return PluginResult(True, self.name, self.version, f"call {len(self.contexts)}")

    def cleanup(self) -> None:
        self.cleaned_up = True


class RaisingPlugin(CountingPlugin):
    def execute(self, context: dict) -> PluginResult:
        raise RuntimeError("boom")


class RejectingPlugin(CountingPlugin):
    def initialize(self) -> bool:
        return False


class TestPluginManager:
    """Test PluginManager registration and dispatch"""

    def test_register_and_unregister(self):
        manager = PluginManager()
        plugin = CountingPlugin()
        assert manager.register_plugin(plugin)
        assert manager.plugin_count == 1
        assert not manager.register_plugin(CountingPlugin())
        assert manager.unregister_plugin("CountingPlugin")
        assert plugin.cleaned_up
        assert not manager.unregister_plugin("CountingPlugin")

    def test_rejected_initialization(self):
        manager = PluginManager()
        assert not manager.register_plugin(RejectingPlugin())
        assert manager.plugin_count == 0

    def test_run_hook_passes_context(self):
        manager = PluginManager()
        plugin = CountingPlugin()
        manager.register_plugin(plugin)
        results = manager.run_hook(HookPoint.POST_STEP, {"method": "er", "step": 3})
        assert len(results) == 1 and results[0].success
        assert plugin.contexts[0]["hook"] is HookPoint.POST_STEP
        assert plugin.contexts[0]["step"] == 3
        assert results[0].execution_time_ms >= 0.0

    def test_other_hooks_are_not_called(self):
        manager = PluginManager()
        plugin = CountingPlugin()
        manager.register_plugin(plugin)
        assert manager.run_hook(HookPoint.PRE_TASK, {}) == []
        assert plugin.contexts == []

    def test_priority_order(self):
        order = []
        manager = PluginManager()
        manager.register_plugin(CountingPlugin("Late", PluginConfig(
            priority=PluginPriority.LOW, hooks=[HookPoint.POST_RUN]), order))
        manager.register_plugin(CountingPlugin("Early", PluginConfig(
            priority=PluginPriority.HIGHEST, hooks=[HookPoint.POST_RUN]), order))
        manager.run_hook(HookPoint.POST_RUN, {})
        assert order == ["Early", "Late"]

    def test_disabled_plugin_is_skipped(self):
        manager = PluginManager()
        plugin = CountingPlugin(config=PluginConfig(enabled=False, hooks=[HookPoint.POST_STEP]))
        manager.register_plugin(plugin)
        assert manager.run_hook(HookPoint.POST_STEP, {}) == []
        assert not manager.has_hook(HookPoint.POST_STEP)

    def test_exception_becomes_failed_result(self):
        manager = PluginManager()
        manager.register_plugin(RaisingPlugin("Raising"))
        healthy = CountingPlugin("Healthy", PluginConfig(priority=PluginPriority.LOWEST,
                                                         hooks=[HookPoint.POST_STEP]))
        manager.register_plugin(healthy)
        results = manager.run_hook(HookPoint.POST_STEP, {})
        assert [r.success for r in results] == [False, True]
        assert "boom" in results[0].errors[0]
        assert len(healthy.contexts) == 1

    def test_summary(self):
        manager = PluginManager()
        manager.register_plugin(CountingPlugin())
        summary = manager.get_summary()
        assert summary["total_plugins"] == 1
        assert summary["plugins"][0]["hooks"] == ["post_step"]


class TestLoading:
    """Test load_plugins / load_config"""

    def test_load_plugins_from_directory(self, tmp_path):
        (tmp_path / "counter_plugin.py").write_text(
            "from plugin_system import PluginBase, PluginResult\n"
            "class Counter(PluginBase):\n"
            "    name = property(lambda self: 'Counter')\n"
            "    version = property(lambda self: '0.1.0')\n"
            "    description = property(lambda self: 'counts')\n"
            "    def execute(self, context):\n"
            "        return PluginResult(True, self.name, self.version, '')\n"
        )
        (tmp_path / "_private.py").write_text("raise RuntimeError('not loaded')\n")
        manager = PluginManager()
        assert manager.load_plugins(tmp_path) == 1
        assert "Counter" in manager.plugins

    def test_missing_directory(self, tmp_path):
        assert PluginManager().load_plugins(tmp_path / "absent") == 0

    def test_broken_plugin_file_is_skipped(self, tmp_path):
        (tmp_path / "broken.py").write_text("import does_not_exist\n")
        assert PluginManager().load_plugins(tmp_path) == 0

    def test_load_config_rewires_hooks(self, tmp_path):
        manager = PluginManager()
        plugin = CountingPlugin(config=PluginConfig(hooks=[HookPoint.POST_STEP], settings={"a": 1}))
        manager.register_plugin(plugin)
        path = tmp_path / "plugins.yaml"
        path.write_text(
            "plugins:\n"
            "  CountingPlugin:\n"
            "    priority: high\n"
            "    hooks: [post_task]\n"
            "    settings: {b: 2}\n"
        )
        assert manager.load_config(path)
        assert plugin.priority is PluginPriority.HIGH
        assert plugin.config.settings == {"a": 1, "b": 2}
        assert manager.run_hook(HookPoint.POST_STEP, {}) == []
        assert len(manager.run_hook(HookPoint.POST_TASK, {})) == 1

    def test_missing_config(self, tmp_path):
        assert not PluginManager().load_config(tmp_path / "none.yaml")


class TestDispatch:
    """Test dispatch helper"""

    def test_no_manager(self):
        assert dispatch(None, HookPoint.POST_STEP, step=1) == []

    def test_failures_are_logged(self, caplog):
        manager = PluginManager()
        manager.register_plugin(RaisingPlugin("Raising"))
        with caplog.at_level(logging.WARNING, logger="plugin_system"):
            results = dispatch(manager, HookPoint.POST_STEP, step=1)
        assert not results[0].success
        assert "Raising" in caplog.text


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
