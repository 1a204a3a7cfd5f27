"""
Step Timer Plugin
=================
Wall-clock time per training step, reported per task and per run.

Timings only go to the log; result files stay deterministic.
"""

from collections import defaultdict
from pathlib import Path
import statistics
import sys
import time

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from plugin_system import HookPoint, PluginBase, PluginConfig, PluginPriority, PluginResult


class StepTimerPlugin(PluginBase):
    """Milliseconds per step, grouped by method"""

    def __init__(self, config=None):
        super().__init__(config or PluginConfig(
            priority=PluginPriority.LOW,
            hooks=[HookPoint.PRE_STEP, HookPoint.POST_STEP, HookPoint.POST_TASK, HookPoint.POST_RUN],
            settings={"report_per_task": True},
        ))
        self._started: float = 0.0
        self._task_ms: list[float] = []
        self.step_ms: dict[str, list[float]] = defaultdict(list)

    @property
    def name(self) -> str:
        return "StepTimerPlugin"

    @property
    def version(self) -> str:
        return "1.0.0"

    @property
    def description(self) -> str:
        return "Wall-clock milliseconds per training step"

    def execute(self, context: dict) -> PluginResult:
        hook = context["hook"]
        method = context.get("method", "?")
        message = ""
        data = {}

        if hook is HookPoint.PRE_STEP:
            self._started = time.perf_counter()
        elif hook is HookPoint.POST_STEP:
            elapsed = (time.perf_counter() - self._started) * 1000
            self._task_ms.append(elapsed)
            self.step_ms[method].append(elapsed)
        elif hook is HookPoint.POST_TASK:
            if self._task_ms and self.config.settings.get("report_per_task", True):
                mean = statistics.fmean(self._task_ms)
                message = f"{method} task {context.get('task_id')}: {mean:.3f} ms/step"
                data = {"task_id": context.get("task_id"), "mean_ms": mean}
            self._task_ms = []
        elif hook is HookPoint.POST_RUN and self.step_ms[method]:
            mean = statistics.fmean(self.step_ms[method])
            message = f"{method}: {mean:.3f} ms/step over {len(self.step_ms[method])} steps"
            data = {"method": method, "mean_ms": mean}

        return PluginResult(success=True, plugin_name=self.name, plugin_version=self.version,
                            message=message, data=data)
