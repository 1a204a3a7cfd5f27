"""
Cost Audit Plugin
=================
Checks the backward-pass count of every training step against what its
method should cost (1 for SGD methods, 2 for the SAM family) and keeps
per-method totals.

A mismatch turns the step's result into a failure, which the runner logs
as a warning.
"""

from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
import sys

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from plugin_system import HookPoint, PluginBase, PluginConfig, PluginPriority, PluginResult


@dataclass
class CostTally:
    steps: int = 0
    backward_passes: int = 0
    mismatches: int = 0

    @property
    def passes_per_step(self) -> float:
        return self.backward_passes / self.steps if self.steps else 0.0


class CostAuditPlugin(PluginBase):
    """Backward-pass accounting per method"""

    def __init__(self, config=None):
        super().__init__(config or PluginConfig(
            priority=PluginPriority.HIGH,
            hooks=[HookPoint.POST_STEP, HookPoint.POST_RUN],
            settings={"strict": True},
        ))
        self.tallies: dict[str, CostTally] = defaultdict(CostTally)

    @property
    def name(self) -> str:
        return "CostAuditPlugin"

    @property
    def version(self) -> str:
        return "1.0.0"

    @property
    def description(self) -> str:
        return "Verifies backward passes per step and totals them per method"

    def _ok(self, message: str = "", **data) -> PluginResult:
        return PluginResult(success=True, plugin_name=self.name, plugin_version=self.version,
                            message=message, data=data)

    def execute(self, context: dict) -> PluginResult:
        method = context.get("method", "?")
        tally = self.tallies[method]

        if context["hook"] is HookPoint.POST_RUN:
            return self._ok(
                f"{method}: {tally.backward_passes} backward passes over {tally.steps} steps "
                f"({tally.passes_per_step:.2f}/step, {tally.mismatches} mismatches)",
                method=method, steps=tally.steps, backward_passes=tally.backward_passes,
                mismatches=tally.mismatches,
            )

        passes = context["report"].backward_passes
        expected = context.get("expected_passes", passes)
        tally.steps += 1
        tally.backward_passes += passes
        if passes != expected:
            tally.mismatches += 1
            if self.config.settings.get("strict", True):
                return PluginResult(
                    success=False, plugin_name=self.name, plugin_version=self.version,
                    message=f"{method} step {context.get('step')}: {passes} backward passes, "
                            f"expected {expected}",
                    errors=[f"pass count {passes} != {expected}"],
                )
        return self._ok(passes=passes)

    def cleanup(self) -> None:
        self.tallies.clear()
