"""Logical-byte accounting of tensors created by the inference engine.

The ledger counts ``Tensor`` payload bytes from construction until the
tensor object is garbage collected. Each allocation is charged to the stage
active when it was created, so the local stage's peak can be read apart
from the growing set of retained chunk tokens.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator

from ..core.tensor import AllocationTracker, Tensor, finalize_on_release


@dataclass
class MemoryLedger(AllocationTracker):
    live_bytes: int = 0
    peak_bytes: int = 0
    stage_live: dict[str, int] = field(default_factory=dict)
    stage_peak: dict[str, int] = field(default_factory=dict)
    events: list[tuple[str, int]] | None = field(default_factory=list)
    marks: dict[str, int] = field(default_factory=dict)
    current_stage: str = "other"

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        saved = self.current_stage
        self.current_stage = name
        try:
            yield
        finally:
            self.current_stage = saved

    def track(self, tensor: Tensor) -> None:
        nbytes = tensor.data.nbytes
        stage = self.current_stage
        self._charge(stage, nbytes, tensor.name or "tensor")
        finalize_on_release(tensor, self._charge, stage, -nbytes, "free")

    def _charge(self, stage: str, delta: int, op: str) -> None:
        self.live_bytes += delta
        live = self.stage_live.get(stage, 0) + delta
        self.stage_live[stage] = live
        if live > self.stage_peak.get(stage, 0):
            self.stage_peak[stage] = live
        if self.live_bytes > self.peak_bytes:
            self.peak_bytes = self.live_bytes
        if self.events is not None:
            self.events.append((op, delta))

    def peak(self, stage: str) -> int:
        return self.stage_peak.get(stage, 0)
