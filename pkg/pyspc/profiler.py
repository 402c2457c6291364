"""Timings of the phases of a single CLI command."""

import logging
import sys
import time
from dataclasses import asdict, dataclass
from typing import Optional

import pandas

try:
    import resource
except ModuleNotFoundError:
    resource = None

logger = logging.getLogger(__name__)

COLUMNS = ["command", "phase", "seconds", "memory_mb"]


def memory_usage() -> Optional[float]:
    """Peak resident set size in MB, or None where `resource` is unavailable."""
    if resource is None:
        return None
    rusage_denom = 1024.0
    if sys.platform == "darwin":
        # OSX reports bytes rather than kilobytes
        rusage_denom = rusage_denom * rusage_denom
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / rusage_denom


@dataclass
class PhaseTiming:
    command: str
    phase: str
    seconds: float
    memory_mb: Optional[float]


class Profiler:
    """Wall-clock time and peak memory growth between named phases of a command.

    Each `checkpoint` closes the phase that started at the previous checkpoint (or
    at construction). `memory_mb` is the growth of the peak RSS during the phase and
    is None on platforms without the `resource` module.
    """

    def __init__(self, command: str = ""):
        self.command = command
        self.timings = []
        self._start = time.perf_counter()
        self._start_rss = memory_usage()

    def checkpoint(self, phase: str):
        now = time.perf_counter()
        rss = memory_usage()
        growth = None if rss is None or self._start_rss is None else rss - self._start_rss
        timing = PhaseTiming(self.command, phase, now - self._start, growth)
        self.timings.append(timing)
        logger.debug(f"{self.command} {phase}: {timing.seconds:.3f}s")
        self._start = now
        self._start_rss = rss

    @property
    def total_seconds(self) -> float:
        return sum(t.seconds for t in self.timings)

    def to_dataframe(self) -> pandas.DataFrame:
        return pandas.DataFrame(
            [asdict(t) for t in self.timings], columns=COLUMNS
        ).set_index(["command", "phase"])


class NullProfiler:
    """Stands in for `Profiler` when no profiling was requested."""

    def checkpoint(self, phase: str):
        pass
