"""Detect Spectre and Meltdown style side-channel attacks from per-process performance counters."""

__version__ = "0.1.0"

from .errors import HPCDetectError  # noqa: E402
from .events import SELECTED_FEATURES, ClassLabel, Sample, SamplingConfig, catalog  # noqa: E402

__all__ = ["__version__", "HPCDetectError", "SELECTED_FEATURES", "ClassLabel", "Sample", "SamplingConfig", "catalog"]
