"""Performance event catalog, class labels and the per-interval sample record."""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field

from .errors import InvalidConfig

# perf_event_attr.type values
PERF_TYPE_HARDWARE = 0
PERF_TYPE_SOFTWARE = 1
PERF_TYPE_HW_CACHE = 3

_CACHE_ID = {"L1D": 0, "L1I": 1, "LL": 2, "DTLB": 3, "ITLB": 4, "BPU": 5}
_OP_READ, _OP_WRITE = 0, 1
_RES_ACCESS, _RES_MISS = 0, 1

INTERVAL_ENV = "HPCDETECT_INTERVAL_MS"
MAX_EVENTS = 8


class Category(str, enum.Enum):
    HARDWARE = "HARDWARE"
    SOFTWARE = "SOFTWARE"
    HW_CACHE = "HW_CACHE"


class ClassLabel(enum.IntEnum):
    Benign = 0
    SpectreV1 = 1
    SpectreV2 = 2
    Meltdown = 3
    SpectreV4 = 4


CLASS_NAMES = {c.value: c.name for c in ClassLabel}


def _cache(cache, op, result):
    return PERF_TYPE_HW_CACHE, _CACHE_ID[cache] | (op << 8) | (result << 16)


@dataclass(frozen=True)
class EventSpec:
    name: str
    category: Category
    catalog_id: int
    # (perf type, config) pairs summed into one reading; most events have one
    encodings: tuple = field(default=(), compare=False, repr=False)

    @property
    def counters(self):
        return len(self.encodings)


def _build_catalog():
    hw = [
        ("CACHE_REFERENCES", 2), ("CACHE_MISSES", 3), ("CPU_CYCLES", 0),
        ("INSTRUCTIONS", 1), ("BUS_CYCLES", 6), ("REF_CPU_CYCLES", 9),
        ("BRANCH_MISSES", 5), ("BRANCH_INSTRUCTIONS", 4),
    ]
    sw = [("CPU_CLOCK", 0), ("TASK_CLOCK", 1), ("PAGE_FAULTS", 2), ("CONTEXT_SWITCHES", 3)]
    out = []
    for name, cfg in hw:
        out.append(EventSpec(name, Category.HARDWARE, len(out) + 1, ((PERF_TYPE_HARDWARE, cfg),)))
    for name, cfg in sw:
        out.append(EventSpec(name, Category.SOFTWARE, len(out) + 1, ((PERF_TYPE_SOFTWARE, cfg),)))

    read = lambda c: _cache(c, _OP_READ, _RES_ACCESS)  # noqa: E731
    write = lambda c: _cache(c, _OP_WRITE, _RES_ACCESS)  # noqa: E731
    miss = lambda c: _cache(c, _OP_READ, _RES_MISS)  # noqa: E731
    cache = [
        ("L1D_READ", (read("L1D"),)),
        ("L1D_WRITE", (write("L1D"),)),
        ("L1D_ACCESS", (read("L1D"), write("L1D"))),
        ("L1D_MISS", (miss("L1D"),)),
        ("L1I_MISS", (miss("L1I"),)),
        ("LL_READ", (read("LL"),)),
        ("LL_WRITE", (write("LL"),)),
        ("LL_ACCESS", (read("LL"), write("LL"))),
        ("LL_MISS", (miss("LL"),)),
        ("DTLB_READ", (read("DTLB"),)),
        ("DTLB_WRITE", (write("DTLB"),)),
        ("DTLB_ACCESS", (read("DTLB"), write("DTLB"))),
        ("DTLB_MISS", (miss("DTLB"),)),
        ("ITLB_ACCESS", (read("ITLB"),)),
        ("ITLB_MISS", (miss("ITLB"),)),
        ("BPU_READ", (read("BPU"),)),
        ("BPU_ACCESS", (read("BPU"), write("BPU"))),
        ("BPU_MISS", (miss("BPU"),)),
    ]
    for name, enc in cache:
        out.append(EventSpec(name, Category.HW_CACHE, len(out) + 1, enc))
    return tuple(out)


_CATALOG = _build_catalog()
_BY_NAME = {e.name: e for e in _CATALOG}

# The four events the detector is built around.
SELECTED_FEATURES = ("LL_ACCESS", "L1D_WRITE", "DTLB_WRITE", "DTLB_READ")


def catalog():
    """All 30 catalog events in catalog_id order."""
    return list(_CATALOG)


def event_names():
    return [e.name for e in _CATALOG]


def lookup(name):
    """Resolve a canonical or perf-style name (``PERF_COUNT_HW_CACHE_LL_ACCESS``)."""
    key = name.strip().upper()
    for prefix in ("PERF_COUNT_HW_CACHE_", "PERF_COUNT_HW_", "PERF_COUNT_SW_"):
        if key.startswith(prefix):
            key = key[len(prefix):]
            break
    try:
        return _BY_NAME[key]
    except KeyError:
        raise KeyError(f"unknown event {name!r}; known events: {', '.join(_BY_NAME)}") from None


def catalog_id(name):
    return _BY_NAME[name].catalog_id if name in _BY_NAME else len(_CATALOG) + 1


@dataclass
class Sample:
    timestamp_ms: int
    pid: int
    values: tuple
    label: ClassLabel | None = None


@dataclass
class SamplingConfig:
    pid: int
    events: list
    interval: int = 1
    max_group_size: int = 4

    def __post_init__(self):
        self.events = [lookup(e) if isinstance(e, str) else e for e in self.events]
        if not 1 <= len(self.events) <= MAX_EVENTS:
            raise InvalidConfig(f"between 1 and {MAX_EVENTS} events required, got {len(self.events)}")
        if len({e.name for e in self.events}) != len(self.events):
            raise InvalidConfig("duplicate events in sampling config")
        if self.interval < 1:
            raise InvalidConfig("interval must be at least 1 ms")
        if self.max_group_size < 1:
            raise InvalidConfig("max_group_size must be positive")
        if any(e.counters > self.max_group_size for e in self.events):
            raise InvalidConfig("an event needs more counters than max_group_size")

    @classmethod
    def with_env(cls, pid, events, interval=1, max_group_size=4, environ=None):
        """Like the constructor, but ``HPCDETECT_INTERVAL_MS`` overrides the interval."""
        env = os.environ if environ is None else environ
        if env.get(INTERVAL_ENV):
            try:
                interval = int(env[INTERVAL_ENV])
            except ValueError:
                raise InvalidConfig(f"{INTERVAL_ENV} must be an integer") from None
        return cls(pid, list(events), interval, max_group_size)

    @property
    def event_names(self):
        return [e.name for e in self.events]


def schedule_groups(events, max_group_size=4):
    """Pack events into counter groups of at most ``max_group_size`` kernel counters.

    First-fit in the given order; returns lists of indices into ``events``.
    """
    groups, used = [], []
    for i, ev in enumerate(events):
        need = ev.counters if isinstance(ev, EventSpec) else lookup(ev).counters
        if need > max_group_size:
            raise InvalidConfig(f"{ev} needs {need} counters, group limit is {max_group_size}")
        for g in range(len(groups)):
            if used[g] + need <= max_group_size:
                groups[g].append(i)
                used[g] += need
                break
        else:
            groups.append([i])
            used.append(need)
    return groups
