"""Trace CSV format and the sample-stream abstraction.

A trace file is UTF-8 text with LF line endings::

    timestamp_ms,pid,label,<event_1>,...,<event_k>

``label`` is 0-4 or empty. Every value column holds a non-negative integer
counter delta for one sampling interval.
"""
from __future__ import annotations

import time
from pathlib import Path

from .errors import InconsistentWidth, MalformedTrace, MissingHeader
from .events import ClassLabel, Sample

FIXED_COLUMNS = ("timestamp_ms", "pid", "label")


class SampleStream:
    """Iterable of :class:`Sample` with a fixed event ordering.

    Owned by one consumer. Subclasses implement ``_samples``.
    """

    def __init__(self, event_names):
        self.event_names = list(event_names)
        self._closed = False

    def _samples(self):
        raise NotImplementedError

    def __iter__(self):
        for s in self._samples():
            if self._closed:
                return
            yield s

    def close(self):
        self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class IterableStream(SampleStream):
    """Wraps any iterable of samples (e.g. a generated dataset)."""

    def __init__(self, event_names, samples):
        super().__init__(event_names)
        self._source = samples

    def _samples(self):
        yield from self._source


def format_header(event_names):
    return ",".join(FIXED_COLUMNS + tuple(event_names))


def parse_header(line):
    cols = line.rstrip("\r\n").split(",")
    if len(cols) < 4 or tuple(cols[:3]) != FIXED_COLUMNS:
        raise MissingHeader(f"header must start with {','.join(FIXED_COLUMNS)} and name at least one event")
    names = cols[3:]
    if any(not n for n in names) or len(set(names)) != len(names):
        raise MalformedTrace(1, "empty or duplicate event name in header")
    return names


def parse_row(line, lineno, width):
    cols = line.rstrip("\r\n").split(",")
    if len(cols) != width + 3:
        raise InconsistentWidth(lineno, width, len(cols) - 3)
    try:
        ts = int(cols[0])
        pid = int(cols[1])
        label = ClassLabel(int(cols[2])) if cols[2] != "" else None
        values = tuple(int(v) for v in cols[3:])
    except ValueError as exc:
        raise MalformedTrace(lineno, str(exc)) from None
    if any(v < 0 for v in values):
        raise MalformedTrace(lineno, "negative counter delta")
    return Sample(ts, pid, values, label)


def format_row(sample):
    label = "" if sample.label is None else str(int(sample.label))
    return f"{sample.timestamp_ms},{sample.pid},{label}," + ",".join(str(int(v)) for v in sample.values)


def write_trace(path, event_names, samples):
    """Write samples to ``path``; returns the number of rows written."""
    n = 0
    width = len(event_names)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_header(event_names) + "\n")
        for s in samples:
            if len(s.values) != width:
                raise InconsistentWidth(n + 2, width, len(s.values))
            fh.write(format_row(s) + "\n")
            n += 1
    return n


def read_header(path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first.strip():
        raise MissingHeader()
    return parse_header(first)


class ReplayStream(SampleStream):
    def __init__(self, path, speed="unthrottled", events=None, sleep=time.sleep, clock=time.monotonic):
        if speed not in ("unthrottled", "realtime"):
            raise ValueError(f"unknown replay speed {speed!r}")
        self.path = Path(path)
        names = read_header(self.path)
        if events is not None and list(events) != names:
            raise MalformedTrace(1, f"header events {names} do not match requested {list(events)}")
        super().__init__(names)
        self.speed = speed
        self._sleep = sleep
        self._clock = clock

    def _samples(self):
        width = len(self.event_names)
        start_wall = start_ts = None
        with open(self.path, encoding="utf-8") as fh:
            fh.readline()
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                s = parse_row(line, lineno, width)
                if self.speed == "realtime":
                    if start_wall is None:
                        start_wall, start_ts = self._clock(), s.timestamp_ms
                    delay = (s.timestamp_ms - start_ts) / 1000.0 - (self._clock() - start_wall)
                    if delay > 0:
                        self._sleep(delay)
                yield s


def open_replay(path, speed="unthrottled", events=None):
    """Stream samples from a trace file in file order."""
    return ReplayStream(path, speed=speed, events=events)
