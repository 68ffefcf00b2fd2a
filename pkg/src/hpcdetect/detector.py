"""Online detection: per-sample classification, per-pid sliding-window votes, alerts.

The sequential path merges every stream by timestamp and is a pure function of
(streams, model, config). The threaded path runs one ingestion thread per
stream feeding a bounded queue; when the queue is full the oldest queued sample
of the same pid is replaced and a per-pid drop counter increments.
"""
from __future__ import annotations

import heapq
import json
import threading
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidConfig, MissingFeature
from .events import CLASS_NAMES, ClassLabel

BATCH = 2048


@dataclass(frozen=True)
class DetectorConfig:
    window: int = 50
    alert_threshold: float = 0.6
    cooldown_ms: int = 5000
    queue_size: int = 4096

    def __post_init__(self):
        if self.window < 1:
            raise InvalidConfig("window must be >= 1")
        if not 0.5 < self.alert_threshold <= 1.0:
            raise InvalidConfig("alert_threshold must lie in (0.5, 1]")
        if self.cooldown_ms < 0:
            raise InvalidConfig("cooldown_ms must be >= 0")
        if self.queue_size < 1:
            raise InvalidConfig("queue_size must be >= 1")


@dataclass
class Alert:
    cls: int
    confidence: float


@dataclass
class DetectionVerdict:
    pid: int
    timestamp_ms: int
    predicted: int
    votes: dict
    window_size: int
    candidate: Optional[Alert] = None  # class meeting the threshold, even inside cooldown
    alert: Optional[Alert] = None
    label: Optional[int] = None
    dropped: int = 0


@dataclass
class Detachment:
    """A stream that raised; its pids stop receiving verdicts, other streams continue."""

    stream: int
    error: str


def projection_indices(stream_names, model_names):
    pos = {n: i for i, n in enumerate(stream_names)}
    for n in model_names:
        if n not in pos:
            raise MissingFeature(n)
    return np.array([pos[n] for n in model_names], dtype=np.int64)


def project(values, stream_names, model_names):
    """Reorder/subset one sample's values into model feature order."""
    idx = projection_indices(stream_names, model_names)
    return np.asarray(values)[idx]


class _Window:
    __slots__ = ("buf", "counts", "last_alert")

    def __init__(self, size):
        self.buf = deque(maxlen=size)
        self.counts = Counter()
        self.last_alert = {}

    def push(self, cls):
        if len(self.buf) == self.buf.maxlen:
            old = self.buf[0]
            self.counts[old] -= 1
            if not self.counts[old]:
                del self.counts[old]
        self.buf.append(cls)
        self.counts[cls] += 1


class _Scorer:
    """Holds per-pid windows; turns classified samples into verdicts."""

    def __init__(self, config, policy=None):
        self.config = config
        self.policy = policy
        self.windows = {}

    def verdict(self, sample, cls, dropped=0):
        cfg = self.config
        w = self.windows.get(sample.pid)
        if w is None:
            w = self.windows[sample.pid] = _Window(cfg.window)
        w.push(cls)
        n = len(w.buf)
        votes = {c: k / n for c, k in sorted(w.counts.items())}
        candidate = alert = None
        # alerts are judged on full windows only
        if n == cfg.window:
            top, k = max(w.counts.items(), key=lambda kv: (kv[1], -kv[0]))
            frac = k / n
            if top != ClassLabel.Benign and frac >= cfg.alert_threshold:
                candidate = Alert(int(top), frac)
                last = w.last_alert.get(top)
                if last is None or sample.timestamp_ms - last >= cfg.cooldown_ms:
                    w.last_alert[top] = sample.timestamp_ms
                    alert = candidate
        v = DetectionVerdict(sample.pid, sample.timestamp_ms, int(cls), votes, n,
                             candidate, alert, sample.label, dropped)
        if alert is not None and self.policy is not None:
            self.policy(v)
        return v


def _classify(model, idxs, batch):
    X = np.array([np.asarray(s.values, dtype=np.float64)[idxs[k]] for k, s in batch])
    return model.predict(X)


def _guarded(stream, k):
    try:
        for s in stream:
            yield (s.timestamp_ms, k, s)
    except Exception as exc:  # noqa: BLE001 - reported as detachment
        yield (None, k, exc)


def run_detector(model, streams, config=None, threaded=False, policy: Callable | None = None):
    """Yield one :class:`DetectionVerdict` per consumed sample, plus :class:`Detachment` events.

    ``policy`` is called with every verdict that carries an alert.
    """
    config = config or DetectorConfig()
    streams = list(streams)
    idxs = [projection_indices(s.event_names, model.feature_names) for s in streams]
    if threaded:
        yield from _run_threaded(model, streams, idxs, config, policy)
        return
    scorer = _Scorer(config, policy)
    merged = heapq.merge(*(_guarded(s, k) for k, s in enumerate(streams)),
                         key=lambda t: (t[0] if t[0] is not None else -1, t[1]))
    batch = []

    def flush():
        if batch:
            for (k, s), cls in zip(batch, _classify(model, idxs, batch)):
                yield scorer.verdict(s, cls)
            batch.clear()

    for ts, k, item in merged:
        if ts is None:
            yield from flush()
            yield Detachment(k, f"{type(item).__name__}: {item}")
            continue
        batch.append((k, item))
        if len(batch) >= BATCH:
            yield from flush()
    yield from flush()


class DropOldestQueue:
    """Bounded FIFO; a put on a full queue evicts the oldest entry of the same pid
    (or the oldest entry overall if that pid has none queued)."""

    def __init__(self, maxsize):
        self.maxsize = maxsize
        self.items = deque()
        self.drops = Counter()
        self.cond = threading.Condition()

    def put(self, pid, item):
        with self.cond:
            if len(self.items) >= self.maxsize:
                victim = next((i for i, it in enumerate(self.items) if it[0] == pid), 0)
                del self.items[victim]
                self.drops[pid] += 1
            self.items.append((pid, item))
            self.cond.notify()

    def get_batch(self, limit, timeout=0.05):
        with self.cond:
            if not self.items:
                self.cond.wait(timeout)
            out = []
            while self.items and len(out) < limit:
                out.append(self.items.popleft()[1])
            return out


_DONE = object()


def _run_threaded(model, streams, idxs, config, policy):
    q = DropOldestQueue(config.queue_size)
    live = [len(streams)]
    lock = threading.Lock()

    def ingest(k, stream):
        try:
            for s in stream:
                q.put(s.pid, (k, s))
        except Exception as exc:  # noqa: BLE001
            q.put(-1 - k, (k, exc))
        finally:
            q.put(-1 - k, (k, _DONE))

    threads = [threading.Thread(target=ingest, args=(k, s), daemon=True) for k, s in enumerate(streams)]
    for t in threads:
        t.start()
    scorer = _Scorer(config, policy)
    try:
        while live[0]:
            items = q.get_batch(BATCH)
            batch = []
            for k, s in items:
                if s is _DONE:
                    with lock:
                        live[0] -= 1
                elif isinstance(s, Exception):
                    yield Detachment(k, f"{type(s).__name__}: {s}")
                else:
                    batch.append((k, s))
            if batch:
                for (k, s), cls in zip(batch, _classify(model, idxs, batch)):
                    yield scorer.verdict(s, cls, q.drops.get(s.pid, 0))
    finally:
        for s in streams:
            s.close()


def alert_record(v):
    """Machine-readable alert line for a verdict carrying an alert."""
    return {
        "timestamp_ms": v.timestamp_ms,
        "pid": v.pid,
        "class": CLASS_NAMES[v.alert.cls],
        "class_id": v.alert.cls,
        "confidence": round(v.alert.confidence, 6),
        "window": v.window_size,
        "votes": {CLASS_NAMES.get(c, str(c)): round(f, 6) for c, f in v.votes.items()},
        "dropped": v.dropped,
    }


def write_alert(fh, v):
    fh.write(json.dumps(alert_record(v), sort_keys=True) + "\n")


@dataclass
class DetectionSummary:
    samples: int = 0
    alerts: int = 0
    per_pid: dict = field(default_factory=dict)
    detached: list = field(default_factory=list)

    def add(self, item):
        if isinstance(item, Detachment):
            self.detached.append({"stream": item.stream, "error": item.error})
            return
        self.samples += 1
        d = self.per_pid.setdefault(item.pid, {"samples": 0, "alerts": 0, "dropped": 0})
        d["samples"] += 1
        d["dropped"] = item.dropped
        if item.alert is not None:
            self.alerts += 1
            d["alerts"] += 1

    def to_dict(self):
        return {"samples": self.samples, "alerts": self.alerts,
                "per_pid": {str(k): v for k, v in sorted(self.per_pid.items())},
                "detached": self.detached}


def window_accuracy(verdicts, window):
    """Fraction of attack-labeled, non-overlapping per-pid windows whose closing verdict
    meets the alert condition for the labeled class."""
    seen = Counter()
    hit = total = 0
    for v in verdicts:
        if isinstance(v, Detachment):
            continue
        seen[v.pid] += 1
        if seen[v.pid] % window or v.label in (None, int(ClassLabel.Benign)):
            continue
        total += 1
        hit += v.candidate is not None and v.candidate.cls == v.label
    return hit / total if total else float("nan"), total
