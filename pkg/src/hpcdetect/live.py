"""Per-process counters through the Linux perf_event_open syscall (ctypes, no extension)."""
from __future__ import annotations

import ctypes
import errno
import os
import platform
import queue
import struct
import sys
import threading
import time

from .errors import EventUnavailable, NoSuchProcess, PermissionDenied, PlatformUnsupported
from .events import Sample, schedule_groups
from .trace import SampleStream

_SYSCALL_NR = {"x86_64": 298, "aarch64": 241, "armv7l": 364, "i686": 336, "ppc64le": 319, "riscv64": 241}

PERF_FORMAT_TOTAL_TIME_ENABLED = 1 << 0
PERF_FORMAT_TOTAL_TIME_RUNNING = 1 << 1
PERF_FORMAT_GROUP = 1 << 3
READ_FORMAT = PERF_FORMAT_GROUP | PERF_FORMAT_TOTAL_TIME_ENABLED | PERF_FORMAT_TOTAL_TIME_RUNNING

FLAG_DISABLED = 1 << 0
FLAG_EXCLUDE_KERNEL = 1 << 5
FLAG_EXCLUDE_HV = 1 << 6

PERF_EVENT_IOC_ENABLE = 0x2400
PERF_EVENT_IOC_DISABLE = 0x2401
PERF_EVENT_IOC_RESET = 0x2403
PERF_IOC_FLAG_GROUP = 1

ATTR_SIZE = 112  # PERF_ATTR_SIZE_VER5

# ticks missed during a short stall are caught up; longer stalls restart the grid
MAX_CATCH_UP = 50


class PerfEventAttr(ctypes.Structure):
    _fields_ = [
        ("type", ctypes.c_uint32),
        ("size", ctypes.c_uint32),
        ("config", ctypes.c_uint64),
        ("sample_period", ctypes.c_uint64),
        ("sample_type", ctypes.c_uint64),
        ("read_format", ctypes.c_uint64),
        ("flags", ctypes.c_uint64),
        ("wakeup_events", ctypes.c_uint32),
        ("bp_type", ctypes.c_uint32),
        ("config1", ctypes.c_uint64),
        ("config2", ctypes.c_uint64),
        ("branch_sample_type", ctypes.c_uint64),
        ("sample_regs_user", ctypes.c_uint64),
        ("sample_stack_user", ctypes.c_uint32),
        ("clockid", ctypes.c_int32),
        ("sample_regs_intr", ctypes.c_uint64),
        ("aux_watermark", ctypes.c_uint32),
        ("sample_max_stack", ctypes.c_uint16),
        ("reserved", ctypes.c_uint16),
    ]


def make_attr(ptype, config, leader):
    attr = PerfEventAttr()
    attr.type = ptype
    attr.size = ctypes.sizeof(PerfEventAttr)
    attr.config = config
    attr.read_format = READ_FORMAT
    attr.flags = FLAG_EXCLUDE_KERNEL | FLAG_EXCLUDE_HV | (FLAG_DISABLED if leader else 0)
    return attr


def _libc_syscall():
    if not sys.platform.startswith("linux"):
        raise PlatformUnsupported(f"per-process counters need Linux, running on {sys.platform}")
    nr = _SYSCALL_NR.get(platform.machine())
    if nr is None:
        raise PlatformUnsupported(f"unknown perf_event_open syscall number for {platform.machine()}")
    libc = ctypes.CDLL(None, use_errno=True)
    libc.syscall.restype = ctypes.c_long

    def perf_event_open(attr, pid, cpu, group_fd, flags):
        fd = libc.syscall(nr, ctypes.byref(attr), pid, cpu, group_fd, flags)
        if fd < 0:
            raise OSError(ctypes.get_errno(), os.strerror(ctypes.get_errno()))
        return fd

    return perf_event_open, libc.ioctl


def map_open_error(exc, pid, event):
    """Translate a perf_event_open errno into a toolkit error."""
    e = exc.errno
    if e == errno.ESRCH:
        return NoSuchProcess(f"no process {pid}")
    if e in (errno.EACCES, errno.EPERM):
        return PermissionDenied(f"not permitted to monitor pid {pid} (see /proc/sys/kernel/perf_event_paranoid)")
    if e == errno.ENOSYS:
        return PlatformUnsupported("kernel lacks perf_event_open")
    if e in (errno.ENOENT, errno.EOPNOTSUPP, errno.EINVAL, errno.ENODEV):
        return EventUnavailable(event, os.strerror(e))
    return EventUnavailable(event, os.strerror(e) if e else str(exc))


def parse_group_read(buf, n):
    """Decode a PERF_FORMAT_GROUP read: returns (values, time_enabled, time_running)."""
    nr, enabled, running = struct.unpack_from("=QQQ", buf, 0)
    if nr != n:
        raise ValueError(f"group read returned {nr} counters, expected {n}")
    return list(struct.unpack_from(f"={n}Q", buf, 24)), enabled, running


def scale(raw, enabled, running):
    """Multiplexing correction: raw x enabled / running (0 if the group never ran)."""
    if running == 0:
        return 0.0
    return raw * enabled / running


class LiveStream(SampleStream):
    """One :class:`Sample` per interval of counter deltas for ``config.pid``.

    The first read sets the baseline. Ticks follow a fixed grid; a tick that is
    late by more than half an interval is emitted with its true timestamp,
    never dropped, and the following ticks catch up with the grid (after a
    stall longer than ``MAX_CATCH_UP`` intervals the grid restarts instead). With
    ``queue_size`` set, a timer thread samples into a bounded queue that
    discards the oldest sample when full (``dropped`` counts them).
    """

    def __init__(self, config, duration_ms=None, queue_size=None, syscall=None,
                 clock=time.monotonic, sleep=time.sleep, read=os.read):
        super().__init__(config.event_names)
        self.config = config
        self.duration_ms = duration_ms
        self.queue_size = queue_size
        self.clock, self.sleep, self._read = clock, sleep, read
        self.dropped = 0
        self.late_ticks = 0
        opener, self._ioctl = syscall or _libc_syscall()
        self.groups = schedule_groups(config.events, config.max_group_size)
        self._fds = []  # per group: list of fds (leader first)
        self._slots = []  # per group: event index for each counter
        try:
            for g in self.groups:
                fds, slots = [], []
                for ei in g:
                    ev = config.events[ei]
                    for ptype, cfg in ev.encodings:
                        attr = make_attr(ptype, cfg, leader=not fds)
                        try:
                            fd = opener(attr, config.pid, -1, fds[0] if fds else -1, 0)
                        except OSError as exc:
                            raise map_open_error(exc, config.pid, ev.name) from None
                        fds.append(fd)
                        slots.append(ei)
                self._fds.append(fds)
                self._slots.append(slots)
        except Exception:
            self._close_fds()
            raise
        for fds in self._fds:
            self._ioctl(fds[0], PERF_EVENT_IOC_RESET, PERF_IOC_FLAG_GROUP)
            self._ioctl(fds[0], PERF_EVENT_IOC_ENABLE, PERF_IOC_FLAG_GROUP)

    def read_totals(self):
        """Scaled cumulative count per configured event."""
        totals = [0.0] * len(self.config.events)
        for fds, slots in zip(self._fds, self._slots):
            try:
                buf = self._read(fds[0], 24 + 8 * len(fds))
            except OSError as exc:
                if exc.errno == errno.ESRCH:
                    raise NoSuchProcess(f"process {self.config.pid} exited") from None
                raise
            if not buf:
                raise NoSuchProcess(f"process {self.config.pid} exited")
            vals, enabled, running = parse_group_read(buf, len(fds))
            for ei, v in zip(slots, vals):
                totals[ei] += scale(v, enabled, running)
        return totals

    def _ticks(self):
        interval = self.config.interval / 1000.0
        start = self.clock()
        prev = self.read_totals()
        deadline = start + interval
        while not self._closed:
            now = self.clock()
            if self.duration_ms is not None and (now - start) * 1000.0 >= self.duration_ms:
                return
            if now < deadline:
                self.sleep(deadline - now)
                now = self.clock()
            if now - deadline > 0.5 * interval:
                self.late_ticks += 1
                if now - deadline > MAX_CATCH_UP * interval:
                    deadline = now
            try:
                cur = self.read_totals()
            except NoSuchProcess:
                return
            values = tuple(max(0, int(round(c - p))) for c, p in zip(cur, prev))
            prev = cur
            yield Sample(int(round((now - start) * 1000.0)), self.config.pid, values)
            deadline += interval

    def _samples(self):
        if not self.queue_size:
            yield from self._ticks()
            return
        q = queue.Queue(self.queue_size)
        done = object()

        def pump():
            for s in self._ticks():
                while True:
                    try:
                        q.put_nowait(s)
                        break
                    except queue.Full:
                        try:
                            q.get_nowait()
                            self.dropped += 1
                        except queue.Empty:
                            pass
            q.put(done)

        t = threading.Thread(target=pump, daemon=True)
        t.start()
        while True:
            s = q.get()
            if s is done:
                return
            yield s

    def _close_fds(self):
        for fds in self._fds:
            for fd in fds:
                try:
                    os.close(fd)
                except OSError:
                    pass
        self._fds = []

    def close(self):
        super().close()
        for fds in self._fds:
            try:
                self._ioctl(fds[0], PERF_EVENT_IOC_DISABLE, PERF_IOC_FLAG_GROUP)
            except Exception:  # noqa: BLE001
                pass
        self._close_fds()


def open_live(config, duration_ms=None, queue_size=None):
    """Attach counters to ``config.pid``; raises before returning if anything is unavailable."""
    if not sys.platform.startswith("linux"):
        raise PlatformUnsupported(f"per-process counters need Linux, running on {sys.platform}")
    try:
        os.kill(config.pid, 0)
    except ProcessLookupError:
        raise NoSuchProcess(f"no process {config.pid}") from None
    except PermissionError:
        pass
    return LiveStream(config, duration_ms=duration_ms, queue_size=queue_size)
