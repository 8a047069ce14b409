"""Live-tensor byte accounting.

A :class:`MemoryTracker` is a desk-scale stand-in for a GPU allocator's
peak-reserved counter. While a tracker is active on the current thread,
every :class:`~fedpeft.numkit.tensor.Tensor` created on that thread adds its
byte size to the live count and subtracts it when the tensor is collected.
Resident state that already exists when tracking starts (the frozen
backbone) is passed in as ``baseline``.
"""
from __future__ import annotations

import threading
import weakref

_local = threading.local()


class MemoryTracker:
    def __init__(self, baseline=0):
        self.baseline = int(baseline)
        self.live = int(baseline)
        self.peak = int(baseline)
        self._prev = None

    def alloc(self, nbytes):
        self.live += nbytes
        if self.live > self.peak:
            self.peak = self.live

    def free(self, nbytes):
        self.live -= nbytes

    def __enter__(self):
        self._prev = getattr(_local, "tracker", None)
        _local.tracker = self
        return self

    def __exit__(self, *exc):
        _local.tracker = self._prev
        return False


def current():
    return getattr(_local, "tracker", None)


def register(obj, nbytes):
    """Charge ``nbytes`` to the active tracker for the lifetime of ``obj``."""
    tracker = getattr(_local, "tracker", None)
    if tracker is None or nbytes == 0:
        return
    tracker.alloc(nbytes)
    weakref.finalize(obj, tracker.free, nbytes)


def transient(nbytes):
    """Record a short-lived buffer that is released immediately after use."""
    tracker = getattr(_local, "tracker", None)
    if tracker is not None:
        tracker.alloc(nbytes)
        tracker.free(nbytes)
