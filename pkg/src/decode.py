"""
decode.py — Rebuild signals from event streams.

  • ADM: staircase of threshold steps (configured thresholds, so comparator
    mismatch shows up as reconstruction error), optional first-order
    smoothing.
  • PFM: rectangular sliding-window spike count → rate in Hz.
"""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
from scipy import signal

from src.core import Event, EventStreamError, Polarity, SampledSignal, Source

log = logging.getLogger(__name__)


def _event_times(events: Sequence[Event], source: Source) -> np.ndarray:
    prev = -1
    for k, e in enumerate(events):
        if e.source is not source:
            raise EventStreamError(f"event {k} is {e.source.value}, expected {source.value}")
        if e.t_ns < prev:
            raise EventStreamError(f"event {k} at {e.t_ns} ns precedes {prev} ns")
        prev = e.t_ns
    return np.fromiter((e.t_ns for e in events), dtype=np.int64, count=len(events))


def _grid(fs_out: float, t_start: float, t_stop: float) -> SampledSignal:
    n = int(np.ceil((t_stop - t_start) * fs_out - 1e-9)) + 1
    return SampledSignal(fs_out, t_start, np.zeros(max(n, 1)))


def adm_reconstruct(events: Sequence[Event], delta_up: float, delta_dn: float, v0: float,
                    fs_out: float, t_start: float = 0.0, t_stop: float | None = None,
                    smoothing_hz: float | None = None) -> SampledSignal:
    """
    Staircase v0 + delta_up·#UP(<= t) - delta_dn·#DN(<= t) sampled at fs_out.

    The grid starts at `t_start` and covers `t_stop` (default: the last
    event), so the final sample carries every event.
    """
    times = _event_times(events, Source.ADM)
    if t_stop is None:
        t_stop = max(t_start, times[-1] / 1e9) if times.size else t_start
    grid = _grid(fs_out, t_start, t_stop)

    is_up = np.fromiter((e.polarity is Polarity.UP for e in events), dtype=bool, count=len(events))
    n_up = np.concatenate(([0], np.cumsum(is_up)))
    n_dn = np.concatenate(([0], np.cumsum(~is_up)))
    idx = np.searchsorted(times, grid.times_ns(), side="right")
    stairs = v0 + delta_up * n_up[idx] - delta_dn * n_dn[idx]

    if smoothing_hz:
        b, a = signal.butter(1, smoothing_hz, btype="lowpass", fs=fs_out)
        zi = signal.lfilter_zi(b, a) * v0
        stairs, _ = signal.lfilter(b, a, stairs, zi=zi)

    log.debug("ADM reconstruction: %d events -> %d samples", len(events), len(grid))
    return grid.with_samples(stairs)


def pfm_rate_decode(events: Sequence[Event], window: float, fs_out: float,
                    t_start: float | None = None, t_stop: float | None = None) -> SampledSignal:
    """
    Spike count in (t - window, t] divided by window, sampled at fs_out.

    The grid defaults to [first event, last event + window], so shifting
    every timestamp shifts the output grid with it.
    """
    if not window > 0:
        raise ValueError(f"window must be positive, got {window}")
    times = _event_times(events, Source.PFM)
    if t_start is None:
        t_start = times[0] / 1e9 if times.size else 0.0
    if t_stop is None:
        t_stop = (times[-1] / 1e9 + window) if times.size else t_start
    grid = _grid(fs_out, t_start, t_stop)

    t_grid = grid.times_ns()
    w_ns = int(round(window * 1e9))
    count = (np.searchsorted(times, t_grid, side="right")
             - np.searchsorted(times, t_grid - w_ns, side="right"))
    return grid.with_samples(count / window)
