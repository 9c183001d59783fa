"""
encoders.py — Signal-to-spike encoders for the two mutually exclusive paths.

  • ADM: level-crossing delta modulator. The reference walks a staircase of
    threshold steps; each comparator has a hysteresis re-arm dead-band and a
    static, seeded threshold mismatch.
  • PFM: half-wave rectifier → transconductor → leaky integrate-and-fire
    neuron, forward-Euler at the signal sample rate.

Both encoders carry their state between blocks, so splitting a signal
anywhere yields the same event stream as encoding it whole.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from src.core import (
    AdmConfig, Event, PfmConfig, Polarity, SampledSignal, Source,
)

log = logging.getLogger(__name__)

# Smallest realized threshold above the hysteresis after a mismatch draw
MIN_THRESHOLD_MARGIN = 1e-6
# Relative slack on threshold comparisons; a crossing that lands exactly on a
# staircase level must fire despite rounding in v_ref
COMPARE_RTOL = 1e-9


# ---------------------------------------------------------------------------
# ADM
# ---------------------------------------------------------------------------
@dataclass
class AdmState:
    """
    Reference staircase and comparator arming flags.

    The reference is kept as integer step counts so that
    v_ref - v_ref_init == delta_up·n_up - delta_dn·n_dn holds exactly.
    """

    v_ref_init: float
    realized_delta_up: float
    realized_delta_dn: float
    n_up: int = 0
    n_dn: int = 0
    armed_up: bool = True
    armed_dn: bool = True

    @property
    def v_ref(self) -> float:
        return self.v_ref_init + self.realized_delta_up * self.n_up - self.realized_delta_dn * self.n_dn

    @classmethod
    def initial(cls, cfg: AdmConfig, seed=None) -> "AdmState":
        """Fresh state; thresholds drawn once from N(delta, threshold_sigma)."""
        up, dn = cfg.delta_up, cfg.delta_dn
        if cfg.threshold_sigma > 0:
            rng = np.random.default_rng(seed)
            off_up, off_dn = rng.normal(0.0, cfg.threshold_sigma, size=2)
            floor = cfg.hysteresis + MIN_THRESHOLD_MARGIN
            up = max(up + float(off_up), floor)
            dn = max(dn + float(off_dn), floor)
            log.debug("ADM mismatch: delta_up %.6g -> %.6g, delta_dn %.6g -> %.6g",
                      cfg.delta_up, up, cfg.delta_dn, dn)
        return cls(v_ref_init=cfg.v_ref_init, realized_delta_up=up, realized_delta_dn=dn)


def adm_encode(x: SampledSignal, cfg: AdmConfig, state: AdmState,
               channel: int = 0) -> tuple[list[Event], AdmState]:
    """
    Delta-modulate `x`; at most one event per sample.

    Per sample: re-arm any comparator whose input fell back inside its
    dead-band, then fire UP (or else DN) when armed and the distance from
    the reference reaches the threshold. Returns the events and the
    advanced state (the same object, mutated).
    """
    up, dn = state.realized_delta_up, state.realized_delta_dn
    tol_up, tol_dn = COMPARE_RTOL * up, COMPARE_RTOL * dn
    fire_up, fire_dn = up - tol_up, dn - tol_dn
    rearm_up, rearm_dn = up - cfg.hysteresis + tol_up, dn - cfg.hysteresis + tol_dn
    v_init = state.v_ref_init
    n_up, n_dn = state.n_up, state.n_dn
    armed_up, armed_dn = state.armed_up, state.armed_dn
    v_ref = v_init + up * n_up - dn * n_dn

    times = x.times_ns().tolist()
    events: list[Event] = []
    for n, xn in enumerate(x.samples.tolist()):
        d = xn - v_ref
        if not armed_up and d <= rearm_up:
            armed_up = True
        if not armed_dn and -d <= rearm_dn:
            armed_dn = True

        if armed_up and d >= fire_up:
            n_up += 1
            armed_up = False
            events.append(Event(times[n], Source.ADM, channel, Polarity.UP))
        elif armed_dn and -d >= fire_dn:
            n_dn += 1
            armed_dn = False
            events.append(Event(times[n], Source.ADM, channel, Polarity.DN))
        else:
            continue
        v_ref = v_init + up * n_up - dn * n_dn

    state.n_up, state.n_dn = n_up, n_dn
    state.armed_up, state.armed_dn = armed_up, armed_dn
    return events, state


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------
@dataclass
class LifState:
    v_mem: float = 0.0
    refr_until_ns: int = -1     # refractory while sample time < this

    @classmethod
    def initial(cls, cfg: PfmConfig) -> "LifState":
        return cls(v_mem=0.0)


def lif_isi(i_const: float, cfg: PfmConfig) -> float:
    """
    Analytic interspike interval for a constant input current.

    Returns inf when the current cannot overcome the leak (no spiking).
    """
    net = i_const - cfg.i_leak
    if net <= 0:
        return float("inf")
    return cfg.t_refr + cfg.c_mem * (cfg.v_th - cfg.v_reset) / net


def pfm_encode(x: SampledSignal, cfg: PfmConfig, state: LifState,
               channel: int = 0) -> tuple[list[Event], SampledSignal, LifState]:
    """
    Rectify, convert to current and integrate on the LIF membrane.

    The neuron holds at v_reset while refractory. The membrane trace
    records v_mem after each sample's update (0 <= v_mem < v_th).
    """
    k = x.dt / cfg.c_mem
    gm, i_leak = cfg.gm_amp, cfg.i_leak
    v_th, v_reset = cfg.v_th, cfg.v_reset
    t_refr_ns = int(round(cfg.t_refr * 1e9))
    v, refr_until = state.v_mem, state.refr_until_ns

    times = x.times_ns().tolist()
    trace = np.empty(len(x))
    events: list[Event] = []
    for n, xn in enumerate(x.samples.tolist()):
        t_n = times[n]
        if t_n < refr_until:
            trace[n] = v
            continue
        i_in = gm * xn if xn > 0 else 0.0
        v += k * (i_in - i_leak)
        if v < 0.0:
            v = 0.0
        if v >= v_th:
            events.append(Event(t_n, Source.PFM, channel, Polarity.NA))
            v = v_reset
            refr_until = t_n + t_refr_ns
        trace[n] = v

    state.v_mem, state.refr_until_ns = v, refr_until
    return events, x.with_samples(trace), state
