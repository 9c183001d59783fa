"""Tests for the ADM and PFM encoders."""
import sys, os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import math
from dataclasses import replace

import numpy as np
import pytest

from src.core import AdmConfig, PfmConfig, Polarity, SampledSignal, Source
from src.decode import adm_reconstruct
from src.encoders import (
    COMPARE_RTOL, MIN_THRESHOLD_MARGIN, AdmState, LifState, adm_encode, lif_isi, pfm_encode,
)

FS = 48_000.0
IDEAL_ADM = AdmConfig(delta_up=10e-3, delta_dn=10e-3, hysteresis=1e-3, threshold_sigma=0.0)


def sine(freq, amp, seconds, fs=FS):
    t = np.arange(int(round(seconds * fs))) / fs
    return SampledSignal(fs, 0.0, amp * np.sin(2 * np.pi * freq * t))


def level_crossing_oracle(samples, up, dn, hyst, v0):
    """Sample-by-sample reference: (sample index, +1/-1) per event."""
    out = []
    n_up = n_dn = 0
    ready_up = ready_dn = True
    slack_up, slack_dn = COMPARE_RTOL * up, COMPARE_RTOL * dn
    for i, v in enumerate(samples):
        ref = v0 + up * n_up - dn * n_dn
        if not ready_up and v - ref <= up - hyst + slack_up:
            ready_up = True
        if not ready_dn and ref - v <= dn - hyst + slack_dn:
            ready_dn = True
        if ready_up and v - ref >= up - slack_up:
            out.append((i, 1))
            n_up += 1
            ready_up = False
        elif ready_dn and ref - v >= dn - slack_dn:
            out.append((i, -1))
            n_dn += 1
            ready_dn = False
    return out


# --- ADM -----------------------------------------------------------------------------

def test_adm_matches_level_crossing_oracle():
    rng = np.random.default_rng(2024)
    for trial in range(1000):
        steps = rng.normal(0.0, rng.uniform(1e-3, 2e-2), 512)
        x = SampledSignal(FS, 0.0, np.cumsum(steps))
        events, _ = adm_encode(x, IDEAL_ADM, AdmState.initial(IDEAL_ADM))
        got = [(int(round(e.t_ns * FS / 1e9)), 1 if e.polarity is Polarity.UP else -1)
               for e in events]
        assert got == level_crossing_oracle(x.samples.tolist(), 10e-3, 10e-3, 1e-3, 0.0), trial


def test_adm_tracks_sine_within_threshold_plus_hysteresis():
    x = sine(100.0, 0.2, 0.1)
    state = AdmState.initial(IDEAL_ADM)
    events, state = adm_encode(x, IDEAL_ADM, state)
    n_up = sum(e.polarity is Polarity.UP for e in events)
    n_dn = len(events) - n_up
    assert n_up > 0 and n_dn > 0
    assert abs(n_up - n_dn) <= 1
    assert state.v_ref - state.v_ref_init == 10e-3 * n_up - 10e-3 * n_dn

    recon = adm_reconstruct(events, 10e-3, 10e-3, 0.0, FS, t_stop=x.times()[-1])
    first = int(np.searchsorted(x.times_ns(), events[0].t_ns))
    err = np.abs(x.samples[first:] - recon.samples[first:len(x)])
    assert err.max() <= 10e-3 + 1e-3


def test_adm_split_blocks_match():
    x = sine(250.0, 0.3, 0.05)
    whole, _ = adm_encode(x, IDEAL_ADM, AdmState.initial(IDEAL_ADM))
    state = AdmState.initial(IDEAL_ADM)
    head, tail = x.split(777)
    a, state = adm_encode(head, IDEAL_ADM, state)
    b, state = adm_encode(tail, IDEAL_ADM, state)
    assert a + b == whole


def test_adm_silence_emits_nothing():
    events, _ = adm_encode(SampledSignal(FS, 0.0, np.zeros(1000)), IDEAL_ADM,
                           AdmState.initial(IDEAL_ADM))
    assert events == []


def test_adm_at_most_one_event_per_sample():
    # a jump of 5 thresholds still fires once
    x = SampledSignal(FS, 0.0, np.array([0.0, 0.05, 0.05]))
    events, state = adm_encode(x, IDEAL_ADM, AdmState.initial(IDEAL_ADM))
    assert len({e.t_ns for e in events}) == len(events)
    assert events[0].source is Source.ADM


@pytest.mark.parametrize("delta", [0.001, 0.003, 0.01, 0.1])
@pytest.mark.parametrize("n", [100, 257, 1000])
def test_ramp_of_ten_thresholds_gives_ten_up(delta, n):
    cfg = AdmConfig(delta_up=delta, delta_dn=delta, hysteresis=0.0, threshold_sigma=0.0)
    x = SampledSignal(FS, 0.0, np.linspace(0.0, 10 * delta, n))
    events, state = adm_encode(x, cfg, AdmState.initial(cfg))
    assert [e.polarity for e in events] == [Polarity.UP] * 10
    assert state.n_up == 10 and state.n_dn == 0


def test_sine_polarity_follows_slope_and_balances_per_period():
    # levels offset from the peaks and zero crossings so no sample sits on one
    cfg = AdmConfig(delta_up=10e-3, delta_dn=10e-3, hysteresis=1e-3, v_ref_init=5e-3,
                    threshold_sigma=0.0)
    period = int(FS / 100.0)
    x = sine(100.0, 0.2, 0.1)
    events, _ = adm_encode(x, cfg, AdmState.initial(cfg))
    idx = np.searchsorted(x.times_ns(), [e.t_ns for e in events])
    slope = np.diff(x.samples, prepend=x.samples[0])
    up = np.array([e.polarity is Polarity.UP for e in events])
    assert np.all(slope[idx[up]] > 0)
    assert np.all(slope[idx[~up]] < 0)

    # the first period starts off the staircase; later ones are steady
    for k in range(1, len(x) // period):
        in_period = (idx >= k * period) & (idx < (k + 1) * period)
        assert up[in_period].sum() == (~up[in_period]).sum() > 0, k


def test_mismatch_is_seeded_and_floored():
    cfg = AdmConfig(delta_up=2e-3, delta_dn=2e-3, hysteresis=1e-3, threshold_sigma=5e-3)
    a = AdmState.initial(cfg, seed=9)
    b = AdmState.initial(cfg, seed=9)
    assert (a.realized_delta_up, a.realized_delta_dn) == (b.realized_delta_up, b.realized_delta_dn)
    draws = [AdmState.initial(cfg, seed=s) for s in range(50)]
    assert min(min(d.realized_delta_up, d.realized_delta_dn) for d in draws) \
        >= cfg.hysteresis + MIN_THRESHOLD_MARGIN
    ideal = AdmState.initial(IDEAL_ADM, seed=9)
    assert ideal.realized_delta_up == IDEAL_ADM.delta_up


# --- PFM -----------------------------------------------------------------------------

PFM_FS = 1e6


def test_lif_isi_below_leak_is_infinite():
    cfg = PfmConfig()
    assert math.isinf(lif_isi(cfg.i_leak, cfg))
    assert lif_isi(2e-10, cfg) == pytest.approx(1e-6 + 0.5e-12 / (2e-10 - 1e-12))


def test_pfm_dc_rate_matches_analytic_isi():
    cfg = PfmConfig()
    x = SampledSignal(PFM_FS, 0.0, np.full(int(0.05 * PFM_FS), 0.2))
    events, trace, _ = pfm_encode(x, cfg, LifState.initial(cfg))
    isi = np.diff([e.t_ns for e in events]) / 1e9
    assert len(events) > 10
    assert abs(isi.mean() - lif_isi(cfg.gm_amp * 0.2, cfg)) <= 2 / PFM_FS
    assert trace.samples.min() >= 0.0
    assert trace.samples.max() < cfg.v_th


def test_refractory_period_caps_the_rate():
    t_refr = 100e-6
    cfg = PfmConfig(c_mem=1e-14, i_leak=0.0, t_refr=t_refr)
    x = SampledSignal(PFM_FS, 0.0, np.full(int(0.02 * PFM_FS), 1.0))
    events, _, _ = pfm_encode(x, cfg, LifState.initial(cfg))
    gaps = np.diff([e.t_ns for e in events])
    assert gaps.min() >= int(t_refr * 1e9)
    assert abs(gaps.mean() / 1e9 - lif_isi(cfg.gm_amp, cfg)) <= 2 / PFM_FS
    rate = (len(events) - 1) / ((events[-1].t_ns - events[0].t_ns) / 1e9)
    assert 0.9 / t_refr < rate < 1 / t_refr

    free, _, _ = pfm_encode(x, replace(cfg, t_refr=0.0), LifState.initial(cfg))
    assert len(free) > 10 * len(events)


def test_pfm_rectifies_negative_input():
    cfg = PfmConfig()
    x = SampledSignal(PFM_FS, 0.0, np.full(20_000, -0.3))
    events, trace, state = pfm_encode(x, cfg, LifState.initial(cfg))
    assert events == []
    assert state.v_mem == 0.0


def test_pfm_split_blocks_match():
    cfg = PfmConfig()
    x = sine(100.0, 0.4, 0.02, fs=PFM_FS)
    whole, whole_trace, _ = pfm_encode(x, cfg, LifState.initial(cfg), channel=5)
    state = LifState.initial(cfg)
    head, tail = x.split(6001)
    a, ta, state = pfm_encode(head, cfg, state, channel=5)
    b, tb, state = pfm_encode(tail, cfg, state, channel=5)
    assert a + b == whole
    np.testing.assert_array_equal(np.concatenate([ta.samples, tb.samples]), whole_trace.samples)
    assert all(e.channel == 5 and e.polarity is Polarity.NA for e in whole)
