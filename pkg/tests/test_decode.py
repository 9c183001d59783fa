"""Tests for ADM staircase reconstruction and PFM rate decoding."""
import sys, os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from src.core import Event, EventStreamError, PfmConfig, Polarity, SampledSignal, Source
from src.decode import adm_reconstruct, pfm_rate_decode
from src.encoders import LifState, lif_isi, pfm_encode


def up(t):
    return Event(t, Source.ADM, 0, Polarity.UP)


def dn(t):
    return Event(t, Source.ADM, 0, Polarity.DN)


def spikes(times_ns):
    return [Event(int(t), Source.PFM, 0, Polarity.NA) for t in times_ns]


# --- ADM -------------------------------------------------------------------------------

def test_empty_stream_is_constant_v0():
    y = adm_reconstruct([], 0.01, 0.01, 0.25, 1000.0, t_stop=0.1)
    assert len(y) == 101
    assert np.all(y.samples == 0.25)


def test_symmetric_steps_return_to_v0():
    events = [up(1000 * k) for k in range(1, 11)] + [dn(1000 * k) for k in range(11, 21)]
    y = adm_reconstruct(events, 0.01, 0.01, 0.0, 1e6)
    assert y.samples.max() == pytest.approx(0.1)
    assert y.samples[-1] == 0.0


def test_final_value_identity():
    rng = np.random.default_rng(4)
    pol = rng.integers(0, 2, size=500)
    events = [(up if p else dn)(100 * (k + 1)) for k, p in enumerate(pol)]
    y = adm_reconstruct(events, 0.013, 0.007, 0.5, 1e7)
    n_up = int(pol.sum())
    assert y.samples[-1] == 0.5 + 0.013 * n_up - 0.007 * (500 - n_up)


def test_staircase_counts_events_at_sample_time():
    y = adm_reconstruct([up(1_000_000)], 0.01, 0.01, 0.0, 1000.0, t_stop=0.003)
    np.testing.assert_allclose(y.samples, [0.0, 0.01, 0.01, 0.01])


def test_smoothing_keeps_constant_level():
    y = adm_reconstruct([], 0.01, 0.01, 0.3, 1000.0, t_stop=1.0, smoothing_hz=20.0)
    np.testing.assert_allclose(y.samples, 0.3)


def test_adm_rejects_pfm_events_and_disorder():
    with pytest.raises(EventStreamError):
        adm_reconstruct(spikes([10]), 0.01, 0.01, 0.0, 1000.0)
    with pytest.raises(EventStreamError):
        adm_reconstruct([up(20), dn(10)], 0.01, 0.01, 0.0, 1000.0)


# --- PFM -------------------------------------------------------------------------------

def test_empty_rate_is_zero():
    y = pfm_rate_decode([], 0.01, 1000.0, t_start=0.0, t_stop=0.5)
    assert not y.samples.any()


def test_periodic_spikes_give_inverse_isi():
    period_ns = 1_000_000
    y = pfm_rate_decode(spikes(np.arange(1000) * period_ns), 0.1, 1000.0)
    middle = y.samples[len(y) // 2]
    assert middle == pytest.approx(1000.0, abs=1 / 0.1)


def test_rate_is_translation_invariant():
    times = np.arange(0, 200) * 5_000_000
    a = pfm_rate_decode(spikes(times), 0.0105, 1000.0)
    b = pfm_rate_decode(spikes(times + 1_000_000_000), 0.0105, 1000.0)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_constant_input_decodes_to_lif_rate():
    cfg = PfmConfig()
    fs = 1e6
    x = SampledSignal(fs, 0.0, np.full(int(0.5 * fs), 0.3))
    events, _, _ = pfm_encode(x, cfg, LifState.initial(cfg))
    window = 0.1
    y = pfm_rate_decode(events, window, 1000.0, t_start=0.0, t_stop=0.5)
    expected = 1 / lif_isi(cfg.gm_amp * 0.3, cfg)
    steady = y.samples[int(window * 1000):]
    assert np.all(np.abs(steady - expected) <= 1 / window + 1e-9)


def test_pfm_decode_validates_input():
    with pytest.raises(ValueError):
        pfm_rate_decode([], 0.0, 1000.0)
    with pytest.raises(EventStreamError):
        pfm_rate_decode([up(1)], 0.01, 1000.0)
