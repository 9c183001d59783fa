"""Tests for the analog conditioning chain."""
import sys, os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import math
from dataclasses import replace

import numpy as np
import pytest

from src.core import (
    AliasingError, BpfConfig, ChannelConfig, NoiseModel, SampledSignal, SignalError,
    UnstableFilterError,
)
from src.pipeline import (
    NoiseGenerator, PipelineState, analytic_response, bpf_params, design_biquad,
    inject_noise, process_block, run_channel,
)

FS = 48_000.0


def noisy_config(**kw):
    noise = NoiseModel(white_density=1e-5, flicker_corner_hz=50.0, enabled=True)
    return ChannelConfig(noise=noise, **kw)


def random_signal(n=4800, seed=3):
    return SampledSignal(FS, 0.0, np.random.default_rng(seed).normal(0, 0.01, n))


# --- bandpass design ---------------------------------------------------------------

def test_default_bpf_is_1khz_unity_q():
    f0, q = bpf_params(BpfConfig())
    assert f0 == pytest.approx(1000.0)
    assert q == pytest.approx(1.0)


def test_biquad_unity_peak_and_stable():
    c = design_biquad(1000.0, 2.0, FS)
    assert abs(c.response(1000.0)) == pytest.approx(1.0, abs=1e-12)
    assert c.pole_radius() < 1.0


def test_biquad_rejects_nyquist_and_bad_q():
    with pytest.raises(AliasingError):
        design_biquad(FS / 2, 1.0, FS)
    with pytest.raises(UnstableFilterError):
        design_biquad(1000.0, 0.0, FS)


def test_analytic_response_shape():
    cfg = ChannelConfig()
    assert abs(analytic_response(cfg, 1000.0)) == pytest.approx(1.0, rel=1e-5)
    # one Q=1 section at 2·f0 gives 2/sqrt(13); the chain has two
    expected = 2 * 20 * math.log10(2 / math.sqrt(13))
    assert 20 * math.log10(abs(analytic_response(cfg, 2000.0))) == pytest.approx(expected, abs=0.01)
    loud = replace(cfg, lna_gain=15, pga_gain=15)
    assert 20 * math.log10(abs(analytic_response(loud, 1000.0))) == pytest.approx(48.0, abs=1e-3)
    with pytest.raises(ValueError):
        analytic_response(cfg, 0.0)


# --- block processing ------------------------------------------------------------------

def test_split_blocks_match_single_block():
    cfg = noisy_config(lna_gain=4, pga_gain=2)
    x = random_signal()
    whole = run_channel(cfg, x, seed=11)

    state = PipelineState(cfg, FS, seed=11)
    head, tail = x.split(1234)
    y1 = process_block(cfg, state, head)
    y2 = process_block(cfg, state, tail)
    np.testing.assert_array_equal(np.concatenate([y1.samples, y2.samples]), whole.samples)


@pytest.mark.parametrize("scale", [-3.0, 0.25, 7.0])
def test_chain_is_linear_without_noise_or_saturation(scale):
    cfg = ChannelConfig(lna_gain=6, pga_gain=3)
    x = random_signal()
    y = process_block(cfg, PipelineState(cfg, FS), x).samples
    y_scaled = process_block(cfg, PipelineState(cfg, FS), x.with_samples(scale * x.samples)).samples
    np.testing.assert_allclose(y_scaled, scale * y, rtol=0, atol=1e-12 * np.abs(scale * y).max())


def test_same_seed_same_noise():
    cfg = noisy_config()
    x = random_signal()
    assert run_channel(cfg, x, seed=5) == run_channel(cfg, x, seed=5)
    assert run_channel(cfg, x, seed=5) != run_channel(cfg, x, seed=6)


def test_passthrough_is_identity():
    cfg = ChannelConfig(passthrough=True)
    x = random_signal()
    np.testing.assert_array_equal(run_channel(cfg, x).samples, x.samples)


def test_saturation_clips_at_v_sat():
    cfg = ChannelConfig(passthrough=True, pga_gain=15, saturation=True, v_sat=0.5)
    t = np.arange(4800) / FS
    y = run_channel(cfg, SampledSignal(FS, 0.0, 0.3 * np.sin(2 * np.pi * 100 * t)))
    assert y.samples.max() == pytest.approx(0.5)
    assert y.samples.min() == pytest.approx(-0.5)


def test_lna_tap_removes_dc():
    cfg = ChannelConfig(dsl_cutoff_hz=10.0)
    y = run_channel(cfg, SampledSignal(FS, 0.0, np.full(int(FS), 0.1)), tap="lna")
    assert abs(y.samples[-1]) < 1e-6


def test_block_rate_mismatch_rejected():
    cfg = ChannelConfig()
    state = PipelineState(cfg, FS)
    with pytest.raises(SignalError):
        process_block(cfg, state, SampledSignal(8000.0, 0.0, np.zeros(10)))
    with pytest.raises(SignalError):
        process_block(replace(cfg, pga_gain=1), state, SampledSignal(FS, 0.0, np.zeros(10)))


def test_noise_injection_disabled_is_zero():
    model = NoiseModel(white_density=1e-5)
    gen = NoiseGenerator(model, FS, seed=1)
    assert not inject_noise(100, model, FS, gen).any()


def test_pipeline_rejects_center_above_nyquist():
    with pytest.raises(AliasingError):
        PipelineState(ChannelConfig(), 1500.0)
