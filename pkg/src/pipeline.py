"""
pipeline.py — Discrete-time model of one channel's analog conditioning chain.

Stages, in signal order:
  noise (input-referred) → LNA gain → DC-servo high-pass → BPF → BPF → PGA
  → optional hard saturation

The 4th-order bandpass is two identical biquads carrying the (f0, Q) pair of
the FVF section, discretized with a pre-warped bilinear transform. Every
stage keeps its delay line in a PipelineState so consecutive blocks match a
single long block bit for bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from src.core import (
    AliasingError, ChannelConfig, NoiseModel, SampledSignal, SignalError,
    UnstableFilterError, cap_from_code, gain_from_code,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------
BPF_SECTIONS = 2
FLICKER_SECTIONS_PER_DECADE = 3
TAPS = ("pga", "lna")


# ---------------------------------------------------------------------------
# Bandpass parameters and biquad design
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class BiquadCoeffs:
    b0: float
    b1: float
    b2: float
    a1: float
    a2: float
    fs: float

    def as_sos_row(self) -> list[float]:
        return [self.b0, self.b1, self.b2, 1.0, self.a1, self.a2]

    def pole_radius(self) -> float:
        return float(np.max(np.abs(np.roots([1.0, self.a1, self.a2]))))

    def response(self, f: float | np.ndarray) -> np.ndarray:
        """Complex frequency response at `f` Hz."""
        z = np.exp(-2j * np.pi * np.asarray(f, dtype=float) / self.fs)
        return (self.b0 + self.b1 * z + self.b2 * z * z) / (1 + self.a1 * z + self.a2 * z * z)


def bpf_params(bpf) -> tuple[float, float]:
    """Center frequency (Hz) and Q of the FVF section from gm and CDAC codes."""
    c1 = cap_from_code(bpf.c1_code, bpf.c_base)
    c2 = cap_from_code(bpf.c2_code, bpf.c_base)
    w0 = math.sqrt(bpf.gm1 * bpf.gm2 / (c1 * c2))
    q = math.sqrt(bpf.gm2 * c2 / (bpf.gm1 * c1))
    return w0 / (2 * math.pi), q


def design_biquad(f0: float, q: float, fs: float) -> BiquadCoeffs:
    """
    Unity-peak 2nd-order bandpass, bilinear transform pre-warped at f0.

    Realizes H(s) = (w0/Q)s / (s^2 + (w0/Q)s + w0^2) exactly at f0.
    """
    if not 0 < f0 < fs / 2:
        raise AliasingError(f"center frequency {f0:.6g} Hz must lie in (0, fs/2 = {fs / 2:.6g} Hz)")
    if not q > 0:
        raise UnstableFilterError(f"Q must be positive, got {q}")

    w0 = 2 * math.pi * f0 / fs
    alpha = math.sin(w0) / (2 * q)
    a0 = 1 + alpha
    coeffs = BiquadCoeffs(
        b0=alpha / a0,
        b1=0.0,
        b2=-alpha / a0,
        a1=-2 * math.cos(w0) / a0,
        a2=(1 - alpha) / a0,
        fs=fs,
    )
    if coeffs.pole_radius() >= 1.0:
        raise UnstableFilterError(f"biquad for f0={f0:.6g} Hz, Q={q:.4g} has pole radius "
                                  f"{coeffs.pole_radius():.12f}")
    return coeffs


# ---------------------------------------------------------------------------
# Continuous-time reference response
# ---------------------------------------------------------------------------
def analytic_response(cfg: ChannelConfig, f, tap: str = "pga"):
    """
    Complex gain of the continuous-time chain at `f` Hz.

    tap="pga" gives LNA·HPF·BPF²·PGA, tap="lna" stops after the DC servo.
    """
    if tap not in TAPS:
        raise ValueError(f"tap must be one of {TAPS}, got {tap!r}")
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ValueError("analytic response is defined for f > 0")

    h = np.full(f.shape, gain_from_code(cfg.lna_gain), dtype=complex)
    if not cfg.passthrough:
        jr = 1j * f / cfg.dsl_cutoff_hz
        h = h * jr / (1 + jr)
    if tap == "lna":
        return h if h.ndim else complex(h)

    if not cfg.passthrough:
        f0, q = bpf_params(cfg.bpf)
        s = 1j * f
        section = (f0 / q) * s / (s * s + (f0 / q) * s + f0 * f0)
        h = h * section ** BPF_SECTIONS
    h = h * gain_from_code(cfg.pga_gain)
    return h if h.ndim else complex(h)


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------
def flicker_filter(corner_hz: float, f_lo: float, fs: float) -> np.ndarray:
    """
    Pole/zero cascade shaping white noise of density d into d²·corner/f.

    Three first-order sections per decade from `f_lo` up to fs/4; the
    response flattens outside that band. Added to the white floor the total
    PSD is d²(1 + corner/f), so the tenfold-per-decade law holds for the
    excess over d², not for the total.
    """
    f_hi = max(fs / 4, 10 * f_lo)
    decades = max(math.log10(f_hi / f_lo), 1.0 / FLICKER_SECTIONS_PER_DECADE)
    n = max(1, math.ceil(decades * FLICKER_SECTIONS_PER_DECADE))
    ratio = 10 ** (1.0 / FLICKER_SECTIONS_PER_DECADE)

    poles = f_lo * ratio ** np.arange(n)
    zeros = poles * math.sqrt(ratio)
    keep = zeros < fs / 2
    z_an = -2 * np.pi * zeros[keep]
    p_an = -2 * np.pi * poles[keep]
    z_d, p_d, k_d = signal.bilinear_zpk(z_an, p_an, 1.0, fs)
    sos = signal.zpk2sos(z_d, p_d, k_d)

    f_ref = math.sqrt(f_lo * f_hi)
    _, h = signal.sosfreqz(sos, worN=[f_ref], fs=fs)
    target = math.sqrt(corner_hz / f_ref)
    sos[0, :3] *= target / abs(h[0])
    return sos


class NoiseGenerator:
    """Seeded white + 1/f generator with streaming filter state."""

    def __init__(self, model: NoiseModel, fs: float, seed: int | np.random.SeedSequence | None):
        self.model = model
        self.fs = fs
        seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        white_seq, flicker_seq = seq.spawn(2)
        self._white_rng = np.random.default_rng(white_seq)
        self._flicker_rng = np.random.default_rng(flicker_seq)
        self._sigma = model.white_density * math.sqrt(fs / 2)
        self._sos = None
        self._zi = None
        if model.enabled and model.flicker_corner_hz > 0 and model.white_density > 0:
            self._sos = flicker_filter(model.flicker_corner_hz, model.flicker_lo_hz, fs)
            self._zi = np.zeros((self._sos.shape[0], 2))

    def reset(self) -> None:
        if self._zi is not None:
            self._zi[:] = 0.0

    def draw(self, n: int) -> np.ndarray:
        if not self.model.enabled or self._sigma == 0:
            return np.zeros(n)
        out = self._sigma * self._white_rng.standard_normal(n)
        if self._sos is not None:
            src = self._sigma * self._flicker_rng.standard_normal(n)
            flick, self._zi = signal.sosfilt(self._sos, src, zi=self._zi)
            out = out + flick
        return out


def inject_noise(n_samples: int, model: NoiseModel, fs: float,
                 rng_state: NoiseGenerator) -> np.ndarray:
    """Draw `n_samples` of input-referred noise; zeros when the model is off."""
    if not model.enabled:
        return np.zeros(n_samples)
    if rng_state.model != model or rng_state.fs != fs:
        raise SignalError("noise generator was built for a different model or sample rate")
    return rng_state.draw(n_samples)


# ---------------------------------------------------------------------------
# Streaming state
# ---------------------------------------------------------------------------
class PipelineState:
    """
    Delay lines for every stage of one channel plus its noise generator.

    Single owner: one state per channel, advanced by process_block.
    """

    def __init__(self, cfg: ChannelConfig, fs: float,
                 seed: int | np.random.SeedSequence | None = None):
        self.fs = float(fs)
        self.cfg = cfg
        if cfg.passthrough:
            self.hpf = (np.array([1.0]), np.array([1.0]))
            self.sos = np.array([[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]])
        else:
            if not 0 < cfg.dsl_cutoff_hz < fs / 2:
                raise AliasingError(f"DC-servo corner {cfg.dsl_cutoff_hz} Hz must lie below fs/2")
            self.hpf = signal.butter(1, cfg.dsl_cutoff_hz, btype="highpass", fs=fs)
            f0, q = bpf_params(cfg.bpf)
            biquad = design_biquad(f0, q, fs)
            self.sos = np.array([biquad.as_sos_row()] * BPF_SECTIONS)
            log.debug("channel %d: f0=%.2f Hz Q=%.3f fs=%.0f Hz pole radius %.9f",
                      cfg.channel, f0, q, fs, biquad.pole_radius())
        self.noise = NoiseGenerator(cfg.noise, fs, seed)
        self.hpf_zi = np.zeros(max(len(self.hpf[0]), len(self.hpf[1])) - 1)
        self.sos_zi = np.zeros((self.sos.shape[0], 2))

    def reset(self) -> None:
        self.hpf_zi[:] = 0.0
        self.sos_zi[:] = 0.0
        self.noise.reset()


def process_block(cfg: ChannelConfig, state: PipelineState, x: SampledSignal,
                  tap: str = "pga") -> SampledSignal:
    """
    Run one block through the chain, advancing `state`.

    y = PGA·BPF(BPF(HPF(LNA·(x + noise)))), optionally clipped at ±v_sat.
    With tap="lna" the block stops after the DC servo (BPF state untouched).
    """
    if tap not in TAPS:
        raise ValueError(f"tap must be one of {TAPS}, got {tap!r}")
    if x.fs != state.fs:
        raise SignalError(f"block sample rate {x.fs} Hz does not match pipeline rate {state.fs} Hz")
    if state.cfg != cfg:
        raise SignalError("pipeline state was built for a different channel config")

    n = len(x)
    v = x.samples + inject_noise(n, cfg.noise, state.fs, state.noise)
    v = gain_from_code(cfg.lna_gain) * v
    if not cfg.passthrough:
        b, a = state.hpf
        v, state.hpf_zi = signal.lfilter(b, a, v, zi=state.hpf_zi)
    if tap == "lna":
        return x.with_samples(v)

    if not cfg.passthrough:
        v, state.sos_zi = signal.sosfilt(state.sos, v, zi=state.sos_zi)
    v = gain_from_code(cfg.pga_gain) * v
    if cfg.saturation:
        v = np.clip(v, -cfg.v_sat, cfg.v_sat)
    return x.with_samples(v)


def run_channel(cfg: ChannelConfig, x: SampledSignal, seed=None, tap: str = "pga") -> SampledSignal:
    """Convenience: fresh state, one block."""
    return process_block(cfg, PipelineState(cfg, x.fs, seed), x, tap=tap)
