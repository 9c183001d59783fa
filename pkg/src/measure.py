"""
measure.py — Characterization harness for the simulated front-end.

Reproduces the bench measurements of a channel:
  • frequency sweeps (single channel, LNA tap, octave filter bank)
  • Welch noise PSD and input-referred noise
  • SNDR of a tone and SNDR-vs-amplitude curves with saturation
  • PFM spike rate vs input amplitude with a linear fit
  • membrane-potential traces

Every measurement returns a MeasurementReport: labeled numeric series with
the config hash and seed in its metadata.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import integrate, signal

from src.core import (
    DEFAULT_C_BASE, N_CHANNELS, ChannelConfig, MeasurementError, Mode, NoiseModel,
    SampledSignal, cap_from_code, config_hash, pfm_min_fs,
)
from src.encoders import LifState, pfm_encode
from src.pipeline import analytic_response, bpf_params, run_channel

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------
DEFAULT_FS_MIN = 48_000.0
FS_PER_F0 = 32              # simulation rate per highest center frequency
SWEEP_FS_PER_F = 16         # sweep rate per highest swept frequency
SETTLING_PERIODS = 10
MEASURE_Q_PERIODS = 20      # measurement window >= 20·Q/f0 seconds
MIN_TONE_PERIODS = 20
SWEEP_AMPLITUDE = 1e-3
BANK_Q = 2.0
HALF_POWER_DB = 10 * math.log10(2)
SNDR_BAND_LO = 10.0


class ReportKind(str, Enum):
    SWEEP = "SWEEP"
    PSD = "PSD"
    SNDR_CURVE = "SNDR_CURVE"
    RATE_CURVE = "RATE_CURVE"
    MEMBRANE = "MEMBRANE"


# (x column, y column) with units, per report kind
REPORT_COLUMNS = {
    ReportKind.SWEEP: ("freq_hz", "gain_db"),
    ReportKind.PSD: ("freq_hz", "psd_v2_per_hz"),
    ReportKind.SNDR_CURVE: ("input_dbv", "sndr_db"),
    ReportKind.RATE_CURVE: ("amplitude_v", "rate_hz"),
    ReportKind.MEMBRANE: ("t_s", "v_mem_v"),
}


# ---------------------------------------------------------------------------
# Report types
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class MeasurementReport:
    kind: ReportKind
    x: np.ndarray
    y: np.ndarray
    metadata: dict = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.shape != y.shape or x.ndim != 1:
            raise MeasurementError(f"report series must be equal-length 1-D, got {x.shape} / {y.shape}")
        if x.size > 1 and not np.all(np.diff(x) > 0):
            raise MeasurementError("report x values must be strictly increasing")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def columns(self) -> tuple[str, str]:
        return REPORT_COLUMNS[self.kind]


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r2: float
    n_points: int

    @property
    def defined(self) -> bool:
        return math.isfinite(self.r2)


UNDEFINED_FIT = LinearFit(math.nan, math.nan, math.nan, 0)


def _meta(cfg, seed=None, **extra) -> dict:
    meta = {"config_hash": config_hash(cfg), "seed": seed}
    if isinstance(cfg, ChannelConfig):
        meta["channel"] = cfg.channel
    meta.update(extra)
    return meta


# ---------------------------------------------------------------------------
# Sample-rate policy
# ---------------------------------------------------------------------------
def default_fs(channels: Sequence[ChannelConfig]) -> float:
    """Simulation rate: 32× the highest center frequency, PFM Euler bound, >= 48 kHz."""
    fs = DEFAULT_FS_MIN
    for cfg in channels:
        if not cfg.passthrough:
            fs = max(fs, FS_PER_F0 * bpf_params(cfg.bpf)[0])
        if cfg.mode is Mode.PFM:
            fs = max(fs, pfm_min_fs(cfg.pfm))
    return fs


# ---------------------------------------------------------------------------
# Frequency response
# ---------------------------------------------------------------------------
def _settling_time(cfg: ChannelConfig, f: float, tap: str) -> float:
    t = SETTLING_PERIODS / f
    if cfg.passthrough:
        return t
    if tap == "pga":
        f0, q = bpf_params(cfg.bpf)
        t = max(t, SETTLING_PERIODS * q / (math.pi * f0))
    else:
        t = max(t, SETTLING_PERIODS / (2 * math.pi * cfg.dsl_cutoff_hz))
    return t


def _measure_time(cfg: ChannelConfig, f: float, tap: str) -> float:
    t = MIN_TONE_PERIODS / f
    if not cfg.passthrough and tap == "pga":
        f0, q = bpf_params(cfg.bpf)
        t = max(t, MEASURE_Q_PERIODS * q / f0)
    return t


def tone_amplitude(y: np.ndarray, fs: float, f: float) -> float:
    """Amplitude of the `f` Hz component by single-bin Fourier projection."""
    t = np.arange(y.size) / fs
    return float(2 * abs(np.mean(y * np.exp(-2j * np.pi * f * t))))


def frequency_sweep(cfg: ChannelConfig, freqs: Sequence[float], fs: float | None = None,
                    amplitude: float = SWEEP_AMPLITUDE, tap: str = "pga") -> MeasurementReport:
    """
    Gain in dB of the channel (noise off) at each frequency.

    Each point drives a fresh pipeline with a sine, drops the settling
    interval and projects the output onto the stimulus frequency over a
    whole number of periods.
    """
    freqs = np.unique(np.asarray(freqs, dtype=float))
    if freqs.size == 0:
        raise MeasurementError("sweep needs at least one frequency")
    fs = fs or max(default_fs([cfg]), SWEEP_FS_PER_F * freqs[-1])
    if freqs[0] <= 0 or freqs[-1] >= fs / 2:
        raise MeasurementError(f"sweep frequencies must lie in (0, fs/2 = {fs / 2:.6g} Hz)")
    quiet = replace(cfg, noise=replace(cfg.noise, enabled=False))

    gains = np.empty(freqs.size)
    for k, f in enumerate(freqs):
        n_settle = math.ceil(_settling_time(cfg, f, tap) * fs)
        cycles = math.ceil(_measure_time(cfg, f, tap) * f)
        n_meas = int(round(cycles * fs / f))
        t = np.arange(n_settle + n_meas) / fs
        x = SampledSignal(fs, 0.0, amplitude * np.sin(2 * np.pi * f * t))
        y = run_channel(quiet, x, tap=tap).samples[n_settle:]
        gains[k] = 20 * math.log10(max(tone_amplitude(y, fs, f), 1e-300) / amplitude)
        log.debug("sweep ch%d %.4g Hz: %.3f dB", cfg.channel, f, gains[k])

    return MeasurementReport(ReportKind.SWEEP, freqs, gains,
                             _meta(cfg, fs=fs, tap=tap), label=f"ch{cfg.channel}")


def log_grid(f_center: float, decades: float = 1.0, points: int = 101) -> np.ndarray:
    """Log-spaced frequencies spanning ±`decades` around `f_center`."""
    return f_center * np.logspace(-decades, decades, points)


def cascade_q(q: float, sections: int = 2) -> float:
    """Q from the half-power width of `sections` identical cascaded biquads."""
    return q / math.sqrt(2 ** (1.0 / sections) - 1)


def _crossing(f: np.ndarray, g: np.ndarray, i: int, j: int, level: float) -> float:
    # log-f linear interpolation between neighbors i (above level) and j (below)
    lf = np.log(f[[i, j]])
    w = (g[i] - level) / (g[i] - g[j])
    return float(np.exp(lf[0] + w * (lf[1] - lf[0])))


def response_metrics(report: MeasurementReport) -> tuple[float, float]:
    """
    Peak frequency and half-power Q of a sweep.

    The peak is refined with a parabola through the top three points in
    log-frequency; Q is nan when a half-power crossing lies off the grid.
    """
    f, g = report.x, report.y
    i = int(np.argmax(g))
    peak_hz, peak_db = float(f[i]), float(g[i])
    if 0 < i < f.size - 1:
        lf = np.log(f[i - 1:i + 2])
        a, b, c = np.polyfit(lf, g[i - 1:i + 2], 2)
        if a < 0:
            peak_hz = float(np.exp(-b / (2 * a)))
            peak_db = float(c - b * b / (4 * a))

    level = peak_db - HALF_POWER_DB
    lo = hi = math.nan
    for k in range(i, 0, -1):
        if g[k - 1] < level:
            lo = _crossing(f, g, k, k - 1, level)
            break
    for k in range(i, f.size - 1):
        if g[k + 1] < level:
            hi = _crossing(f, g, k, k + 1, level)
            break
    q = peak_hz / (hi - lo) if math.isfinite(lo) and math.isfinite(hi) else math.nan
    return peak_hz, q


def octave_bank(f_lo: float, n: int, q: float = BANK_Q, octave: bool = True,
                template: ChannelConfig | None = None,
                fs: float | None = None) -> list[ChannelConfig]:
    """
    Channel configs with f0 = f_lo·2^k (or all at f_lo when octave=False).

    Center frequency and Q are set by the transconductances at the
    template's fixed CDAC codes.
    """
    if not 1 <= n <= N_CHANNELS:
        raise MeasurementError(f"bank size must be 1..{N_CHANNELS}, got {n}")
    if not (f_lo > 0 and q > 0):
        raise MeasurementError("f_lo and q must be positive")
    top = f_lo * 2 ** (n - 1) if octave else f_lo
    if fs is not None and top >= fs / 2:
        raise MeasurementError(f"top channel at {top:.6g} Hz is not below fs/2 = {fs / 2:.6g} Hz")

    base = template or ChannelConfig()
    c1 = cap_from_code(base.bpf.c1_code, base.bpf.c_base)
    c2 = cap_from_code(base.bpf.c2_code, base.bpf.c_base)
    bank = []
    for k in range(n):
        w0 = 2 * math.pi * (f_lo * 2 ** k if octave else f_lo)
        bpf = replace(base.bpf, gm1=w0 * c2 / q, gm2=w0 * q * c1)
        bank.append(replace(base, channel=k, bpf=bpf))
    return bank


def bank_sweep(bank: Sequence[ChannelConfig], decades: float = 1.0,
               points: int = 81) -> list[MeasurementReport]:
    """Sweep every bank channel over ±`decades` around its own center."""
    reports = []
    for cfg in bank:
        f0, _ = bpf_params(cfg.bpf)
        reports.append(frequency_sweep(cfg, log_grid(f0, decades, points)))
        log.info("bank channel %d swept around %.1f Hz", cfg.channel, f0)
    return reports


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------
def welch_psd(x: SampledSignal, seg_len: int, overlap: float = 0.5) -> MeasurementReport:
    """One-sided, power-calibrated Welch PSD with Hann segments."""
    if not 0 < seg_len <= len(x):
        raise MeasurementError(f"segment length {seg_len} must lie in 1..{len(x)}")
    if not 0 <= overlap < 1:
        raise MeasurementError(f"overlap must lie in [0, 1), got {overlap}")
    f, p = signal.welch(x.samples, fs=x.fs, window="hann", nperseg=seg_len,
                        noverlap=int(overlap * seg_len), detrend="constant",
                        return_onesided=True, scaling="density")
    return MeasurementReport(ReportKind.PSD, f, p,
                             {"fs": x.fs, "seg_len": seg_len, "overlap": overlap})


def band_power(report: MeasurementReport, f_lo: float, f_hi: float) -> float:
    """Integrate a PSD report over [f_lo, f_hi] (V²)."""
    f, p = report.x, report.y
    df = float(f[1] - f[0]) if f.size > 1 else 0.0
    mask = (f >= f_lo) & (f <= f_hi)
    return float(np.sum(p[mask]) * df)


def calibrate_noise(v_rms: float, f_lo: float, f_hi: float, corner_hz: float = 0.0,
                    flicker_lo_hz: float = 0.1) -> NoiseModel:
    """Noise model whose PSD d²(1 + corner/f) integrates to v_rms² over the band."""
    if not (0 < f_lo < f_hi and v_rms >= 0 and corner_hz >= 0):
        raise MeasurementError("calibration needs 0 < f_lo < f_hi, v_rms >= 0, corner >= 0")
    span = (f_hi - f_lo) + corner_hz * math.log(f_hi / f_lo)
    return NoiseModel(white_density=v_rms / math.sqrt(span), flicker_corner_hz=corner_hz,
                      enabled=True, flicker_lo_hz=flicker_lo_hz)


def input_referred_noise(cfg: ChannelConfig, fs: float, duration: float, seed,
                         band: tuple[float, float] = (1.0, 1000.0),
                         seg_len: int | None = None) -> tuple[float, MeasurementReport]:
    """
    Input-referred RMS noise over `band` at the LNA output.

    Zero input runs through the LNA and DC servo; the output PSD is divided
    by |LNA response|² bin by bin and integrated.
    """
    if not cfg.noise.enabled:
        raise MeasurementError("noise model is disabled for this channel")
    seg_len = seg_len or 2 ** math.ceil(math.log2(fs / band[0]))
    n = int(round(duration * fs))
    if n < seg_len:
        raise MeasurementError(f"{duration} s at {fs} Hz is shorter than one {seg_len}-sample segment")

    y = run_channel(cfg, SampledSignal(fs, 0.0, np.zeros(n)), seed=seed, tap="lna")
    psd = welch_psd(y, seg_len)
    f = psd.x[1:]
    h2 = np.abs(analytic_response(cfg, f, tap="lna")) ** 2
    referred = MeasurementReport(ReportKind.PSD, f, psd.y[1:] / h2,
                                 _meta(cfg, seed, fs=fs, seg_len=seg_len, referred="input"),
                                 label=f"ch{cfg.channel}")
    rms = math.sqrt(band_power(referred, *band))
    log.info("input-referred noise ch%d: %.4g Vrms over %g-%g Hz", cfg.channel, rms, *band)
    return rms, referred


# ---------------------------------------------------------------------------
# SNDR
# ---------------------------------------------------------------------------
def sndr(y: SampledSignal, f0: float, band: tuple[float, float] | None = None) -> float:
    """
    Fundamental power over in-band noise + distortion power, in dB.

    The fundamental is removed by a least-squares sine fit at f0 rather than
    by taking its bin ±1 from the spectrum. The two agree on coherent
    records; the fit does not leak on non-coherent ones. The residual's
    spectrum is summed over `band` (default 10 Hz to fs/2).
    """
    n = len(y)
    if n * f0 / y.fs < MIN_TONE_PERIODS:
        raise MeasurementError(f"SNDR needs >= {MIN_TONE_PERIODS} periods of {f0} Hz")
    lo, hi = band or (SNDR_BAND_LO, y.fs / 2)

    t = np.arange(n) / y.fs
    basis = np.column_stack([np.cos(2 * np.pi * f0 * t), np.sin(2 * np.pi * f0 * t), np.ones(n)])
    coef, *_ = np.linalg.lstsq(basis, y.samples, rcond=None)
    p_fund = (coef[0] ** 2 + coef[1] ** 2) / 2
    resid = y.samples - basis @ coef

    spec = np.abs(np.fft.rfft(resid)) ** 2 / n ** 2
    spec[1:(n + 1) // 2] *= 2
    freqs = np.fft.rfftfreq(n, 1 / y.fs)
    p_nd = float(np.sum(spec[(freqs >= lo) & (freqs <= hi)]))
    if p_nd <= 0:
        return math.inf
    return 10 * math.log10(p_fund / p_nd)


def sndr_curve(cfg: ChannelConfig, amplitudes_dbv: Sequence[float], f0: float,
               fs: float | None = None, duration: float | None = None,
               seed=None) -> MeasurementReport:
    """SNDR at the channel output for tones of each RMS level in dBV."""
    amps = np.asarray(amplitudes_dbv, dtype=float)
    if amps.size == 0 or np.any(np.diff(amps) <= 0):
        raise MeasurementError("amplitudes must be strictly increasing")
    fs = fs or default_fs([cfg])
    if not 0 < f0 < fs / 2:
        raise MeasurementError(f"tone {f0} Hz must lie below fs/2")
    duration = duration or max(200 / f0, 0.1)
    n_settle = math.ceil(_settling_time(cfg, f0, "pga") * fs)
    n_meas = int(round(math.ceil(duration * f0) * fs / f0))
    t = np.arange(n_settle + n_meas) / fs
    unit = np.sqrt(2) * np.sin(2 * np.pi * f0 * t)

    seeds = np.random.SeedSequence(seed).spawn(amps.size)
    out = np.empty(amps.size)
    for k, level in enumerate(amps):
        x = SampledSignal(fs, 0.0, 10 ** (level / 20) * unit)
        y = run_channel(cfg, x, seed=seeds[k])
        out[k] = sndr(SampledSignal(fs, 0.0, y.samples[n_settle:]), f0)
        log.debug("SNDR ch%d at %.1f dBV: %.2f dB", cfg.channel, level, out[k])
    return MeasurementReport(ReportKind.SNDR_CURVE, amps, out,
                             _meta(cfg, seed, fs=fs, f0=f0), label=f"ch{cfg.channel}")


def predicted_dynamic_range(cfg: ChannelConfig, fs: float,
                            band: tuple[float, float] | None = None) -> float:
    """
    Full-scale sine power (±v_sat) over output noise power, in dB.

    Output noise integrates the noise model's PSD d²(1 + corner/f) shaped
    by the analytic chain response over `band` (default 10 Hz to fs/2).
    """
    if not cfg.saturation:
        raise MeasurementError("dynamic range is defined only with saturation enabled")
    if not (cfg.noise.enabled and cfg.noise.white_density > 0):
        raise MeasurementError("dynamic range needs an enabled, non-zero noise model")
    lo, hi = band or (SNDR_BAND_LO, fs / 2)
    f = np.geomspace(lo, hi, 20_000)
    d2 = cfg.noise.white_density ** 2
    psd_in = d2 * (1 + cfg.noise.flicker_corner_hz / f)
    p_noise = integrate.trapezoid(psd_in * np.abs(analytic_response(cfg, f)) ** 2, f)
    return 10 * math.log10((cfg.v_sat ** 2 / 2) / p_noise)


# ---------------------------------------------------------------------------
# PFM characterization
# ---------------------------------------------------------------------------
def _pfm_fs(cfg: ChannelConfig, fs: float | None) -> float:
    return fs or max(DEFAULT_FS_MIN, pfm_min_fs(cfg.pfm))


def _stimulus(amplitude: float, tone_hz: float, duration: float, fs: float) -> tuple[np.ndarray, float]:
    if tone_hz > 0:
        duration = max(1, round(duration * tone_hz)) / tone_hz
    n = int(round(duration * fs))
    if tone_hz > 0:
        return amplitude * np.sin(2 * np.pi * tone_hz * np.arange(n) / fs), duration
    return np.full(n, float(amplitude)), duration


def linear_fit(x: np.ndarray, y: np.ndarray) -> LinearFit:
    """Least-squares line with R²; undefined for fewer than 2 distinct points."""
    if x.size < 2 or np.ptp(x) == 0:
        return replace(UNDEFINED_FIT, n_points=int(x.size))
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return LinearFit(float(slope), float(intercept), r2, int(x.size))


def rate_vs_amplitude(cfg: ChannelConfig, amplitudes: Sequence[float], tone_hz: float,
                      duration: float = 1.0,
                      fs: float | None = None) -> tuple[MeasurementReport, LinearFit]:
    """
    Mean PFM spike rate per input amplitude, with a line fitted to the
    supra-threshold points.

    tone_hz = 0 drives constant (DC) inputs; their rate is the inverse of
    the mean interspike interval.
    """
    amps = np.asarray(amplitudes, dtype=float)
    if amps.size == 0 or np.any(np.diff(amps) <= 0):
        raise MeasurementError("amplitudes must be strictly increasing")
    if tone_hz < 0:
        raise MeasurementError("tone frequency must be >= 0 (0 = DC)")
    fs = _pfm_fs(cfg, fs)

    rates = np.zeros(amps.size)
    for k, a in enumerate(amps):
        x, span = _stimulus(a, tone_hz, duration, fs)
        events, _, _ = pfm_encode(SampledSignal(fs, 0.0, x), cfg.pfm,
                                  LifState.initial(cfg.pfm), cfg.channel)
        if tone_hz == 0 and len(events) >= 2:
            rates[k] = (len(events) - 1) / ((events[-1].t_ns - events[0].t_ns) / 1e9)
        else:
            rates[k] = len(events) / span
        log.debug("PFM ch%d amplitude %.4g V: %.3f Hz", cfg.channel, a, rates[k])

    live = rates > 0
    fit = linear_fit(amps[live], rates[live])
    report = MeasurementReport(
        ReportKind.RATE_CURVE, amps, rates,
        _meta(cfg, fs=fs, tone_hz=tone_hz, slope=fit.slope, intercept=fit.intercept, r2=fit.r2),
        label=f"ch{cfg.channel}")
    return report, fit


def membrane_response(cfg: ChannelConfig, amplitude: float, tone_hz: float = 100.0,
                      duration: float = 0.05, fs: float | None = None) -> MeasurementReport:
    """Membrane potential trace of the PFM neuron driven by a tone."""
    fs = _pfm_fs(cfg, fs)
    x, _ = _stimulus(amplitude, tone_hz, duration, fs)
    events, trace, _ = pfm_encode(SampledSignal(fs, 0.0, x), cfg.pfm,
                                  LifState.initial(cfg.pfm), cfg.channel)
    return MeasurementReport(ReportKind.MEMBRANE, trace.times(), trace.samples,
                             _meta(cfg, fs=fs, amplitude=amplitude, tone_hz=tone_hz,
                                   spikes=len(events)),
                             label=f"{amplitude * 1e3:g} mV")
