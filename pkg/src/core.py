"""
core.py — Shared data model for the 16-channel event-based analog front-end.

Holds:
  • Frozen configuration types mirroring the chip's bias / CDAC / VDAC state
  • The sampled-signal and spike-event value types every module exchanges
  • DAC code → physical value mappings (gain ladder, capacitor DAC)
  • Config validation that reports violations as data
  • The exception hierarchy used across the package
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------
N_CHANNELS = 16
GAIN_CODE_MAX = 15
CAP_CODE_MAX = 255
CAP_STEPS = 256
GAIN_DB_MAX = 24.0

# Default filter: C1 = C2 = 10 pF, gm tuned for f0 = 1 kHz, Q = 1
DEFAULT_C_BASE = 10e-12
DEFAULT_GM = 2 * math.pi * 1e3 * DEFAULT_C_BASE

# Euler step must resolve one interspike interval into >= 100 steps
EULER_STEP_FRACTION = 0.01


# ---------------------------------------------------------------------------
# Exceptions
# ---------------------------------------------------------------------------
class AfeError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigError(AfeError):
    """Configuration rejected; `violations` lists every problem found."""

    def __init__(self, violations: list["Violation"]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class SignalError(AfeError):
    """Ill-formed sampled signal or sample-rate mismatch."""


class AliasingError(SignalError):
    """A filter frequency sits at or above Nyquist."""


class UnstableFilterError(AfeError):
    """Designed coefficients put a pole on or outside the unit circle."""


class EventStreamError(AfeError):
    """Event stream out of order, of the wrong source, or malformed on disk."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class AddressError(AfeError):
    """AER address word outside the valid range for its link."""


class ProtocolError(AfeError):
    """Illegal four-phase handshake transition."""


class MeasurementError(AfeError):
    """A characterization precondition does not hold."""


# ---------------------------------------------------------------------------
# Enumerations
# ---------------------------------------------------------------------------
class Mode(str, Enum):
    ADM = "ADM"
    PFM = "PFM"


class Source(str, Enum):
    ADM = "ADM"
    PFM = "PFM"


class Polarity(str, Enum):
    UP = "UP"
    DN = "DN"
    NA = "NA"


# ---------------------------------------------------------------------------
# Signal and event value types
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SampledSignal:
    """Uniformly sampled voltage waveform starting at `t0` seconds."""

    fs: float
    t0: float
    samples: np.ndarray

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float).reshape(-1)
        if not (self.fs > 0 and math.isfinite(self.fs)):
            raise SignalError(f"sample rate must be a positive finite number, got {self.fs}")
        if not math.isfinite(self.t0):
            raise SignalError(f"start time must be finite, got {self.t0}")
        if samples.size < 1:
            raise SignalError("signal must hold at least one sample")
        if not np.all(np.isfinite(samples)):
            raise SignalError("signal contains non-finite samples")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def dt(self) -> float:
        return 1.0 / self.fs

    @property
    def duration(self) -> float:
        return self.samples.size / self.fs

    def times(self) -> np.ndarray:
        """Sample instants in seconds."""
        return self.t0 + np.arange(self.samples.size) / self.fs

    def times_ns(self) -> np.ndarray:
        """Sample instants as integer nanoseconds."""
        return np.rint(self.times() * 1e9).astype(np.int64)

    def split(self, n: int) -> tuple["SampledSignal", "SampledSignal"]:
        """Cut into two contiguous blocks at sample index `n`."""
        if not 0 < n < self.samples.size:
            raise SignalError(f"split index {n} outside 1..{self.samples.size - 1}")
        head = SampledSignal(self.fs, self.t0, self.samples[:n])
        tail = SampledSignal(self.fs, self.t0 + n / self.fs, self.samples[n:])
        return head, tail

    def with_samples(self, samples: np.ndarray) -> "SampledSignal":
        return SampledSignal(self.fs, self.t0, samples)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SampledSignal):
            return NotImplemented
        return (self.fs == other.fs and self.t0 == other.t0
                and np.array_equal(self.samples, other.samples))

    __hash__ = None


@dataclass(frozen=True, order=True)
class Event:
    """One spike: integer-ns timestamp, encoding path, channel and polarity."""

    t_ns: int
    source: Source
    channel: int
    polarity: Polarity

    def __post_init__(self):
        if self.t_ns < 0:
            raise EventStreamError(f"negative timestamp {self.t_ns}")
        if not 0 <= self.channel < N_CHANNELS:
            raise EventStreamError(f"channel {self.channel} outside 0..{N_CHANNELS - 1}")
        if self.source is Source.ADM and self.polarity not in (Polarity.UP, Polarity.DN):
            raise EventStreamError("ADM events carry polarity UP or DN")
        if self.source is Source.PFM and self.polarity is not Polarity.NA:
            raise EventStreamError("PFM events carry polarity NA")


# ---------------------------------------------------------------------------
# Configuration types
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class NoiseModel:
    """Input-referred noise: white floor plus 1/f component below the corner."""

    white_density: float = 0.0          # V/sqrt(Hz), one-sided
    flicker_corner_hz: float = 0.0
    enabled: bool = False
    flicker_lo_hz: float = 0.1


@dataclass(frozen=True)
class BpfConfig:
    gm1: float = DEFAULT_GM
    gm2: float = DEFAULT_GM
    c1_code: int = CAP_CODE_MAX
    c2_code: int = CAP_CODE_MAX
    c_base: float = DEFAULT_C_BASE


@dataclass(frozen=True)
class AdmConfig:
    delta_up: float = 10e-3
    delta_dn: float = 10e-3
    hysteresis: float = 1e-3
    v_ref_init: float = 0.0
    threshold_sigma: float = 300e-6


@dataclass(frozen=True)
class PfmConfig:
    gm_amp: float = 1e-9
    c_mem: float = 1e-12
    v_th: float = 0.5
    v_reset: float = 0.0
    i_leak: float = 1e-12
    t_refr: float = 1e-6
    v_in_max: float = 1.0


@dataclass(frozen=True)
class ChannelConfig:
    """Full tuning state of one analog channel."""

    channel: int = 0
    lna_gain: int = 0
    pga_gain: int = 0
    dsl_cutoff_hz: float = 1.0
    bpf: BpfConfig = field(default_factory=BpfConfig)
    mode: Mode = Mode.ADM
    adm: AdmConfig = field(default_factory=AdmConfig)
    pfm: PfmConfig = field(default_factory=PfmConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    passthrough: bool = False
    saturation: bool = False
    v_sat: float = 0.9


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


# ---------------------------------------------------------------------------
# DAC mappings
# ---------------------------------------------------------------------------
def gain_from_code(code: int) -> float:
    """Linear voltage gain of a 4-bit amplifier code (uniform 1.6 dB steps)."""
    if not isinstance(code, (int, np.integer)) or not 0 <= code <= GAIN_CODE_MAX:
        raise ValueError(f"gain code must be an integer 0..{GAIN_CODE_MAX}, got {code!r}")
    if code == 0:
        return 1.0
    return 10 ** (GAIN_DB_MAX * code / GAIN_CODE_MAX / 20)


def cap_from_code(code: int, c_base: float) -> float:
    """Effective CDAC capacitance; code 0 is the smallest non-zero step."""
    if not isinstance(code, (int, np.integer)) or not 0 <= code <= CAP_CODE_MAX:
        raise ValueError(f"cap code must be an integer 0..{CAP_CODE_MAX}, got {code!r}")
    if not c_base > 0:
        raise ValueError(f"c_base must be positive, got {c_base!r}")
    return c_base * (code + 1) / CAP_STEPS


def pfm_min_fs(pfm: PfmConfig) -> float:
    """Lowest sample rate whose Euler step meets the LIF accuracy bound."""
    i_max = pfm.gm_amp * pfm.v_in_max
    if i_max <= 0:
        return 0.0
    return i_max / (EULER_STEP_FRACTION * pfm.c_mem * (pfm.v_th - pfm.v_reset))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------
def _finite(x) -> bool:
    try:
        return math.isfinite(float(x))
    except (TypeError, ValueError):
        return False


def _is_int(x) -> bool:
    return isinstance(x, (int, np.integer)) and not isinstance(x, bool)


def _check_code(out: list[Violation], path: str, value, hi: int) -> None:
    if not _is_int(value) or not 0 <= value <= hi:
        out.append(Violation(path, f"must be an integer in 0..{hi}, got {value!r}"))


def _check_positive(out: list[Violation], path: str, value) -> None:
    if not _finite(value) or value <= 0:
        out.append(Violation(path, f"must be a positive finite number, got {value!r}"))


def _check_nonneg(out: list[Violation], path: str, value) -> None:
    if not _finite(value) or value < 0:
        out.append(Violation(path, f"must be a non-negative finite number, got {value!r}"))


def validate_config(cfg: ChannelConfig, fs: float | None = None) -> list[Violation]:
    """
    Check every invariant of a channel configuration.

    Returns an empty list iff the config is valid. When `fs` is given and the
    channel runs in PFM mode, the LIF Euler step bound is checked as well.
    """
    out: list[Violation] = []

    if not _is_int(cfg.channel) or not 0 <= cfg.channel < N_CHANNELS:
        out.append(Violation("channel", f"must be an integer in 0..{N_CHANNELS - 1}, "
                                        f"got {cfg.channel!r}"))
    _check_code(out, "lna_gain", cfg.lna_gain, GAIN_CODE_MAX)
    _check_code(out, "pga_gain", cfg.pga_gain, GAIN_CODE_MAX)
    _check_positive(out, "dsl_cutoff_hz", cfg.dsl_cutoff_hz)
    if not isinstance(cfg.mode, Mode):
        out.append(Violation("mode", f"must be one of ADM, PFM, got {cfg.mode!r}"))
    if cfg.saturation:
        _check_positive(out, "v_sat", cfg.v_sat)

    bpf = cfg.bpf
    _check_positive(out, "bpf.gm1", bpf.gm1)
    _check_positive(out, "bpf.gm2", bpf.gm2)
    _check_positive(out, "bpf.c_base", bpf.c_base)
    _check_code(out, "bpf.c1_code", bpf.c1_code, CAP_CODE_MAX)
    _check_code(out, "bpf.c2_code", bpf.c2_code, CAP_CODE_MAX)

    adm = cfg.adm
    _check_positive(out, "adm.delta_up", adm.delta_up)
    _check_positive(out, "adm.delta_dn", adm.delta_dn)
    _check_nonneg(out, "adm.hysteresis", adm.hysteresis)
    _check_nonneg(out, "adm.threshold_sigma", adm.threshold_sigma)
    if not _finite(adm.v_ref_init):
        out.append(Violation("adm.v_ref_init", f"must be finite, got {adm.v_ref_init!r}"))
    if _finite(adm.delta_up) and _finite(adm.hysteresis) and adm.delta_up <= adm.hysteresis:
        out.append(Violation("adm.delta_up", "must exceed adm.hysteresis"))
    if _finite(adm.delta_dn) and _finite(adm.hysteresis) and adm.delta_dn <= adm.hysteresis:
        out.append(Violation("adm.delta_dn", "must exceed adm.hysteresis"))

    pfm = cfg.pfm
    _check_positive(out, "pfm.gm_amp", pfm.gm_amp)
    _check_positive(out, "pfm.c_mem", pfm.c_mem)
    _check_nonneg(out, "pfm.v_reset", pfm.v_reset)
    _check_nonneg(out, "pfm.i_leak", pfm.i_leak)
    _check_nonneg(out, "pfm.t_refr", pfm.t_refr)
    _check_positive(out, "pfm.v_in_max", pfm.v_in_max)
    if not _finite(pfm.v_th) or (_finite(pfm.v_reset) and pfm.v_th <= pfm.v_reset):
        out.append(Violation("pfm.v_th", "must be finite and exceed pfm.v_reset"))

    noise = cfg.noise
    _check_nonneg(out, "noise.white_density", noise.white_density)
    _check_nonneg(out, "noise.flicker_corner_hz", noise.flicker_corner_hz)
    _check_positive(out, "noise.flicker_lo_hz", noise.flicker_lo_hz)

    if fs is not None and cfg.mode is Mode.PFM and not any(
            v.path.startswith("pfm.") for v in out):
        need = pfm_min_fs(pfm)
        if fs < need * (1 - 1e-9):
            out.append(Violation(
                "pfm", f"Euler step 1/fs = {1 / fs:.3g} s too coarse; "
                       f"sample rate must be at least {need:.6g} Hz"))

    return out


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------
def _jsonable(obj):
    if isinstance(obj, Enum):
        return obj.value
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def config_hash(cfg: ChannelConfig | list[ChannelConfig]) -> str:
    """Short stable digest of one or more channel configs."""
    items = cfg if isinstance(cfg, list) else [cfg]
    blob = json.dumps([asdict(c) for c in items], sort_keys=True, default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
