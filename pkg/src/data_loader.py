"""
data_loader.py — File ingestion and emission for the front-end simulator.

  • INI configuration → AfeConfig (global settings + enabled channels)
  • WAV / CSV input signals, resampled to the simulation rate
  • Event-stream CSV (`t_ns,source,channel,polarity`), read and write
  • Signal CSV (`t_s,value`) and measurement-report CSV with `# key=value`
    header comments

Everything written uses LF line endings and a fixed float format so that
identical runs produce identical bytes.
"""

from __future__ import annotations

import configparser
import logging
import os
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import signal
from scipy.io import wavfile

from src.aer import HandshakeDelays
from src.core import (
    N_CHANNELS, AfeError, ChannelConfig, ConfigError, Event, EventStreamError,
    Mode, Polarity, ProtocolError, SampledSignal, SignalError, Source, Violation,
    validate_config,
)

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Formats
# ---------------------------------------------------------------------------
EVENT_COLUMNS = ["t_ns", "source", "channel", "polarity"]
SIGNAL_COLUMNS = ["t_s", "value"]
FLOAT_FORMAT = "%.12g"
RESAMPLE_MAX_DENOMINATOR = 1000
UNIFORM_RTOL = 1e-6

GLOBAL_SECTION = "global"
CHANNEL_PREFIX = "channel."
NESTED = ("bpf", "adm", "pfm", "noise")
AER_PREFIX = "aer."


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class AfeConfig:
    """Chip-level configuration: enabled channels plus link and rate settings."""

    channels: tuple[ChannelConfig, ...]
    fs: float | None = None
    input_scale: float = 1.0
    delays: HandshakeDelays = field(default_factory=HandshakeDelays)

    def channel(self, index: int) -> ChannelConfig:
        for cfg in self.channels:
            if cfg.channel == index:
                return cfg
        raise KeyError(index)


def _convert(raw: str, default, path: str, out: list[Violation]):
    """Parse `raw` into the type of `default`; record a violation on failure."""
    text = raw.strip()
    try:
        if isinstance(default, bool):
            state = configparser.ConfigParser.BOOLEAN_STATES.get(text.lower())
            if state is None:
                raise ValueError(text)
            return state
        if isinstance(default, Mode):
            return Mode(text.upper())
        if isinstance(default, int):
            return int(text)
        return float(text)
    except ValueError:
        out.append(Violation(path, f"cannot parse {text!r} as {type(default).__name__}"))
        return default


def _apply(obj, key: str, raw: str, prefix: str, out: list[Violation]):
    """Set dotted `key` on a frozen dataclass tree, returning the new tree."""
    head, _, rest = key.partition(".")
    names = {f.name for f in fields(obj)}
    if head not in names or head == "channel" or (rest and head not in NESTED) \
            or (not rest and head in NESTED):
        out.append(Violation(f"{prefix}{key}", "unknown key"))
        return obj
    current = getattr(obj, head)
    if rest:
        return replace(obj, **{head: _apply(current, rest, raw, f"{prefix}{head}.", out)})
    return replace(obj, **{head: _convert(raw, current, f"{prefix}{key}", out)})


def _parse_global(section, out: list[Violation]) -> tuple[float | None, float, HandshakeDelays]:
    fs, scale = None, 1.0
    delay_args = {}
    delay_names = {f.name for f in fields(HandshakeDelays)}
    for key, raw in section.items():
        path = f"{GLOBAL_SECTION}.{key}"
        if key == "fs":
            n_before = len(out)
            fs = _convert(raw, 0.0, path, out)
            if len(out) == n_before and not fs > 0:
                out.append(Violation(path, "must be positive"))
        elif key == "input_scale":
            scale = _convert(raw, 1.0, path, out)
        elif key.startswith(AER_PREFIX) and key[len(AER_PREFIX):] in delay_names:
            delay_args[key[len(AER_PREFIX):]] = _convert(raw, 0, path, out)
        else:
            out.append(Violation(path, "unknown key"))
    try:
        delays = HandshakeDelays(**delay_args)
    except ProtocolError as exc:
        out.append(Violation(f"{GLOBAL_SECTION}.aer", str(exc)))
        delays = HandshakeDelays()
    return fs, scale, delays


def parse_config(text: str, source: str = "<string>") -> AfeConfig:
    """
    Parse INI text into an AfeConfig.

    Sections: `[global]` and one `[channel.N]` per enabled channel. Keys
    name ChannelConfig fields, nested ones dotted (`adm.delta_up`). Every
    problem found is collected into one ConfigError.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([Violation("file", " ".join(str(exc).split()))]) from exc

    out: list[Violation] = []
    fs, scale, delays = None, 1.0, HandshakeDelays()
    channels: list[ChannelConfig] = []
    if parser.has_section(GLOBAL_SECTION):
        fs, scale, delays = _parse_global(parser[GLOBAL_SECTION], out)
    for name in parser.sections():
        if name == GLOBAL_SECTION:
            continue
        index = name[len(CHANNEL_PREFIX):] if name.startswith(CHANNEL_PREFIX) else ""
        if not index.isdigit() or not 0 <= int(index) < N_CHANNELS:
            out.append(Violation(name, f"unknown section (expected [global] or "
                                       f"[channel.0]..[channel.{N_CHANNELS - 1}])"))
            continue
        prefix = f"channel.{int(index)}."
        cfg = ChannelConfig(channel=int(index))
        n_before = len(out)
        for key, raw in parser[name].items():
            cfg = _apply(cfg, key, raw, prefix, out)
        if len(out) == n_before:
            out.extend(Violation(prefix + v.path, v.message) for v in validate_config(cfg, fs))
        channels.append(cfg)

    if not channels and not out:
        out.append(Violation("channel", "no [channel.N] section enables a channel"))
    if out:
        raise ConfigError(out)
    channels.sort(key=lambda c: c.channel)
    log.info("config %s: %d channel(s) enabled", source, len(channels))
    return AfeConfig(tuple(channels), fs, scale, delays)


def load_config(path: str) -> AfeConfig:
    """Read and parse an INI config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([Violation("file", f"cannot read {path}: {exc.strerror}")]) from exc
    except UnicodeDecodeError as exc:
        raise ConfigError([Violation("file", f"{path} is not UTF-8 text (byte {exc.start})")]) from exc
    return parse_config(text, source=os.path.basename(path))


# ---------------------------------------------------------------------------
# Input signals
# ---------------------------------------------------------------------------
def _wav_to_float(data: np.ndarray) -> np.ndarray:
    """Scale PCM integers to [-1, 1); floats pass through."""
    if data.dtype == np.uint8:
        return (data.astype(float) - 128.0) / 128.0
    if np.issubdtype(data.dtype, np.integer):
        return data.astype(float) / float(-np.iinfo(data.dtype).min)
    return data.astype(float)


def _read_wav(path: str) -> tuple[float, np.ndarray]:
    rate, data = wavfile.read(path)
    data = _wav_to_float(data)
    if data.ndim == 1:
        data = data[:, None]
    return float(rate), data


def _read_csv_signal(path: str) -> tuple[float, np.ndarray, float]:
    df = pd.read_csv(path)
    if list(df.columns) != SIGNAL_COLUMNS:
        raise SignalError(f"{path}: expected header {','.join(SIGNAL_COLUMNS)}, "
                          f"got {','.join(map(str, df.columns))}")
    if len(df) < 2:
        raise SignalError(f"{path}: need at least two samples to infer the sample rate")
    t = pd.to_numeric(df["t_s"], errors="coerce").to_numpy(dtype=float)
    v = pd.to_numeric(df["value"], errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~(np.isfinite(t) & np.isfinite(v)))
    if bad.size:
        raise SignalError(f"{path}: line {bad[0] + 2}: non-numeric or non-finite value")
    dt = np.diff(t)
    step = float(np.median(dt))
    if not step > 0 or not np.allclose(dt, step, rtol=UNIFORM_RTOL, atol=0):
        raise SignalError(f"{path}: samples are not uniformly spaced in time")
    return 1.0 / step, v[:, None], float(t[0])


def resample(x: SampledSignal, fs: float) -> SampledSignal:
    """Polyphase resampling to `fs` (rational ratio, bounded denominator)."""
    if x.fs == fs:
        return x
    ratio = Fraction(fs / x.fs).limit_denominator(RESAMPLE_MAX_DENOMINATOR)
    if ratio == 0:
        raise SignalError(f"cannot resample {x.fs} Hz to {fs} Hz")
    y = signal.resample_poly(x.samples, ratio.numerator, ratio.denominator)
    fs_new = x.fs * ratio.numerator / ratio.denominator
    if abs(fs_new - fs) > 1e-9 * fs:
        log.warning("resampled to %.9g Hz (requested %.9g Hz)", fs_new, fs)
    log.debug("resampled %d samples at %.6g Hz -> %d at %.6g Hz", len(x), x.fs, y.size, fs_new)
    return SampledSignal(fs_new, x.t0, y)


def load_signal(path: str, fs: float | None = None, scale: float = 1.0) -> list[SampledSignal]:
    """
    Read a WAV or `t_s,value` CSV into one SampledSignal per column.

    Parameters
    ----------
    path : str
        `.wav` (PCM 8/16/24/32-bit or float) or `.csv`.
    fs : float, optional
        Target sample rate; the input is resampled when it differs.
    scale : float
        Volts per full-scale unit.

    Returns
    -------
    list[SampledSignal]
        Column k feeds channel k; a mono file yields a single signal.
    """
    try:
        if path.lower().endswith(".wav"):
            rate, data = _read_wav(path)
            t0 = 0.0
        else:
            rate, data, t0 = _read_csv_signal(path)
    except SignalError:
        raise
    except (OSError, ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise SignalError(f"cannot read {path}: {exc}") from exc
    if data.shape[0] == 0:
        raise SignalError(f"{path}: no samples")

    out = []
    for col in range(data.shape[1]):
        x = SampledSignal(rate, t0, scale * data[:, col])
        out.append(resample(x, fs) if fs else x)
    log.info("loaded %s: %d column(s), %d samples at %.6g Hz", path, len(out), data.shape[0], rate)
    return out


def write_signal(path: str, x: SampledSignal) -> None:
    df = pd.DataFrame({"t_s": x.times(), "value": x.samples})
    df.to_csv(path, index=False, lineterminator="\n", float_format=FLOAT_FORMAT)


# ---------------------------------------------------------------------------
# Event streams
# ---------------------------------------------------------------------------
def events_frame(events: Sequence[Event]) -> pd.DataFrame:
    return pd.DataFrame({
        "t_ns": np.fromiter((e.t_ns for e in events), dtype=np.int64, count=len(events)),
        "source": [e.source.value for e in events],
        "channel": np.fromiter((e.channel for e in events), dtype=np.int64, count=len(events)),
        "polarity": [e.polarity.value for e in events],
    }, columns=EVENT_COLUMNS)


def write_events(path: str, events: Sequence[Event]) -> None:
    """Write an event stream; an empty stream leaves just the header."""
    events_frame(events).to_csv(path, index=False, lineterminator="\n")
    log.info("wrote %d events to %s", len(events), path)


def read_events(path: str) -> list[Event]:
    """
    Parse an event CSV, checking every row.

    Raises EventStreamError carrying the 1-based file line of the first bad
    row (the header is line 1).
    """
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False)
    except pd.errors.EmptyDataError as exc:
        raise EventStreamError("missing header", line=1) from exc
    except UnicodeDecodeError as exc:
        raise EventStreamError(f"{path} is not UTF-8 text (byte {exc.start})") from exc
    except (OSError, pd.errors.ParserError) as exc:
        raise EventStreamError(f"cannot read {path}: {exc}") from exc
    if list(df.columns) != EVENT_COLUMNS:
        raise EventStreamError(f"expected header {','.join(EVENT_COLUMNS)}", line=1)

    events: list[Event] = []
    prev = -1
    rows = zip(df["t_ns"].tolist(), df["source"].tolist(),
               df["channel"].tolist(), df["polarity"].tolist())
    for k, (t_raw, src_raw, ch_raw, pol_raw) in enumerate(rows):
        line = k + 2
        if not any(isinstance(v, str) and v.strip() for v in (t_raw, src_raw, ch_raw, pol_raw)):
            raise EventStreamError("empty row", line=line)
        try:
            t_ns, channel = int(t_raw), int(ch_raw)
            e = Event(t_ns, Source(src_raw), channel, Polarity(pol_raw))
        except ValueError as exc:
            raise EventStreamError(f"malformed row {t_raw},{src_raw},{ch_raw},{pol_raw}",
                                   line=line) from exc
        except EventStreamError as exc:
            raise EventStreamError(str(exc), line=line) from exc
        if e.t_ns < prev:
            raise EventStreamError(f"timestamp {e.t_ns} precedes {prev}", line=line)
        prev = e.t_ns
        events.append(e)
    log.info("read %d events from %s", len(events), path)
    return events


# ---------------------------------------------------------------------------
# Measurement reports
# ---------------------------------------------------------------------------
def _header_lines(header: dict) -> list[str]:
    return [f"# {key}={'' if value is None else value}" for key, value in header.items()]


def write_report(path: str, reports, header: dict | None = None) -> None:
    """
    Write one report, or several of the same kind in long format with a
    leading `channel` column.

    The header carries `kind`, `config_hash` and `seed`, plus the linear
    fit for rate curves.
    """
    many = isinstance(reports, (list, tuple))
    items = list(reports) if many else [reports]
    first = items[0]
    if any(r.kind is not first.kind for r in items):
        raise AfeError("reports in one file must share a kind")

    meta = {"kind": first.kind.value,
            "config_hash": first.metadata.get("config_hash"),
            "seed": first.metadata.get("seed")}
    if "r2" in first.metadata:
        meta["fit"] = (f"slope={first.metadata['slope']:.12g} "
                       f"intercept={first.metadata['intercept']:.12g} "
                       f"r2={first.metadata['r2']:.12g}")
    meta.update(header or {})

    x_col, y_col = first.columns
    frames = []
    for k, r in enumerate(items):
        df = pd.DataFrame({x_col: r.x, y_col: r.y})
        if many:
            df.insert(0, "channel", r.metadata.get("channel", k))
        frames.append(df)
    table = pd.concat(frames, ignore_index=True)

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(_header_lines(meta)) + "\n")
        table.to_csv(fh, index=False, lineterminator="\n", float_format=FLOAT_FORMAT)
    log.info("wrote %s report (%d rows) to %s", first.kind.value, len(table), path)


def read_report_table(path: str) -> tuple[dict, pd.DataFrame]:
    """Header comments as a dict plus the data table."""
    header = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            header[key] = value
    return header, pd.read_csv(path, comment="#")
