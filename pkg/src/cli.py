"""
cli.py — Command-line front door of the simulator.

  encode   config + input signal → pipeline → encoders → AER links → event CSV
  decode   event CSV → ADM staircase or PFM rate → signal CSV
  measure  characterization runs → report CSV (and optional HTML figure)

Exit codes: 0 success, 2 configuration / flag / measurement errors,
3 unreadable or ill-formed input. Every error line on stderr starts with
`error[config]:`, `error[input]:` or `error[measure]:`.

Usage
-----
    python app.py encode --config afe.ini --input tone.wav --output events.csv --seed 7
    python app.py decode --input events.csv --mode ADM --output recon.csv
    python app.py measure bank --f-lo 100 --n 11 --output bank.csv --plot bank.html
"""

from __future__ import annotations

import argparse
import heapq
import logging
import sys
from dataclasses import replace
from typing import Sequence

import numpy as np

from src.aer import Delivery, arbitrate, handshake_run
from src.core import (
    N_CHANNELS, AddressError, AliasingError, ChannelConfig, ConfigError, Event,
    EventStreamError, MeasurementError, Mode, ProtocolError, SampledSignal,
    SignalError, Source, UnstableFilterError, Violation, config_hash,
    validate_config,
)
from src.data_loader import (
    AfeConfig, load_config, load_signal, read_events, write_events, write_report,
    write_signal,
)
from src.decode import adm_reconstruct, pfm_rate_decode
from src.encoders import AdmState, LifState, adm_encode, pfm_encode
from src.measure import (
    bank_sweep, default_fs, frequency_sweep, input_referred_noise,
    membrane_response, octave_bank, predicted_dynamic_range, rate_vs_amplitude,
    sndr_curve, welch_psd,
)
from src.pipeline import bpf_params, run_channel

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"
LINK_SEED_OFFSET = N_CHANNELS       # spawned children 16, 17 seed the ADM / PFM links
PASSTHROUGH_CENTER_HZ = 1000.0
MEASURE_KINDS = ("sweep", "psd", "sndr", "rate", "bank", "lna", "noise", "membrane")


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors carry the config error prefix."""

    def error(self, message):
        self.exit(EXIT_CONFIG, f"error[config]: {message}\n")


def _fail(kind: str, message: str) -> None:
    print(f"error[{kind}]: {' '.join(str(message).split())}", file=sys.stderr)


def _range(text: str) -> np.ndarray:
    """`lo:hi:n` → n linearly spaced values; `a,b,c` → the listed values."""
    try:
        if ":" in text:
            lo, hi, n = text.split(":")
            return np.linspace(float(lo), float(hi), int(n))
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad range {text!r} (use lo:hi:n or a,b,c)") from exc


# ---------------------------------------------------------------------------
# Seeds
# ---------------------------------------------------------------------------
def seed_reasons(channels: Sequence[ChannelConfig], jitter_ns: int = 0) -> list[str]:
    """Why a run needs --seed; empty when it is fully deterministic without one."""
    out = []
    for cfg in channels:
        if cfg.noise.enabled and cfg.noise.white_density > 0:
            out.append(f"channel {cfg.channel} has noise enabled")
        if cfg.mode is Mode.ADM and cfg.adm.threshold_sigma > 0:
            out.append(f"channel {cfg.channel} has ADM threshold mismatch (adm.threshold_sigma > 0)")
    if jitter_ns > 0:
        out.append("AER handshake jitter is enabled")
    return out


def _require_seed(seed, channels, jitter_ns: int = 0) -> None:
    reasons = seed_reasons(channels, jitter_ns)
    if seed is None and reasons:
        raise ConfigError([Violation("seed", f"--seed is required: {r}") for r in reasons])


def _children(seed) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(0 if seed is None else seed).spawn(N_CHANNELS + 2)


# ---------------------------------------------------------------------------
# Encode
# ---------------------------------------------------------------------------
def encode_signals(afe: AfeConfig, signals: Sequence[SampledSignal],
                   seed=None) -> dict[Source, tuple[list[Event], list[Delivery]]]:
    """
    Run every enabled channel and ship each encoding path over its own link.

    Returns, per source with at least one channel, the arbitrated event
    stream and its AER deliveries. Random streams are derived per channel
    and per link, so results do not depend on channel order.
    """
    children = _children(seed)
    queues = {src: [[] for _ in range(N_CHANNELS)] for src in Source}
    used = set()
    for cfg in afe.channels:
        if len(signals) == 1:
            x = signals[0]
        elif cfg.channel < len(signals):
            x = signals[cfg.channel]
        else:
            raise SignalError(f"input has {len(signals)} columns; channel {cfg.channel} has none")
        noise_seq, mismatch_seq = children[cfg.channel].spawn(2)
        y = run_channel(cfg, x, seed=noise_seq)
        if cfg.mode is Mode.ADM:
            events, _ = adm_encode(y, cfg.adm, AdmState.initial(cfg.adm, mismatch_seq), cfg.channel)
        else:
            events, _, _ = pfm_encode(y, cfg.pfm, LifState.initial(cfg.pfm), cfg.channel)
        source = Source(cfg.mode.value)
        queues[source][cfg.channel] = events
        used.add(source)
        log.info("channel %d (%s): %d events", cfg.channel, cfg.mode.value, len(events))

    out = {}
    for k, source in enumerate(Source):
        if source not in used:
            continue
        merged = arbitrate(queues[source])
        deliveries, _ = handshake_run(merged, afe.delays, seed=children[LINK_SEED_OFFSET + k])
        out[source] = (merged, deliveries)
        log.info("%s link: %d events delivered", source.value, len(deliveries))
    return out


def _output_stream(links: dict, timestamps: str) -> list[Event]:
    streams = []
    for source in Source:
        if source not in links:
            continue
        merged, deliveries = links[source]
        if timestamps == "delivery":
            streams.append([replace(d.event, t_ns=d.t_delivered_ns) for d in deliveries])
        else:
            streams.append(merged)
    return list(heapq.merge(*streams, key=lambda e: e.t_ns))


def cmd_encode(args) -> int:
    afe = load_config(args.config)
    if args.mode:
        afe = replace(afe, channels=tuple(replace(c, mode=Mode(args.mode)) for c in afe.channels))
    fs = afe.fs or default_fs(afe.channels)
    violations = [Violation(f"channel.{c.channel}.{v.path}", v.message)
                  for c in afe.channels for v in validate_config(c, fs)]
    if violations:
        raise ConfigError(violations)
    _require_seed(args.seed, afe.channels, afe.delays.jitter_ns)

    signals = load_signal(args.input, fs, afe.input_scale)
    links = encode_signals(afe, signals, args.seed)
    write_events(args.output, _output_stream(links, args.timestamps))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Decode
# ---------------------------------------------------------------------------
def _config_channel(afe: AfeConfig, channel: int) -> ChannelConfig:
    try:
        return afe.channel(channel)
    except KeyError:
        raise ConfigError([Violation("channel", f"channel {channel} is not enabled")]) from None


def cmd_decode(args) -> int:
    bad = [Violation(flag, f"must be positive, got {value}")
           for flag, value in (("--fs-out", args.fs_out), ("--window", args.window))
           if not value > 0]
    if args.smoothing_hz is not None and not 0 < args.smoothing_hz < args.fs_out / 2:
        bad.append(Violation("--smoothing-hz", f"must lie in (0, fs-out/2), got {args.smoothing_hz}"))
    if bad:
        raise ConfigError(bad)
    cfg = _config_channel(load_config(args.config), args.channel) if args.config else ChannelConfig()
    events = read_events(args.input)
    mode = Source(args.mode) if args.mode else (events[0].source if events else Source.ADM)
    events = [e for e in events if e.channel == args.channel and e.source is mode]

    if mode is Source.ADM:
        up = cfg.adm.delta_up if args.delta_up is None else args.delta_up
        dn = cfg.adm.delta_dn if args.delta_dn is None else args.delta_dn
        v0 = cfg.adm.v_ref_init if args.v0 is None else args.v0
        y = adm_reconstruct(events, up, dn, v0, args.fs_out, t_stop=args.t_stop,
                            smoothing_hz=args.smoothing_hz)
    else:
        t_start = 0.0 if args.t_stop is not None else None
        y = pfm_rate_decode(events, args.window, args.fs_out, t_start=t_start, t_stop=args.t_stop)
    write_signal(args.output, y)
    log.info("decoded %d %s events into %d samples", len(events), mode.value, len(y))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Measure
# ---------------------------------------------------------------------------
def _measure_channel(args) -> tuple[ChannelConfig, float | None]:
    if not args.config:
        return ChannelConfig(channel=args.channel or 0), args.fs
    afe = load_config(args.config)
    cfg = _config_channel(afe, args.channel) if args.channel is not None else afe.channels[0]
    return cfg, args.fs or afe.fs


def _center(cfg: ChannelConfig) -> float:
    return PASSTHROUGH_CENTER_HZ if cfg.passthrough else bpf_params(cfg.bpf)[0]


def _sweep_grid(args, center: float, decades: float) -> np.ndarray:
    lo = args.f_start or center / 10 ** decades
    hi = args.f_stop or center * 10 ** decades
    if not 0 < lo < hi:
        raise MeasurementError(f"bad sweep range {lo}..{hi} Hz")
    return np.geomspace(lo, hi, args.points)


def cmd_measure(args) -> int:
    cfg, fs = _measure_channel(args)
    if args.mode:
        cfg = replace(cfg, mode=Mode(args.mode))
    header = {}
    kind = args.kind

    noisy = cfg.noise.enabled and cfg.noise.white_density > 0
    if kind in ("psd", "noise", "sndr") and noisy and args.seed is None:
        raise ConfigError([Violation("seed", f"--seed is required: channel {cfg.channel} has noise enabled")])

    if kind == "sweep":
        report = frequency_sweep(cfg, _sweep_grid(args, _center(cfg), 1.0), fs)
    elif kind == "lna":
        report = frequency_sweep(cfg, _sweep_grid(args, 100.0, 2.0), fs, tap="lna")
    elif kind == "bank":
        bank = octave_bank(args.f_lo, args.n, args.q, octave=not args.identical,
                           template=cfg, fs=args.fs)
        report = bank_sweep(bank, points=args.points)
        header["config_hash"] = config_hash(bank)
    elif kind == "psd":
        fs = fs or default_fs([cfg])
        if args.input:
            x = load_signal(args.input, fs)[0]
        else:
            x = SampledSignal(fs, 0.0, np.zeros(int(round(args.duration * fs))))
        y = run_channel(cfg, x, seed=_children(args.seed)[cfg.channel].spawn(2)[0])
        psd = welch_psd(y, min(args.seg_len, len(y)), args.overlap)
        report = replace(psd, metadata={**psd.metadata, "config_hash": config_hash(cfg),
                                        "seed": args.seed, "channel": cfg.channel})
    elif kind == "noise":
        fs = fs or default_fs([cfg])
        rms, report = input_referred_noise(cfg, fs, args.duration, args.seed,
                                           band=(args.band_lo, args.band_hi))
        header["vrms"] = f"{rms:.12g}"
    elif kind == "sndr":
        f0 = args.f0 or _center(cfg)
        report = sndr_curve(cfg, args.amps if args.amps is not None else np.linspace(-60, 0, 61),
                            f0, fs, seed=args.seed)
        if cfg.saturation and noisy:
            dr = predicted_dynamic_range(cfg, report.metadata["fs"])
            header["predicted_dr_db"] = f"{dr:.12g}"
    elif kind == "rate":
        amps = args.amps if args.amps is not None else np.linspace(0.05, 0.4, 8)
        report, fit = rate_vs_amplitude(cfg, amps, args.tone, args.duration, fs)
        if not fit.defined:
            log.warning("no supra-threshold amplitudes: linear fit undefined")
    else:
        report = membrane_response(cfg, args.amplitude, args.tone, args.duration, fs)

    write_report(args.output, report, header)
    if args.plot:
        from src.plots import write_figure
        write_figure(report, args.plot)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------
def build_parser() -> CliParser:
    parser = CliParser(prog="afe-sim", description="Event-based analog front-end simulator.")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="encode an input signal into an event stream")
    enc.add_argument("--config", required=True)
    enc.add_argument("--input", required=True, help="WAV or t_s,value CSV")
    enc.add_argument("--output", required=True, help="event CSV")
    enc.add_argument("--seed", type=int)
    enc.add_argument("--mode", type=str.upper, choices=[m.value for m in Mode],
                     help="override every channel's encoding path")
    enc.add_argument("--timestamps", choices=["event", "delivery"], default="event",
                     help="write encoder timestamps or AER delivery timestamps")
    enc.set_defaults(func=cmd_encode)

    dec = sub.add_parser("decode", help="reconstruct a signal from an event CSV")
    dec.add_argument("--input", required=True, help="event CSV")
    dec.add_argument("--output", required=True, help="signal CSV")
    dec.add_argument("--config", help="take thresholds from this config")
    dec.add_argument("--mode", type=str.upper, choices=[s.value for s in Source])
    dec.add_argument("--channel", type=int, default=0)
    dec.add_argument("--delta-up", type=float)
    dec.add_argument("--delta-dn", type=float)
    dec.add_argument("--v0", type=float)
    dec.add_argument("--fs-out", type=float, default=48_000.0)
    dec.add_argument("--t-stop", type=float, help="end of the output grid (s)")
    dec.add_argument("--smoothing-hz", type=float, help="first-order smoothing corner (ADM)")
    dec.add_argument("--window", type=float, default=0.01, help="rate window in s (PFM)")
    dec.add_argument("--seed", type=int, help="accepted for symmetry; decoding is deterministic")
    dec.set_defaults(func=cmd_decode)

    mea = sub.add_parser("measure", help="run a characterization measurement")
    mea.add_argument("kind", choices=MEASURE_KINDS)
    mea.add_argument("--config")
    mea.add_argument("--output", required=True, help="report CSV")
    mea.add_argument("--input", help="input signal for psd (default: zero input)")
    mea.add_argument("--seed", type=int)
    mea.add_argument("--mode", type=str.upper, choices=[m.value for m in Mode])
    mea.add_argument("--channel", type=int)
    mea.add_argument("--fs", type=float, help="simulation rate (Hz)")
    mea.add_argument("--plot", help="also write an HTML figure")
    mea.add_argument("--f-start", type=float)
    mea.add_argument("--f-stop", type=float)
    mea.add_argument("--points", type=int, default=61)
    mea.add_argument("--f-lo", type=float, default=100.0)
    mea.add_argument("--n", type=int, default=11)
    mea.add_argument("--q", type=float, default=2.0)
    mea.add_argument("--identical", action="store_true", help="bank: all channels at f-lo")
    mea.add_argument("--seg-len", type=int, default=8192)
    mea.add_argument("--overlap", type=float, default=0.5)
    mea.add_argument("--duration", type=float, default=1.0)
    mea.add_argument("--band-lo", type=float, default=1.0)
    mea.add_argument("--band-hi", type=float, default=1000.0)
    mea.add_argument("--f0", type=float, help="sndr tone frequency")
    mea.add_argument("--amps", type=_range, help="lo:hi:n or a,b,c (V for rate, dBV for sndr)")
    mea.add_argument("--tone", type=float, default=100.0, help="tone Hz; 0 = DC (rate)")
    mea.add_argument("--amplitude", type=float, default=0.1, help="membrane drive (V)")
    mea.set_defaults(func=cmd_measure)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format=LOG_FORMAT, stream=sys.stderr)

    try:
        return args.func(args)
    except ConfigError as exc:
        for v in exc.violations:
            _fail("config", v)
        return EXIT_CONFIG
    except (AliasingError, UnstableFilterError, ProtocolError) as exc:
        _fail("config", exc)
        return EXIT_CONFIG
    except MeasurementError as exc:
        _fail("measure", exc)
        return EXIT_CONFIG
    except (SignalError, EventStreamError, AddressError, OSError) as exc:
        _fail("input", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
