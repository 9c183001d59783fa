"""
aer.py — Address-event output links.

One link per encoding path (ADM and PFM are fully independent). Each link:
  1. merges the 16 per-channel event queues with a fixed-priority arbiter
  2. packs every event into an address word
  3. ships words one at a time over a four-phase REQ/ACK handshake,
     simulated as a discrete-event model (simpy) between a sender and a
     receiver process
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import simpy

from src.core import (
    AddressError, Event, EventStreamError, N_CHANNELS, Polarity, ProtocolError,
    Source,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Address words
# ---------------------------------------------------------------------------
ADM_WORD_LIMIT = 2 * N_CHANNELS     # (channel << 1) | polarity, 5 bits
PFM_WORD_LIMIT = N_CHANNELS         # channel, 4 bits


def encode_address(e: Event) -> int:
    """Pack an event into its link's address word."""
    if e.source is Source.ADM:
        return (e.channel << 1) | (1 if e.polarity is Polarity.UP else 0)
    return e.channel


def decode_address(word: int, source: Source) -> tuple[int, Polarity]:
    """Unpack an address word into (channel, polarity)."""
    limit = ADM_WORD_LIMIT if source is Source.ADM else PFM_WORD_LIMIT
    if not isinstance(word, (int, np.integer)) or not 0 <= word < limit:
        raise AddressError(f"{source.value} address word {word!r} outside 0..{limit - 1}")
    if source is Source.ADM:
        return int(word) >> 1, Polarity.UP if word & 1 else Polarity.DN
    return int(word), Polarity.NA


# ---------------------------------------------------------------------------
# Arbitration
# ---------------------------------------------------------------------------
def _check_ordered(seq: Sequence[Event], index: int) -> None:
    for k in range(1, len(seq)):
        if seq[k].t_ns < seq[k - 1].t_ns:
            raise EventStreamError(
                f"channel queue {index} is not time-ordered at position {k} "
                f"({seq[k - 1].t_ns} ns > {seq[k].t_ns} ns)")


def arbitrate(per_channel_events: Sequence[Sequence[Event]]) -> list[Event]:
    """
    Merge per-channel queues into one stream ordered by (t_ns, channel).

    Ties on timestamp go to the lower channel index; relative order within
    a channel is preserved.
    """
    if len(per_channel_events) > N_CHANNELS:
        raise EventStreamError(f"at most {N_CHANNELS} channel queues, got {len(per_channel_events)}")
    for idx, seq in enumerate(per_channel_events):
        _check_ordered(seq, idx)
        for e in seq:
            if e.channel != idx:
                raise EventStreamError(f"event for channel {e.channel} queued on channel {idx}")
    return list(heapq.merge(*per_channel_events, key=lambda e: (e.t_ns, e.channel)))


# ---------------------------------------------------------------------------
# Four-phase handshake
# ---------------------------------------------------------------------------
class Phase(str, Enum):
    IDLE = "IDLE"
    REQ_HIGH = "REQ_HIGH"
    ACK_HIGH = "ACK_HIGH"
    REQ_LOW_WAIT = "REQ_LOW_WAIT"


NEXT_PHASE = {
    Phase.IDLE: Phase.REQ_HIGH,
    Phase.REQ_HIGH: Phase.ACK_HIGH,
    Phase.ACK_HIGH: Phase.REQ_LOW_WAIT,
    Phase.REQ_LOW_WAIT: Phase.IDLE,
}


@dataclass(frozen=True)
class HandshakeDelays:
    """Per-phase propagation delays in ns; jitter adds U[0, jitter_ns] per phase."""

    req_rise_ns: int = 10
    ack_rise_ns: int = 10
    req_fall_ns: int = 10
    ack_fall_ns: int = 10
    jitter_ns: int = 0

    def __post_init__(self):
        base = (self.req_rise_ns, self.ack_rise_ns, self.req_fall_ns, self.ack_fall_ns)
        if any(int(d) != d or d < 0 for d in base + (self.jitter_ns,)):
            raise ProtocolError("handshake delays must be non-negative integer nanoseconds")
        if sum(base) < 1:
            raise ProtocolError("handshake cycle must take at least 1 ns")

    @property
    def base(self) -> tuple[int, int, int, int]:
        return (self.req_rise_ns, self.ack_rise_ns, self.req_fall_ns, self.ack_fall_ns)

    @property
    def total_ns(self) -> int:
        return sum(self.base)


@dataclass
class LinkState:
    """Handshake phase of one link and the word currently on the bus."""

    delays: HandshakeDelays = field(default_factory=HandshakeDelays)
    phase: Phase = Phase.IDLE
    word: int | None = None

    def advance(self, to: Phase) -> None:
        if NEXT_PHASE[self.phase] is not to:
            raise ProtocolError(f"illegal transition {self.phase.value} -> {to.value}")
        self.phase = to
        if to is Phase.IDLE:
            self.word = None


@dataclass(frozen=True)
class Transition:
    t_ns: int
    src: Phase
    dst: Phase
    word: int


@dataclass(frozen=True)
class Delivery:
    event: Event
    word: int
    t_delivered_ns: int


class AerLink:
    """
    Discrete-event model of one link: a sender drives REQ, a receiver
    drives ACK, each edge after its (jittered) propagation delay.
    """

    def __init__(self, delays: HandshakeDelays | None = None, seed=None):
        self.delays = delays or HandshakeDelays()
        self.state = LinkState(self.delays)
        self._rng = np.random.default_rng(seed)
        self.env: simpy.Environment | None = None
        self.trace: list[Transition] = []
        self.deliveries: list[Delivery] = []

    def _record(self, dst: Phase) -> None:
        src, word = self.state.phase, self.state.word
        self.state.advance(dst)
        self.trace.append(Transition(int(self.env.now), src, dst, word))

    def _sender(self, events, words, jitter, req, ack):
        env, d = self.env, self.delays
        for k, e in enumerate(events):
            if env.now < e.t_ns:
                yield env.timeout(e.t_ns - env.now)
            self.state.word = words[k]
            yield env.timeout(d.req_rise_ns + jitter[k][0])
            self._record(Phase.REQ_HIGH)
            yield req.put(words[k])
            yield ack.get()
            yield env.timeout(d.req_fall_ns + jitter[k][2])
            self._record(Phase.REQ_LOW_WAIT)
            yield req.put(None)
            yield ack.get()

    def _receiver(self, events, jitter, req, ack):
        env, d = self.env, self.delays
        for k, e in enumerate(events):
            word = yield req.get()
            yield env.timeout(d.ack_rise_ns + jitter[k][1])
            self._record(Phase.ACK_HIGH)
            yield ack.put(True)
            yield req.get()
            yield env.timeout(d.ack_fall_ns + jitter[k][3])
            self._record(Phase.IDLE)
            self.deliveries.append(Delivery(e, word, int(env.now)))
            yield ack.put(False)

    def run(self, events: Sequence[Event]) -> tuple[list[Delivery], list[Transition]]:
        events = list(events)
        _check_ordered(events, 0)
        self.env = simpy.Environment()
        self.state = LinkState(self.delays)
        self.trace, self.deliveries = [], []
        if not events:
            return [], []

        n = len(events)
        if self.delays.jitter_ns > 0:
            jitter = self._rng.integers(0, self.delays.jitter_ns + 1, size=(n, 4)).tolist()
        else:
            jitter = [(0, 0, 0, 0)] * n
        words = [encode_address(e) for e in events]

        req = simpy.Store(self.env)
        ack = simpy.Store(self.env)
        self.env.process(self._sender(events, words, jitter, req, ack))
        self.env.process(self._receiver(events, jitter, req, ack))
        self.env.run()

        if len(self.deliveries) != n:
            raise ProtocolError(f"link stalled: {len(self.deliveries)} of {n} events delivered")
        log.debug("link delivered %d events, last at %d ns", n, self.deliveries[-1].t_delivered_ns)
        return self.deliveries, self.trace


def handshake_run(events: Sequence[Event], delays: HandshakeDelays | None = None,
                  seed=None) -> tuple[list[Delivery], list[Transition]]:
    """
    Ship a time-ordered stream over one four-phase link.

    Returns the deliveries (stamped when ACK falls and the link is idle
    again) and the log of phase transitions. Every event is delivered
    exactly once, in submission order.
    """
    return AerLink(delays, seed).run(events)


def is_phase_legal(trace: Sequence[Transition]) -> bool:
    """True iff the trace is a whole number of IDLE→…→IDLE cycles."""
    if len(trace) % 4:
        return False
    phase = Phase.IDLE
    for tr in trace:
        if tr.src is not phase or NEXT_PHASE[phase] is not tr.dst:
            return False
        phase = tr.dst
    return phase is Phase.IDLE
