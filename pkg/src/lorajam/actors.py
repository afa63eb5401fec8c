"""End devices, network server and the three adversaries.

Every actor is driven by callbacks from the engine or the medium; none of
them keeps its own clock.
"""

from __future__ import annotations

import bisect
import enum
import itertools
import math
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Sequence

from .codec import (
    CodecError,
    DecodedHeader,
    Frame,
    MType,
    SessionKeys,
    WireFrame,
    decode,
    encode,
    verify_mic,
)
from .medium import Medium, ReceptionOutcome, Receiver, Status, Transmission
from .phy import LatencyModel, RadioParams, read_point, symbol_time


def substream(seed: int | str, *names: Any) -> random.Random:
    """Independent, reproducible generator for one named consumer."""
    return random.Random(":".join([str(seed), *map(str, names)]))


# ------------------------------------------------------------------ traffic

@dataclass(frozen=True)
class ChannelPlan:
    entries: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("channel plan is empty")
        if any(w < 0 for _, w in self.entries) or sum(w for _, w in self.entries) <= 0:
            raise ValueError("channel weights must be non-negative with a positive sum")
        object.__setattr__(self, "entries", tuple((int(c), float(w)) for c, w in self.entries))
        object.__setattr__(self, "_cum", list(itertools.accumulate(w for _, w in self.entries)))

    @classmethod
    def single(cls, channel_hz: int) -> ChannelPlan:
        return cls(((channel_hz, 1.0),))

    @property
    def channels(self) -> list[int]:
        return [c for c, _ in self.entries]

    def sample(self, rng: random.Random) -> int:
        cum = self._cum
        i = bisect.bisect_right(cum, rng.random() * cum[-1])
        return self.entries[min(i, len(cum) - 1)][0]


# Uplink channel shares measured on a city gateway; the remainder is split
# over the other five EU868 channels.
URBAN_SHARES = {868_100_000: 0.171, 868_300_000: 0.187, 868_500_000: 0.155}
EU868_CHANNELS = (868_100_000, 868_300_000, 868_500_000, 867_100_000,
                  867_300_000, 867_500_000, 867_700_000, 867_900_000)


def urban_plan() -> ChannelPlan:
    rest = (1 - sum(URBAN_SHARES.values())) / 5
    return ChannelPlan(tuple((c, URBAN_SHARES.get(c, rest)) for c in EU868_CHANNELS))


@dataclass(frozen=True)
class Traffic:
    """When a device generates frames.

    ``periodic``: ``offset + i * period`` plus uniform jitter in
    ``[-jitter, +jitter]``; ``poisson``: exponential gaps of mean ``period``;
    ``explicit``: the listed times.
    """

    kind: str = "periodic"
    period_us: int = 60_000_000
    offset_us: int = 0
    jitter_us: int = 0
    times_us: tuple[int, ...] = ()
    count: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("periodic", "poisson", "explicit"):
            raise ValueError(f"unknown traffic kind {self.kind!r}")
        if self.kind != "explicit" and self.period_us <= 0:
            raise ValueError("period must be positive")
        if self.jitter_us < 0 or self.offset_us < 0:
            raise ValueError("offset and jitter must be non-negative")

    def times(self, rng: random.Random) -> Iterable[int]:
        if self.kind == "explicit":
            yield from sorted(self.times_us)[: self.count]
            return
        t = self.offset_us
        for i in itertools.count():
            if self.count is not None and i >= self.count:
                return
            if self.kind == "periodic":
                j = rng.randint(-self.jitter_us, self.jitter_us) if self.jitter_us else 0
                yield max(0, self.offset_us + i * self.period_us + j)
            else:
                t += round(rng.expovariate(1 / self.period_us))
                yield t


def off_time(airtime_us: int, duty_cycle: float) -> int:
    """Silence a device owes after ``airtime_us`` on air under ``duty_cycle``."""
    dc = Fraction(str(duty_cycle))
    return math.ceil(airtime_us * (1 / dc - 1))


class EndDevice:
    """Class A device sending unconfirmed uplinks."""

    def __init__(self, node_id: str, dev_addr: int, keys: SessionKeys, params: RadioParams,
                 channel_plan: ChannelPlan, traffic: Traffic, medium: Medium, rng: random.Random, *,
                 frame_len: int = 17, fport: int = 1, mhdr: int = 0x40, duty_cycle: float | None = 0.01,
                 tx_power_dbm: float = 14.0, fcnt_start: int = 0) -> None:
        if frame_len < 13 or frame_len > params.max_frame_size:
            raise ValueError(f"frame_len must be in 13..{params.max_frame_size}")
        if duty_cycle is not None and not 0 < duty_cycle <= 1:
            raise ValueError("duty_cycle must be in (0, 1]")
        self.node_id = node_id
        self.dev_addr = dev_addr
        self.keys = keys
        self.params = params
        self.channel_plan = channel_plan
        self.traffic = traffic
        self.medium = medium
        self.rng = rng
        self.frame_len = frame_len
        self.fport = fport
        self.mhdr = mhdr
        self.duty_cycle = duty_cycle
        self.tx_power_dbm = tx_power_dbm
        self.fcnt = fcnt_start
        self.next_allowed = 0
        self.sent: list[Transmission] = []
        self.deferrals = 0
        self._due = iter(traffic.times(rng))

    def start(self) -> None:
        self._arm()

    def _arm(self) -> None:
        due = next(self._due, None)
        if due is not None:
            self.medium.engine.schedule(max(due, self.medium.engine.now), self._fire)

    def _fire(self) -> None:
        eng = self.medium.engine
        if eng.now < self.next_allowed or self.medium.is_transmitting(self.node_id):
            self.deferrals += 1
            until = max(self.next_allowed, eng.now + 1)
            eng.record("DutyCycleDeferral", node=self.node_id, until=until)
            eng.schedule(until, self._fire)
            return
        self.transmit_now()
        self._arm()

    def build_frame(self) -> WireFrame:
        plaintext = bytes(self.rng.getrandbits(8) for _ in range(self.frame_len - 13))
        frame = Frame(dev_addr=self.dev_addr, fcnt=self.fcnt % 2**16, mhdr=self.mhdr, fport=self.fport)
        return encode(frame, self.keys, plaintext, max_len=self.params.max_frame_size)

    def transmit_now(self) -> Transmission:
        eng = self.medium.engine
        tx = Transmission(self.medium.new_id(), self.node_id, self.channel_plan.sample(self.rng),
                          self.params, self.build_frame(), eng.now, self.tx_power_dbm,
                          kind="data", device_id=self.node_id)
        self.fcnt += 1
        if self.duty_cycle is not None:
            self.next_allowed = tx.end + off_time(tx.airtime, self.duty_cycle)
        self.sent.append(tx)
        self.medium.schedule(tx)
        return tx


# ------------------------------------------------------------------ server

class Verdict(str, enum.Enum):
    ACCEPT = "Accept"
    REJECT_CRC = "RejectCrc"
    REJECT_MIC = "RejectMic"
    REJECT_REPLAY = "RejectReplay"


@dataclass(frozen=True)
class DeliveryRecord:
    t_us: int
    dev_addr: int
    status: str
    channel_hz: int = 0
    sf: int = 0
    wire_len: int = 0


class NetworkServer:
    """Accepts a frame iff its CRC held, its MIC verifies and its counter is new."""

    def __init__(self, keys: dict[int, SessionKeys] | None = None) -> None:
        self.keys: dict[int, SessionKeys] = dict(keys or {})
        self.last_fcnt: dict[int, int] = {}
        self.tally: Counter[Verdict] = Counter()
        self.records: list[DeliveryRecord] = []

    def register(self, dev_addr: int, keys: SessionKeys) -> None:
        self.keys[dev_addr] = keys

    def receive(self, wire: WireFrame, crc_ok: bool | None = None, *, t_us: int = 0,
                channel_hz: int = 0, sf: int = 0) -> Verdict:
        crc_ok = wire.crc_ok if crc_ok is None else crc_ok
        dev_addr = None
        if not crc_ok:
            verdict = Verdict.REJECT_CRC
        else:
            try:
                h = decode(wire)
                dev_addr = h.dev_addr
            except CodecError:
                h = None
            keys = self.keys.get(dev_addr) if h is not None else None
            if keys is None or not verify_mic(wire, keys):
                verdict = Verdict.REJECT_MIC
            elif h.fcnt <= self.last_fcnt.get(dev_addr, -1):
                verdict = Verdict.REJECT_REPLAY
            else:
                verdict = Verdict.ACCEPT
                self.last_fcnt[dev_addr] = h.fcnt
        self.tally[verdict] += 1
        if dev_addr is None and len(wire) >= 5:
            dev_addr = decode(wire, partial=True).dev_addr
        self.records.append(DeliveryRecord(t_us, dev_addr if dev_addr is not None else -1,
                                           verdict.value, channel_hz, sf, len(wire)))
        return verdict

    def receive_outcome(self, outcome: ReceptionOutcome) -> Verdict:
        tx = outcome.tx
        return self.receive(tx.wire, outcome.status is Status.DELIVERED, t_us=tx.end,
                            channel_hz=tx.channel_hz, sf=tx.params.sf)


# ------------------------------------------------------------------ policies

class PolicyError(ValueError):
    pass


class PolicyTooDeep(PolicyError):
    """The predicate reads header bytes beyond the jammer's read depth."""


_MTYPE_NAMES = {
    "JoinRequest": MType.JOIN_REQUEST, "JoinAccept": MType.JOIN_ACCEPT,
    "UnconfirmedDataUp": MType.UNCONFIRMED_UP, "UnconfirmedDataDown": MType.UNCONFIRMED_DOWN,
    "ConfirmedDataUp": MType.CONFIRMED_UP, "ConfirmedDataDown": MType.CONFIRMED_DOWN,
    "RFU": MType.RFU, "Proprietary": MType.PROPRIETARY,
}
_MTYPE_LABEL = {v: k for k, v in _MTYPE_NAMES.items()}


@dataclass(frozen=True)
class JamPolicy:
    """Predicate over the clear-text prefix of a frame.

    ``op`` is one of ``dev_addr``, ``mtype``, ``fcnt``, ``and``, ``or``,
    ``not``, ``always``, ``never``.
    """

    op: str
    values: tuple = ()
    children: tuple[JamPolicy, ...] = ()

    @property
    def needed_bytes(self) -> int:
        own = {"dev_addr": 5, "mtype": 1, "fcnt": 8}.get(self.op, 0)
        return max([own, *(c.needed_bytes for c in self.children)])

    def matches(self, h: DecodedHeader) -> bool:
        op = self.op
        if op == "always":
            return True
        if op == "never":
            return False
        if op == "dev_addr":
            return h.dev_addr in self.values
        if op == "mtype":
            return h.mtype in self.values
        if op == "fcnt":
            lo, hi = self.values
            return h.fcnt is not None and lo <= h.fcnt <= hi
        if op == "and":
            return all(c.matches(h) for c in self.children)
        if op == "or":
            return any(c.matches(h) for c in self.children)
        if op == "not":
            return not self.children[0].matches(h)
        raise PolicyError(f"unknown policy op {op!r}")

    def to_obj(self) -> Any:
        if self.op in ("always", "never"):
            return self.op
        if self.op == "dev_addr":
            return {"dev_addr": [f"{a:08X}" for a in self.values]}
        if self.op == "mtype":
            return {"mtype": [_MTYPE_LABEL[MType(v)] for v in self.values]}
        if self.op == "fcnt":
            return {"fcnt": list(self.values)}
        if self.op == "not":
            return {"not": self.children[0].to_obj()}
        return {self.op: [c.to_obj() for c in self.children]}


def _addr(v: Any) -> int:
    if isinstance(v, int):
        return v
    return int(str(v), 16)


def parse_policy(obj: Any) -> JamPolicy:
    if obj in ("always", "never"):
        return JamPolicy(obj)
    if not isinstance(obj, dict) or len(obj) != 1:
        raise PolicyError(f"a policy is 'always', 'never' or a one-key mapping, got {obj!r}")
    (op, arg), = obj.items()
    if op == "dev_addr":
        return JamPolicy(op, tuple(_addr(a) for a in _as_list(arg)))
    if op == "mtype":
        out = []
        for m in _as_list(arg):
            if isinstance(m, int):
                out.append(MType(m))
            elif m in _MTYPE_NAMES:
                out.append(_MTYPE_NAMES[m])
            else:
                raise PolicyError(f"unknown message type {m!r}")
        return JamPolicy(op, tuple(int(m) for m in out))
    if op == "fcnt":
        if not isinstance(arg, list) or len(arg) != 2:
            raise PolicyError("fcnt takes [low, high]")
        return JamPolicy(op, (int(arg[0]), int(arg[1])))
    if op in ("and", "or"):
        return JamPolicy(op, children=tuple(parse_policy(c) for c in _as_list(arg)))
    if op == "not":
        return JamPolicy(op, children=(parse_policy(arg),))
    raise PolicyError(f"unknown policy op {op!r}")


def _as_list(v: Any) -> list:
    return v if isinstance(v, list) else [v]


def compile_policy(obj: Any, read_bytes: int) -> JamPolicy:
    policy = obj if isinstance(obj, JamPolicy) else parse_policy(obj)
    if policy.needed_bytes > read_bytes:
        raise PolicyTooDeep(f"policy needs {policy.needed_bytes} bytes, jammer reads {read_bytes}")
    return policy


# ------------------------------------------------------------------ adversaries

@dataclass(frozen=True)
class ActiveWindow:
    start_us: int = 0
    end_us: int | None = None

    def __contains__(self, t: int) -> bool:
        return t >= self.start_us and (self.end_us is None or t < self.end_us)


class _Adversary:
    def __init__(self, node_id: str, medium: Medium, rng: random.Random, *,
                 channels: Sequence[int] | None = None, sfs: Sequence[int] | None = None,
                 jam_len: int = 10, miss_probability: float = 0.0, tx_power_dbm: float = 14.0,
                 active: ActiveWindow = ActiveWindow(), listen_id: str | None = None) -> None:
        if not 0 <= miss_probability <= 1:
            raise ValueError("miss_probability must be in [0, 1]")
        self.node_id = node_id
        self.medium = medium
        self.rng = rng
        self.jam_len = jam_len
        self.miss_probability = miss_probability
        self.tx_power_dbm = tx_power_dbm
        self.active = active
        self.jams: list[Transmission] = []
        self.missed = 0
        self.listen_id = listen_id or node_id
        medium.add_receiver(Receiver(
            self.listen_id,
            channels=frozenset(channels) if channels is not None else None,
            sfs=frozenset(sfs) if sfs is not None else None,
            multi_demod=True, on_lock=self._heard, on_outcome=self._outcome))

    @property
    def engine(self):
        return self.medium.engine

    def _heard(self, tx: Transmission) -> None:
        if tx.source_id in (self.node_id, self.listen_id) or tx.kind == "jam":
            return
        if self.engine.now not in self.active:
            return
        if self.miss_probability and self.rng.random() < self.miss_probability:
            self.missed += 1
            self.engine.record("detect_miss", node=self.listen_id, tx=tx.tx_id)
            return
        self.on_preamble(tx)

    def on_preamble(self, tx: Transmission) -> None:
        raise NotImplementedError

    def _outcome(self, outcome: ReceptionOutcome) -> None:
        pass

    def jam(self, victim: Transmission, at: int | None = None) -> Transmission | None:
        """Put a jam burst on the victim's channel at ``at`` (default: now)."""
        start = self.engine.now if at is None else at
        if self.medium.is_transmitting(self.node_id) or any(j.end > start for j in self.jams[-1:]):
            self.engine.record("jam_skipped", node=self.node_id, victim=victim.tx_id)
            return None
        params = victim.params
        length = min(self.jam_len, params.max_frame_size)
        burst = Transmission(self.medium.new_id(), self.node_id, victim.channel_hz, params,
                             WireFrame(bytes(self.rng.getrandbits(8) for _ in range(length))),
                             start, self.tx_power_dbm, kind="jam")
        self.jams.append(burst)
        self.medium.schedule(burst)
        return burst


class TriggeredJammer(_Adversary):
    """Jams whatever it hears, ``detect_delay`` after the preamble starts.

    With ``detect_delay`` left as ``None`` the delay is one symbol of the
    detected frame.
    """

    def __init__(self, node_id: str, medium: Medium, rng: random.Random, *,
                 detect_delay_us: int | None = None, **kw) -> None:
        super().__init__(node_id, medium, rng, **kw)
        self.detect_delay_us = detect_delay_us

    def on_preamble(self, tx: Transmission) -> None:
        delay = symbol_time(tx.params) if self.detect_delay_us is None else self.detect_delay_us
        self.engine.schedule(self.engine.now + delay, self.jam, tx)


class SelectiveJammer(_Adversary):
    """Reads the first ``read_bytes`` of each frame and jams those the policy matches.

    The decision happens once the prefix is in the FIFO plus
    ``decision_delay_us`` for the MCU to poll and evaluate it.
    """

    def __init__(self, node_id: str, medium: Medium, rng: random.Random, policy: Any, *,
                 read_bytes: int = 5, decision_delay_us: int = 7_000, rearm_us: int = 0, **kw) -> None:
        super().__init__(node_id, medium, rng, **kw)
        self.read_bytes = read_bytes
        self.policy = compile_policy(policy, read_bytes)
        self.decision_delay_us = decision_delay_us
        self.rearm_us = rearm_us
        self.decisions = 0

    def on_preamble(self, tx: Transmission) -> None:
        n = min(self.read_bytes, len(tx.wire))
        at = tx.start + read_point(tx.params, n) + self.decision_delay_us
        self.engine.schedule(at, self._decide, tx, n)

    def _matches(self, tx: Transmission, n: int) -> bool:
        if not self.medium.is_locked(self.listen_id, tx):
            return False
        if not self.medium.prefix_intact(self.listen_id, tx, n):
            return False
        return self.policy.matches(decode(tx.wire.data[:n], partial=True))

    def _decide(self, tx: Transmission, n: int) -> None:
        self.decisions += 1
        hit = self._matches(tx, n)
        self.engine.record("jam_decision", node=self.node_id, tx=tx.tx_id, match=hit)
        if not hit:
            return
        if self.jams and self.engine.now < self.jams[-1].end + self.rearm_us:
            self.engine.record("jam_skipped", node=self.node_id, victim=tx.tx_id)
            return
        self.jam(tx)


@dataclass
class ReplayStore:
    """Captured frames in arrival order, bytes untouched."""

    frames: deque = field(default_factory=deque)  # (dev_addr, Transmission)

    def put(self, dev_addr: int, tx: Transmission) -> None:
        self.frames.append((dev_addr, tx))

    def pop(self) -> tuple[int, Transmission] | None:
        return self.frames.popleft() if self.frames else None

    def for_device(self, dev_addr: int) -> list[Transmission]:
        return [t for a, t in self.frames if a == dev_addr]

    def __len__(self) -> int:
        return len(self.frames)


class SnifferJammedItself(RuntimeError):
    """The wormhole's own jammer corrupted a frame at its sniffer."""


class Wormhole(_Adversary):
    """Sniffer near the victim, jammer near the gateway, joined by a fast link.

    The sniffer decides on the prefix, signals the jammer (arriving after a
    sampled link latency) and keeps listening so it can store the clean frame.
    Stored frames are later replayed from the jammer node, spaced by the
    victim's mean observed inter-arrival time unless ``replay_interval_us`` is
    given.
    """

    def __init__(self, sniffer_id: str, jammer_id: str, medium: Medium, rng: random.Random, policy: Any, *,
                 latency: LatencyModel = LatencyModel(100_830, 1_700), read_bytes: int = 5,
                 decision_delay_us: int = 0, replay: bool = False, replay_start_us: int | None = None,
                 replay_interval_us: int | None = None, strict_sniffer: bool = False, **kw) -> None:
        if sniffer_id == jammer_id:
            raise ValueError("sniffer and jammer must be distinct nodes")
        super().__init__(jammer_id, medium, rng, listen_id=sniffer_id, **kw)
        self.sniffer_id = sniffer_id
        self.policy = compile_policy(policy, read_bytes)
        self.latency = latency
        self.read_bytes = read_bytes
        self.decision_delay_us = decision_delay_us
        self.store = ReplayStore()
        self.replay = replay
        self.replay_start_us = replay_start_us
        self.replay_interval_us = replay_interval_us
        self.strict_sniffer = strict_sniffer
        self.replays: list[Transmission] = []
        self.self_jammed = 0
        self._targeted: set[int] = set()
        self._arrivals: list[int] = []
        self._replay_armed = False

    def on_preamble(self, tx: Transmission) -> None:
        n = min(self.read_bytes, len(tx.wire))
        at = tx.start + read_point(tx.params, n) + self.decision_delay_us
        self.engine.schedule(at, self._decide, tx, n)

    def _decide(self, tx: Transmission, n: int) -> None:
        ok = (self.medium.is_locked(self.sniffer_id, tx)
              and self.medium.prefix_intact(self.sniffer_id, tx, n)
              and self.policy.matches(decode(tx.wire.data[:n], partial=True)))
        self.engine.record("jam_decision", node=self.sniffer_id, tx=tx.tx_id, match=ok)
        if not ok:
            return
        self._targeted.add(tx.tx_id)
        self._arrivals.append(tx.start)
        delay = self.latency.sample(self.rng)
        self.engine.schedule(self.engine.now + delay, self.jam, tx)

    def _outcome(self, outcome: ReceptionOutcome) -> None:
        tx = outcome.tx
        if tx.tx_id not in self._targeted:
            return
        self._targeted.discard(tx.tx_id)
        own = {j.tx_id for j in self.jams} | {r.tx_id for r in self.replays}
        if outcome.status is Status.CRC_FAILED and own.intersection(outcome.culprits):
            self.self_jammed += 1
            self.engine.record("SnifferJammedItself", node=self.sniffer_id, tx=tx.tx_id)
            if self.strict_sniffer:
                raise SnifferJammedItself(f"jammer {self.node_id} corrupted frame {tx.tx_id} at the sniffer")
            return
        if outcome.status is not Status.DELIVERED:
            return
        self.store.put(decode(tx.wire).dev_addr, tx)
        self.engine.record("captured", node=self.sniffer_id, tx=tx.tx_id)
        if self.replay and not self._replay_armed:
            self._replay_armed = True
            first = self.replay_start_us
            if first is None:
                first = self.engine.now + (self._interval() or 0)
            self.engine.schedule(max(first, self.engine.now), self._replay_next)

    def _interval(self) -> int | None:
        if self.replay_interval_us is not None:
            return self.replay_interval_us
        a = self._arrivals
        if len(a) < 2:
            return None
        return (a[-1] - a[0]) // (len(a) - 1)

    def _replay_next(self) -> None:
        interval = self._interval() or 1_000_000
        if self.medium.is_transmitting(self.node_id):
            self.engine.schedule(self.engine.now + 1_000, self._replay_next)
            return
        item = self.store.pop()
        if item is not None:
            _, orig = item
            tx = Transmission(self.medium.new_id(), self.node_id, orig.channel_hz, orig.params,
                              WireFrame(orig.wire.data), self.engine.now, self.tx_power_dbm,
                              kind="replay", device_id=orig.device_id, replay_of=orig.tx_id)
            self.replays.append(tx)
            self.medium.schedule(tx)
            self.engine.record("replay", node=self.node_id, tx=tx.tx_id, of=orig.tx_id)
        self.engine.schedule(self.engine.now + interval, self._replay_next)

    def jam_reaches_sniffer(self, victim: Transmission) -> bool:
        """Static check: would a jam burst clear capture against ``victim`` at the sniffer?"""
        links = self.medium.links
        if not links.has(self.node_id, self.sniffer_id):
            return False
        sf = victim.params.sf
        return self.medium.capture.kills(sf, links.rssi(victim.source_id, self.sniffer_id),
                                         sf, links.rssi(self.node_id, self.sniffer_id))


__all__ = [
    "ActiveWindow", "ChannelPlan", "DeliveryRecord", "EndDevice", "JamPolicy", "NetworkServer",
    "PolicyError", "PolicyTooDeep", "ReplayStore", "SelectiveJammer", "SnifferJammedItself",
    "Traffic", "TriggeredJammer", "Verdict", "Wormhole", "compile_policy", "urban_plan",
    "off_time", "parse_policy", "substream",
]
