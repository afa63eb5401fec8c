"""Shared radio channel: transmissions, receiver locking and capture.

Thresholds follow the interferer-minus-desired convention: the desired signal
is lost when ``rssi(IS) - rssi(DS) >= threshold[ds_sf][is_sf]``. A negative
diagonal therefore means two same-SF frames of similar power destroy each
other, while a large positive cross-SF entry means the interferer has to be
much louder than the desired signal.
"""

from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

from .codec import WireFrame
from .engine import PRIO_END, PRIO_START, Engine
from .phy import RadioParams, byte_boundaries, time_on_air

SFS = range(7, 13)

# SIR (dB) a desired signal needs over an interferer, rows = desired SF7..12,
# cols = interferer SF7..12 (published measurements).
SIR_THRESHOLDS_DB = (
    (6, -8, -9, -9, -9, -9),
    (-11, 6, -11, -12, -13, -13),
    (-15, -13, 6, -13, -14, -15),
    (-19, -18, -17, 6, -17, -18),
    (-22, -22, -21, -20, 6, -20),
    (-25, -25, -25, -24, -23, 6),
)

SF12_JAMMING_THRESHOLD_DB = 36.0


class MediumError(RuntimeError):
    pass


class MissingLinkEntry(MediumError, KeyError):
    pass


@dataclass(frozen=True)
class CaptureMatrix:
    rows: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        rows = tuple(tuple(float(v) for v in r) for r in self.rows)
        if len(rows) != 6 or any(len(r) != 6 for r in rows):
            raise ValueError("capture matrix must be 6x6 (SF7..SF12)")
        if any(v != v or v in (float("inf"), float("-inf")) for r in rows for v in r):
            raise ValueError("capture thresholds must be finite")
        object.__setattr__(self, "rows", rows)

    @classmethod
    def default(cls) -> CaptureMatrix:
        return cls(tuple(tuple(-v for v in r) for r in SIR_THRESHOLDS_DB))

    def threshold(self, ds_sf: int, is_sf: int) -> float:
        return self.rows[ds_sf - 7][is_sf - 7]

    def with_override(self, ds_sf: int, is_sf: int, db: float) -> CaptureMatrix:
        rows = [list(r) for r in self.rows]
        rows[ds_sf - 7][is_sf - 7] = db
        return CaptureMatrix(tuple(map(tuple, rows)))

    def kills(self, ds_sf: int, ds_rssi: float, is_sf: int, is_rssi: float) -> bool:
        return is_rssi - ds_rssi >= self.threshold(ds_sf, is_sf)


class LinkModel:
    """Static received power per (transmitter, receiver) pair."""

    def __init__(self, rssi: dict[str, dict[str, float]] | None = None) -> None:
        self._rssi: dict[tuple[str, str], float] = {}
        for src, row in (rssi or {}).items():
            for rx, value in row.items():
                self._rssi[(src, rx)] = float(value)

    def rssi(self, source_id: str, receiver_id: str) -> float:
        try:
            return self._rssi[(source_id, receiver_id)]
        except KeyError:
            raise MissingLinkEntry(f"no RSSI entry for {source_id} -> {receiver_id}") from None

    def set(self, source_id: str, receiver_id: str, value: float) -> None:
        self._rssi[(source_id, receiver_id)] = float(value)

    def has(self, source_id: str, receiver_id: str) -> bool:
        return (source_id, receiver_id) in self._rssi

    def as_dict(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for (src, rx), v in self._rssi.items():
            out.setdefault(src, {})[rx] = v
        return out


@dataclass(frozen=True, eq=False)
class Transmission:
    tx_id: int
    source_id: str
    channel_hz: int
    params: RadioParams
    wire: WireFrame
    start: int
    tx_power_dbm: float = 14.0
    kind: str = "data"  # data | jam | replay
    device_id: str | None = None
    replay_of: int | None = None

    def __post_init__(self) -> None:
        if self.start < 0:
            raise ValueError("start must be non-negative")

    @cached_property
    def airtime(self) -> int:
        return time_on_air(self.params, len(self.wire))

    @property
    def end(self) -> int:
        return self.start + self.airtime

    @cached_property
    def boundaries(self) -> list[int]:
        """Absolute byte boundaries; byte k occupies ``[b[k-1], b[k])``."""
        return [self.start + t for t in byte_boundaries(self.params, len(self.wire))]

    def overlaps(self, start: int, end: int) -> bool:
        return start < self.end and end > self.start


class Status(str, enum.Enum):
    DELIVERED = "Delivered"
    CRC_FAILED = "CrcFailed"
    NOT_HEARD = "NotHeard"


@dataclass(frozen=True)
class ReceptionOutcome:
    receiver_id: str
    tx: Transmission
    status: Status
    corrupted_from_byte: int | None = None
    culprits: tuple[int, ...] = ()


def first_overlapping_byte(desired: Transmission, start: int, end: int) -> int | None:
    """First 1-indexed byte of ``desired`` whose interval meets ``[start, end)``."""
    b = desired.boundaries
    k = max(1, bisect.bisect_right(b, start))
    if k >= len(b) or b[k - 1] >= end:
        return None
    return k


def resolve(desired: Transmission, interferers: Iterable[Transmission], receiver_id: str,
            links: LinkModel, capture: CaptureMatrix) -> ReceptionOutcome:
    ds_rssi = links.rssi(desired.source_id, receiver_id)
    first: int | None = None
    culprits = []
    for other in interferers:
        if other is desired or other.channel_hz != desired.channel_hz:
            continue
        if not capture.kills(desired.params.sf, ds_rssi, other.params.sf,
                             links.rssi(other.source_id, receiver_id)):
            continue
        k = first_overlapping_byte(desired, other.start, other.end)
        if k is None:
            continue
        culprits.append(other.tx_id)
        first = k if first is None else min(first, k)
    if first is None:
        return ReceptionOutcome(receiver_id, desired, Status.DELIVERED)
    return ReceptionOutcome(receiver_id, desired, Status.CRC_FAILED, first, tuple(culprits))


@dataclass
class Receiver:
    """A listening radio.

    Gateways (``multi_demod``) hold one lock per (channel, SF); a single-chip
    radio holds one lock in total. ``channels``/``sfs`` of ``None`` mean any.
    """

    node_id: str
    channels: frozenset[int] | None = None
    sfs: frozenset[int] | None = None
    multi_demod: bool = False
    on_lock: Callable[[Transmission], None] | None = None
    on_outcome: Callable[[ReceptionOutcome], None] | None = None
    listening: bool = True

    def tuned_to(self, tx: Transmission) -> bool:
        return ((self.channels is None or tx.channel_hz in self.channels)
                and (self.sfs is None or tx.params.sf in self.sfs))

    def slot(self, tx: Transmission):
        return (tx.channel_hz, tx.params.sf) if self.multi_demod else None


@dataclass
class _RxState:
    locked: dict = field(default_factory=dict)  # slot -> list[Transmission]


class Medium:
    """Schedules transmissions on an :class:`Engine` and resolves receptions.

    A receiver locks onto the first preamble it hears in a slot; later frames
    in that slot are interference only. Frames starting in the same
    microsecond as the locked one are locked together and resolved against
    each other.
    """

    def __init__(self, engine: Engine, links: LinkModel, capture: CaptureMatrix | None = None,
                 *, log_receptions: bool = True) -> None:
        self.engine = engine
        self.links = links
        self.capture = capture or CaptureMatrix.default()
        self.receivers: dict[str, Receiver] = {}
        self._rx_state: dict[str, _RxState] = {}
        self._transmitting: dict[str, int] = {}  # node -> tx_id on air
        self._history: dict[int, list[Transmission]] = {}
        self._longest = 0
        self._tuned: dict[int, dict[str, bool]] = {}  # tx_id -> receiver -> locked?
        self._next_id = 0
        self._sources: dict[int, str] = {}
        self.log_receptions = log_receptions
        self.end_hooks: list[Callable[[Transmission, list[ReceptionOutcome]], None]] = []

    # -- setup ---------------------------------------------------------
    def add_receiver(self, receiver: Receiver) -> Receiver:
        self.receivers[receiver.node_id] = receiver
        self._rx_state[receiver.node_id] = _RxState()
        return receiver

    def new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def is_transmitting(self, node_id: str) -> bool:
        return node_id in self._transmitting

    def is_locked(self, receiver_id: str, tx: Transmission) -> bool:
        rx = self.receivers[receiver_id]
        return tx in self._rx_state[receiver_id].locked.get(rx.slot(tx), ())

    # -- scheduling ----------------------------------------------------
    def source_of(self, tx_id: int) -> str | None:
        return self._sources.get(tx_id)

    def schedule(self, tx: Transmission) -> Transmission:
        self._sources[tx.tx_id] = tx.source_id
        self.engine.schedule(tx.start, self._on_start, tx, priority=PRIO_START)
        self.engine.schedule(tx.end, self._on_end, tx, priority=PRIO_END)
        return tx

    def _on_start(self, tx: Transmission) -> None:
        eng = self.engine
        eng.record("tx_start", node=tx.source_id, tx=tx.tx_id, channel=tx.channel_hz,
                   sf=tx.params.sf, len=len(tx.wire), tx_kind=tx.kind)
        self._history.setdefault(tx.channel_hz, []).append(tx)
        self._longest = max(self._longest, tx.airtime)
        self._transmitting[tx.source_id] = tx.tx_id
        if tx.source_id in self._rx_state:
            # half duplex: transmitting drops whatever the node was receiving
            self._rx_state[tx.source_id].locked.clear()

        tuned: dict[str, bool] = {}
        for rid, rx in self.receivers.items():
            if rid == tx.source_id or not rx.tuned_to(tx):
                continue
            locked = False
            if rx.listening and rid not in self._transmitting:
                slots = self._rx_state[rid].locked
                key = rx.slot(tx)
                held = slots.get(key)
                if not held:
                    slots[key] = [tx]
                    locked = True
                elif held[0].start == tx.start:
                    held.append(tx)
                    locked = True
            tuned[rid] = locked
            if locked and rx.on_lock is not None:
                rx.on_lock(tx)
        self._tuned[tx.tx_id] = tuned

    def _on_end(self, tx: Transmission) -> None:
        eng = self.engine
        if self._transmitting.get(tx.source_id) == tx.tx_id:
            del self._transmitting[tx.source_id]
        eng.record("tx_end", node=tx.source_id, tx=tx.tx_id, channel=tx.channel_hz)
        outcomes = []
        history = self._history.get(tx.channel_hz, [])
        for rid, was_locked in self._tuned.pop(tx.tx_id, {}).items():
            rx = self.receivers[rid]
            slots = self._rx_state[rid].locked
            key = rx.slot(tx)
            held = slots.get(key)
            if was_locked and held and tx in held:
                held.remove(tx)
                if not held:
                    del slots[key]
                outcome = resolve(tx, (o for o in history if o.overlaps(tx.start, tx.end)),
                                  rid, self.links, self.capture)
            else:
                outcome = ReceptionOutcome(rid, tx, Status.NOT_HEARD)
            outcomes.append(outcome)
            if self.log_receptions:
                eng.record("rx", node=rid, tx=tx.tx_id, src=tx.source_id, channel=tx.channel_hz,
                           sf=tx.params.sf, outcome=outcome.status.value,
                           byte=outcome.corrupted_from_byte)
            if rx.on_outcome is not None:
                rx.on_outcome(outcome)
        for hook in self.end_hooks:
            hook(tx, outcomes)
        self._prune(tx.channel_hz)

    def _prune(self, channel: int) -> None:
        horizon = self.engine.now - self._longest
        hist = self._history.get(channel)
        if hist and hist[0].end <= horizon:
            self._history[channel] = [t for t in hist if t.end > horizon]

    # -- queries -------------------------------------------------------
    def prefix_intact(self, receiver_id: str, tx: Transmission, nbytes: int) -> bool:
        """Whether bytes ``1..nbytes`` of ``tx`` have been clean at ``receiver_id`` so far."""
        now = self.engine.now
        ds_rssi = self.links.rssi(tx.source_id, receiver_id)
        for other in self._history.get(tx.channel_hz, []):
            if other is tx or other.start >= now or not other.overlaps(tx.start, tx.end):
                continue
            if not self.capture.kills(tx.params.sf, ds_rssi, other.params.sf,
                                      self.links.rssi(other.source_id, receiver_id)):
                continue
            k = first_overlapping_byte(tx, other.start, min(other.end, now))
            if k is not None and k <= nbytes:
                return False
        return True


def brute_force_resolve(desired: Transmission, interferers: Sequence[Transmission], receiver_id: str,
                        links: LinkModel, capture: CaptureMatrix) -> tuple[Status, int | None]:
    """Byte-by-byte reference used to cross-check :func:`resolve`."""
    ds = links.rssi(desired.source_id, receiver_id)
    b = desired.boundaries
    corrupted = []
    for k in range(1, len(b)):
        lo, hi = b[k - 1], b[k]
        for other in interferers:
            if other is desired or other.channel_hz != desired.channel_hz:
                continue
            diff = links.rssi(other.source_id, receiver_id) - ds
            if diff >= capture.threshold(desired.params.sf, other.params.sf) and other.start < hi and other.end > lo:
                corrupted.append(k)
                break
    if corrupted:
        return Status.CRC_FAILED, corrupted[0]
    return Status.DELIVERED, None
