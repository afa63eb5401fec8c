"""Gateway traffic logs: a neutral JSON-lines format, summary statistics and
a generator that produces logs with prescribed statistics.

One record per line::

    {"t_us": 1200, "channel_hz": 868100000, "sf": 7, "wire_len": 19,
     "dev_addr": "26011F2A", "status": "Accept"}

Exports from real gateways can be adapted by mapping their columns onto
these six fields (see :func:`record_from_obj`).
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

from .actors import DeliveryRecord
from .codec import HEADER_OVERHEAD
from .detect import EmptyLog


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class TraceRecord:
    t_us: int
    channel_hz: int
    sf: int
    wire_len: int
    dev_addr: int
    status: str = "Accept"

    def to_obj(self) -> dict:
        return {"t_us": self.t_us, "channel_hz": self.channel_hz, "sf": self.sf, "wire_len": self.wire_len,
                "dev_addr": f"{self.dev_addr:08X}", "status": self.status}

    def delivery(self) -> DeliveryRecord:
        return DeliveryRecord(self.t_us, self.dev_addr, self.status, self.channel_hz, self.sf, self.wire_len)


def record_from_obj(obj: Mapping, where: str = "") -> TraceRecord:
    try:
        addr = obj["dev_addr"]
        return TraceRecord(
            t_us=int(obj["t_us"]),
            channel_hz=int(obj["channel_hz"]),
            sf=int(obj["sf"]),
            wire_len=int(obj["wire_len"]),
            dev_addr=addr if isinstance(addr, int) else int(addr, 16),
            status=str(obj.get("status", "Accept")),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise TraceError(f"{where}bad trace record: {e}") from None


def read_trace(lines: Iterable[str], source: str = "<trace>") -> list[TraceRecord]:
    out = []
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise TraceError(f"{source}:{n}: {e.msg}") from None
        out.append(record_from_obj(obj, f"{source}:{n}: "))
    return out


def load_trace(path) -> list[TraceRecord]:
    with open(path, encoding="utf-8") as fh:
        return read_trace(fh, str(path))


def dump_trace(records: Iterable[TraceRecord]) -> Iterator[str]:
    for r in records:
        yield json.dumps(r.to_obj(), separators=(",", ":"))


@dataclass(frozen=True)
class TrafficStats:
    message_count: int
    distinct_devices: int
    channel_histogram: Mapping[int, float]
    mean_wire_length: float
    mean_payload_length: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean_payload_length", self.mean_wire_length - HEADER_OVERHEAD)

    def to_obj(self) -> dict:
        return {"message_count": self.message_count, "distinct_devices": self.distinct_devices,
                "channel_histogram": {str(c): f for c, f in sorted(self.channel_histogram.items())},
                "mean_wire_length": self.mean_wire_length, "mean_payload_length": self.mean_payload_length}


def analyze(log: Iterable[TraceRecord]) -> TrafficStats:
    records = list(log)
    if not records:
        raise EmptyLog("trace is empty")
    n = len(records)
    counts = Counter(r.channel_hz for r in records)
    return TrafficStats(
        message_count=n,
        distinct_devices=len({r.dev_addr for r in records}),
        channel_histogram={c: counts[c] / n for c in sorted(counts)},
        mean_wire_length=sum(r.wire_len for r in records) / n,
    )


def _apportion(shares: Mapping, n: int) -> dict:
    """Largest-remainder split of ``n`` items by ``shares``."""
    total = sum(shares.values())
    exact = {k: n * v / total for k, v in shares.items()}
    out = {k: int(x) for k, x in exact.items()}
    for k in sorted(exact, key=lambda k: (out[k] - exact[k], str(k)))[: n - sum(out.values())]:
        out[k] += 1
    return out


def generate(stats: TrafficStats, n: int, seed: int, *, sf: int = 7, mean_interval_us: int = 1_000_000,
             status: str = "Accept") -> list[TraceRecord]:
    """Synthetic log whose channel shares and mean length match ``stats``.

    Channels and lengths are apportioned exactly, then shuffled; device
    addresses cycle over ``stats.distinct_devices`` values so each appears.
    """
    if n < 1:
        raise TraceError("n must be >= 1")
    rng = random.Random(f"{seed}:trace")
    channels = [c for c, k in _apportion(stats.channel_histogram, n).items() for _ in range(k)]
    lo = int(stats.mean_wire_length)
    frac = stats.mean_wire_length - lo
    lengths = [lo + 1] * round(n * frac) + [lo] * (n - round(n * frac))
    rng.shuffle(channels)
    rng.shuffle(lengths)
    devices = max(1, stats.distinct_devices)
    base = rng.getrandbits(24) << 8
    t = 0
    out = []
    for i in range(n):
        t += max(1, round(rng.expovariate(1 / mean_interval_us)))
        out.append(TraceRecord(t, channels[i], sf, lengths[i], (base + i % devices) & 0xFFFFFFFF, status))
    return out


def urban_stats(message_count: int = 1383, distinct_devices: int = 86, mean_wire_length: float = 18.6) -> TrafficStats:
    from .actors import urban_plan

    hist = {c: w for c, w in urban_plan().entries}
    return TrafficStats(message_count, distinct_devices, hist, mean_wire_length)
