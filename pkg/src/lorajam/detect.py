"""Traffic-profiling jamming detectors over server delivery logs.

Both detectors look at the gaps between accepted frames of each device.
``detect_known`` is told the sending period; ``detect_learned`` estimates a
gap threshold from a warm-up stretch of the log. Each has a streaming form
(``*_step``) that threads an explicit state value through one record at a
time, and a batch form that folds it over a whole log.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .actors import DeliveryRecord

ACCEPT = "Accept"
REJECT_CRC = "RejectCrc"


class DetectError(ValueError):
    pass


class EmptyLog(DetectError):
    pass


class InsufficientWarmup(DetectError):
    pass


MIN_WARMUP_GAPS = 20


@dataclass(frozen=True)
class Alarm:
    dev_addr: int
    start_us: int
    end_us: int | None = None
    crc_failures: int = 0  # rejected frames logged while the alarm was open

    def to_obj(self) -> dict:
        return {"dev_addr": f"{self.dev_addr:08X}", "start_us": self.start_us, "end_us": self.end_us,
                "crc_failures": self.crc_failures}


@dataclass(frozen=True)
class DetectorConfig:
    mode: str = "known"  # known | learned
    expected_period_us: int | None = None
    warmup_us: int | None = None
    k: int = 3
    z: float = 2.0
    use_rejects: bool = True

    def __post_init__(self) -> None:
        if self.mode not in ("known", "learned"):
            raise DetectError("mode must be 'known' or 'learned'")
        if self.k < 1:
            raise DetectError("k must be >= 1")
        if self.mode == "known" and (self.expected_period_us is None or self.expected_period_us <= 0):
            raise DetectError("known-rate detection needs a positive expected period")
        if self.mode == "learned" and (self.warmup_us is None or self.warmup_us <= 0):
            raise DetectError("learned-rate detection needs a positive warm-up window")


def _ordered(log: Iterable[DeliveryRecord]) -> list[DeliveryRecord]:
    records = list(log)
    if not records:
        raise EmptyLog("delivery log is empty")
    if any(b.t_us < a.t_us for a, b in zip(records, records[1:])):
        raise DetectError("log timestamps must be non-decreasing")
    return records


def _close(open_: dict, closed: list, dev: int, t: int) -> None:
    a = open_.pop(dev)
    closed.append(replace(a, end_us=t))


# ------------------------------------------------------------------ known rate

@dataclass(frozen=True)
class KnownState:
    last_accept: Mapping[int, int] = field(default_factory=dict)
    open_alarms: Mapping[int, Alarm] = field(default_factory=dict)


def known_deadline(last_accept: int, cfg: DetectorConfig) -> int:
    """First microsecond past the tolerance of the k-th slot after ``last_accept``."""
    half_slots = (2 * cfg.k + 1) * cfg.expected_period_us
    return last_accept + half_slots // 2 + 1


def known_step(state: KnownState, rec: DeliveryRecord | None, cfg: DetectorConfig,
               now: int | None = None) -> tuple[KnownState, list[Alarm]]:
    """Advance to ``rec.t_us`` (or ``now``) and consume ``rec``.

    Returns the new state and the alarms that closed during the step.
    """
    t = rec.t_us if rec is not None else now
    last = dict(state.last_accept)
    open_ = dict(state.open_alarms)
    closed: list[Alarm] = []
    for dev, a in last.items():
        if dev not in open_ and t >= known_deadline(a, cfg):
            open_[dev] = Alarm(dev, known_deadline(a, cfg))
    if rec is not None:
        dev = rec.dev_addr
        if rec.status == ACCEPT:
            if dev in open_:
                _close(open_, closed, dev, rec.t_us)
            last[dev] = rec.t_us
        elif cfg.use_rejects:
            # the first sighting of a device starts its slot grid even if it was rejected
            last.setdefault(dev, rec.t_us)
            if rec.status == REJECT_CRC and dev in open_:
                open_[dev] = replace(open_[dev], crc_failures=open_[dev].crc_failures + 1)
    return KnownState(last, open_), closed


def detect_known(log: Iterable[DeliveryRecord], cfg: DetectorConfig, t_end: int | None = None) -> list[Alarm]:
    """Alarm once ``k`` consecutive expected slots (period +/- 50%) pass
    without an accepted frame; the alarm closes on the next accept. Alarms
    still open at ``t_end`` (default: last record) have no end."""
    if cfg.mode != "known":
        raise DetectError("detect_known needs a known-rate config")
    records = _ordered(log)
    state, alarms = KnownState(), []
    for rec in records:
        state, done = known_step(state, rec, cfg)
        alarms += done
    state, done = known_step(state, None, cfg, now=max(t_end or 0, records[-1].t_us))
    alarms += done + list(state.open_alarms.values())
    return sorted(alarms, key=lambda a: (a.start_us, a.dev_addr))


# ------------------------------------------------------------------ learned rate

@dataclass(frozen=True)
class Baseline:
    mean_us: float
    std_us: float
    threshold_us: float
    samples: int


def learn_baseline(accept_times: list[int], warmup_end: int, z: float) -> Baseline:
    times = [t for t in accept_times if t <= warmup_end]
    gaps = [b - a for a, b in zip(times, times[1:])]
    if len(gaps) < MIN_WARMUP_GAPS:
        raise InsufficientWarmup(f"warm-up holds {len(gaps)} inter-arrival samples, need {MIN_WARMUP_GAPS}")
    mean = statistics.fmean(gaps)
    std = statistics.pstdev(gaps)
    return Baseline(mean, std, mean + z * std, len(gaps))


@dataclass(frozen=True)
class LearnedDevice:
    baseline: Baseline
    last_accept: int
    misses: int = 0
    alarm: Alarm | None = None


@dataclass(frozen=True)
class LearnedState:
    devices: Mapping[int, LearnedDevice] = field(default_factory=dict)


def _missed(gap: float, thr: float) -> int:
    return math.floor(gap / thr) if gap > thr else 0


def learned_step(state: LearnedState, rec: DeliveryRecord | None, cfg: DetectorConfig,
                 now: int | None = None) -> tuple[LearnedState, list[Alarm]]:
    """Streaming form of :func:`detect_learned` for devices already baselined.

    Each gap longer than the threshold T adds ``floor(gap / T)`` missed
    slots; a gap within T resets the count and closes any open alarm. The
    alarm opens when the running count (including the current silence)
    reaches ``k``.
    """
    t = rec.t_us if rec is not None else now
    devs = dict(state.devices)
    closed: list[Alarm] = []
    for dev, d in devs.items():
        if d.alarm is None:
            thr = d.baseline.threshold_us
            need = cfg.k - d.misses
            fire_at = d.last_accept + math.ceil(need * thr) if need > 0 else d.last_accept
            if _missed(t - d.last_accept, thr) >= need and t >= fire_at:
                devs[dev] = replace(d, alarm=Alarm(dev, fire_at))
    if rec is not None and rec.dev_addr in devs:
        d = devs[rec.dev_addr]
        if rec.status == ACCEPT:
            gap = rec.t_us - d.last_accept
            thr = d.baseline.threshold_us
            if gap > thr:
                d = replace(d, misses=d.misses + _missed(gap, thr), last_accept=rec.t_us)
            else:
                if d.alarm is not None:
                    closed.append(replace(d.alarm, end_us=rec.t_us))
                d = replace(d, misses=0, last_accept=rec.t_us, alarm=None)
            devs[rec.dev_addr] = d
        elif rec.status == REJECT_CRC and cfg.use_rejects and d.alarm is not None:
            devs[rec.dev_addr] = replace(d, alarm=replace(d.alarm, crc_failures=d.alarm.crc_failures + 1))
    return LearnedState(devs), closed


def detect_learned(log: Iterable[DeliveryRecord], cfg: DetectorConfig, t_end: int | None = None) -> list[Alarm]:
    """Learn each device's gap statistics over ``warmup_us`` from its first
    accept, then alarm when gaps exceed mean + z*std for ``k`` slots in a row."""
    if cfg.mode != "learned":
        raise DetectError("detect_learned needs a learned-rate config")
    records = _ordered(log)
    accepts: dict[int, list[int]] = {}
    for r in records:
        if r.status == ACCEPT:
            accepts.setdefault(r.dev_addr, []).append(r.t_us)
    if not accepts:
        raise InsufficientWarmup("no accepted frames to learn from")
    warm_end = {dev: ts[0] + cfg.warmup_us for dev, ts in accepts.items()}
    baselines = {dev: learn_baseline(ts, warm_end[dev], cfg.z) for dev, ts in accepts.items()}

    state, alarms = LearnedState(), []
    for r in records:
        dev = r.dev_addr
        if dev in baselines and dev not in state.devices:
            if r.t_us < warm_end[dev]:
                continue
            last = max(t for t in accepts[dev] if t <= warm_end[dev])
            state = LearnedState({**state.devices, dev: LearnedDevice(baselines[dev], last)})
        state, done = learned_step(state, r, cfg)
        alarms += done
    state, done = learned_step(state, None, cfg, now=max(t_end or 0, records[-1].t_us))
    alarms += done + [d.alarm for d in state.devices.values() if d.alarm is not None]
    return sorted(alarms, key=lambda a: (a.start_us, a.dev_addr))


def detect(log: Iterable[DeliveryRecord], cfg: DetectorConfig, t_end: int | None = None) -> list[Alarm]:
    if cfg.mode == "known":
        return detect_known(log, cfg, t_end)
    return detect_learned(log, cfg, t_end)
