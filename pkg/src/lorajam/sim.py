"""Build a runnable world from a :class:`Scenario` and collect its metrics."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field

from .actors import (
    ActiveWindow,
    ChannelPlan,
    EndDevice,
    NetworkServer,
    SelectiveJammer,
    Traffic,
    TriggeredJammer,
    Verdict,
    Wormhole,
    substream,
)
from .codec import SessionKeys
from .engine import Engine, EventLog
from .medium import LinkModel, Medium, ReceptionOutcome, Receiver, Status, Transmission
from .phy import LatencyModel
from .scenario import AdversarySpec, Scenario

SELECTIVE_DECISION_DELAY_US = 7_000


@dataclass
class DeviceMetrics:
    sent: int = 0
    delivered: int = 0
    crc_failed: int = 0
    not_heard: int = 0
    jammed: int = 0
    accepted: int = 0
    replay_accepted: int = 0
    replay_rejected: int = 0

    @property
    def jam_pct(self) -> float:
        return 100.0 * self.jammed / self.sent if self.sent else 0.0

    @property
    def delivery_pct(self) -> float:
        return 100.0 * self.delivered / self.sent if self.sent else 0.0


@dataclass
class RunMetrics:
    devices: dict[str, DeviceMetrics] = field(default_factory=dict)
    server: dict[str, int] = field(default_factory=dict)
    jams_sent: int = 0
    replays_sent: int = 0
    sniffer_self_jammed: int = 0
    duty_cycle_deferrals: int = 0

    def totals(self) -> DeviceMetrics:
        t = DeviceMetrics()
        for m in self.devices.values():
            for k, v in asdict(m).items():
                setattr(t, k, getattr(t, k) + v)
        return t

    def to_obj(self) -> dict:
        return {
            "devices": {k: {**asdict(v), "jam_pct": round(v.jam_pct, 6)} for k, v in self.devices.items()},
            "server": dict(sorted(self.server.items())),
            "jams_sent": self.jams_sent,
            "replays_sent": self.replays_sent,
            "sniffer_self_jammed": self.sniffer_self_jammed,
            "duty_cycle_deferrals": self.duty_cycle_deferrals,
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_obj(), sort_keys=True).encode()).hexdigest()

    def to_csv(self) -> str:
        cols = ["device", "sent", "delivered", "crc_failed", "not_heard", "jammed", "jam_pct",
                "accepted", "replay_accepted", "replay_rejected"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for name, m in self.devices.items():
            d = asdict(m)
            w.writerow([name] + [f"{m.jam_pct:.2f}" if c == "jam_pct" else d[c] for c in cols[1:]])
        return buf.getvalue()


@dataclass
class RunResult:
    metrics: RunMetrics
    log: EventLog
    outcomes: dict[int, Status]  # aggregate per device transmission
    corrupted_from: dict[int, int | None]  # first corrupted byte at the best gateway
    server_log: list


class Simulation:
    def __init__(self, scenario: Scenario) -> None:
        self.scenario = scenario
        self.engine = Engine()
        self.medium = Medium(self.engine, LinkModel(scenario.link_dict()), scenario.capture_matrix())
        self.server = NetworkServer()
        self.gateway_ids = [g.id for g in scenario.gateways]
        for g in scenario.gateways:
            self.medium.add_receiver(Receiver(g.id, channels=frozenset(g.channels) if g.channels else None,
                                              multi_demod=True))
        self.devices: dict[str, EndDevice] = {}
        for d in scenario.devices:
            keys = SessionKeys.from_hex(d.nwk_skey, d.app_skey)
            self.server.register(d.dev_addr, keys)
            t = d.traffic
            self.devices[d.id] = EndDevice(
                d.id, d.dev_addr, keys, scenario.radio.params(d.sf), ChannelPlan(d.channels),
                Traffic(t.kind, t.period_us, t.offset_us, t.jitter_us, t.times_us, t.count),
                self.medium, substream(scenario.seed, "device", d.id), frame_len=d.frame_len,
                fport=d.fport, mhdr=d.mhdr, duty_cycle=d.duty_cycle, tx_power_dbm=d.tx_power_dbm)
        self.adversaries = [self._adversary(a) for a in scenario.adversaries]
        self._adversary_nodes = {a.id for a in scenario.adversaries}
        self.metrics = RunMetrics(devices={d: DeviceMetrics() for d in self.devices})
        self.outcomes: dict[int, Status] = {}
        self.corrupted_from: dict[int, int | None] = {}
        self.medium.end_hooks.append(self._on_tx_end)

    def _adversary(self, a: AdversarySpec):
        rng = substream(self.scenario.seed, "adversary", a.id)
        common = dict(channels=a.channels, sfs=a.sfs, jam_len=a.jam_len, miss_probability=a.miss_probability,
                      tx_power_dbm=a.tx_power_dbm, active=ActiveWindow(a.active_start_us, a.active_end_us))
        if a.kind == "triggered":
            return TriggeredJammer(a.id, self.medium, rng, detect_delay_us=a.detect_delay_us, **common)
        if a.kind == "selective":
            delay = SELECTIVE_DECISION_DELAY_US if a.decision_delay_us is None else a.decision_delay_us
            return SelectiveJammer(a.id, self.medium, rng, a.policy, read_bytes=a.read_bytes,
                                   decision_delay_us=delay, rearm_us=a.rearm_us, **common)
        return Wormhole(a.sniffer, a.id, self.medium, rng, a.policy,
                        latency=LatencyModel(a.latency_mean_us, a.latency_std_us), read_bytes=a.read_bytes,
                        decision_delay_us=a.decision_delay_us or 0, replay=a.replay,
                        replay_start_us=a.replay_start_us, replay_interval_us=a.replay_interval_us, **common)

    def _on_tx_end(self, tx: Transmission, outcomes: list[ReceptionOutcome]) -> None:
        if tx.kind == "jam":
            return
        at_gw = [o for o in outcomes if o.receiver_id in self.gateway_ids]
        delivered = [o for o in at_gw if o.status is Status.DELIVERED]
        failed = [o for o in at_gw if o.status is Status.CRC_FAILED]
        if delivered:
            status, best = Status.DELIVERED, delivered[0]
        elif failed:
            status, best = Status.CRC_FAILED, max(failed, key=lambda o: o.corrupted_from_byte)
        else:
            status, best = Status.NOT_HEARD, None
        verdict = None
        if best is not None:
            verdict = self.server.receive_outcome(best)
        m = self.metrics.devices.get(tx.device_id)
        if m is None:
            return
        if tx.kind == "replay":
            if verdict is Verdict.ACCEPT:
                m.replay_accepted += 1
            elif verdict is not None:
                m.replay_rejected += 1
            return
        self.outcomes[tx.tx_id] = status
        self.corrupted_from[tx.tx_id] = best.corrupted_from_byte if best else None
        m.sent += 1
        if status is Status.DELIVERED:
            m.delivered += 1
        elif status is Status.CRC_FAILED:
            m.crc_failed += 1
            if any(self.medium.source_of(c) in self._adversary_nodes for o in failed for c in o.culprits):
                m.jammed += 1
        else:
            m.not_heard += 1
        if verdict is Verdict.ACCEPT:
            m.accepted += 1

    def run(self) -> RunResult:
        for d in self.devices.values():
            d.start()
        self.engine.run_until(self.scenario.duration_us)
        self._drain()
        mt = self.metrics
        mt.server = {v.value: n for v, n in self.server.tally.items()}
        mt.jams_sent = sum(len(a.jams) for a in self.adversaries)
        mt.replays_sent = sum(len(getattr(a, "replays", ())) for a in self.adversaries)
        mt.sniffer_self_jammed = sum(getattr(a, "self_jammed", 0) for a in self.adversaries)
        mt.duty_cycle_deferrals = sum(d.deferrals for d in self.devices.values())
        return RunResult(mt, self.engine.log, self.outcomes, self.corrupted_from, self.server.records)

    def _drain(self) -> None:
        """Let frames already on air at the horizon finish; start nothing new."""
        on_end, now = self.medium._on_end, self.engine.now
        self.engine.retain(lambda cb, args: cb == on_end and args[0].start <= now)
        self.engine.run_until()


def run_scenario(scenario: Scenario) -> RunResult:
    return Simulation(scenario).run()
