"""Scenario files: YAML in, validated frozen dataclasses out, and back.

Errors carry ``file:line:column`` of the offending node. Field names are
documented in ``docs/scenario-schema.md``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import yaml

from .actors import JamPolicy, PolicyError, compile_policy
from .medium import CaptureMatrix
from .phy import DATA_RATES, PhyError, RadioParams


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class RadioDefaults:
    bandwidth_hz: int = 125_000
    coding_rate: int = 1
    preamble_symbols: int = 8
    explicit_header: bool = True
    crc_on: bool = True
    low_data_rate_opt: bool | None = None

    def params(self, sf: int) -> RadioParams:
        return RadioParams(sf, self.bandwidth_hz, self.coding_rate, self.preamble_symbols,
                           self.explicit_header, self.crc_on, self.low_data_rate_opt)


@dataclass(frozen=True)
class TrafficSpec:
    kind: str = "periodic"
    period_us: int = 60_000_000
    offset_us: int = 0
    jitter_us: int = 0
    count: int | None = None
    times_us: tuple[int, ...] = ()


@dataclass(frozen=True)
class DeviceSpec:
    id: str
    dev_addr: int
    nwk_skey: str
    app_skey: str
    sf: int
    channels: tuple[tuple[int, float], ...]
    traffic: TrafficSpec = TrafficSpec()
    frame_len: int = 17
    fport: int = 1
    mhdr: int = 0x40
    duty_cycle: float | None = 0.01
    tx_power_dbm: float = 14.0


@dataclass(frozen=True)
class GatewaySpec:
    id: str
    channels: tuple[int, ...] | None = None


@dataclass(frozen=True)
class AdversarySpec:
    kind: str  # triggered | selective | wormhole
    id: str
    sniffer: str | None = None
    channels: tuple[int, ...] | None = None
    sfs: tuple[int, ...] | None = None
    policy: JamPolicy = JamPolicy("always")
    read_bytes: int = 5
    decision_delay_us: int | None = None
    detect_delay_us: int | None = None
    jam_len: int = 10
    miss_probability: float = 0.0
    rearm_us: int = 0
    latency_mean_us: int = 100_830
    latency_std_us: int = 1_700
    replay: bool = False
    replay_start_us: int | None = None
    replay_interval_us: int | None = None  # None: victim's mean inter-arrival
    active_start_us: int = 0
    active_end_us: int | None = None
    tx_power_dbm: float = 14.0

    @property
    def transmitter(self) -> str:
        return self.id

    @property
    def listener(self) -> str:
        return self.sniffer if self.kind == "wormhole" else self.id


@dataclass(frozen=True)
class Scenario:
    seed: int
    duration_us: int
    radio: RadioDefaults = RadioDefaults()
    capture: tuple[tuple[float, ...], ...] = field(default_factory=lambda: CaptureMatrix.default().rows)
    gateways: tuple[GatewaySpec, ...] = ()
    devices: tuple[DeviceSpec, ...] = ()
    adversaries: tuple[AdversarySpec, ...] = ()
    links: tuple[tuple[str, str, float], ...] = ()
    outputs: tuple[str, ...] = ("metrics",)

    def capture_matrix(self) -> CaptureMatrix:
        return CaptureMatrix(self.capture)

    def link_dict(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for src, rx, v in self.links:
            out.setdefault(src, {})[rx] = v
        return out


OUTPUT_KINDS = ("metrics", "events", "server")

# ------------------------------------------------------------------ parsing

_CONSTRUCTOR = yaml.SafeLoader("")


class _N:
    """A YAML node with its dotted path, for located error messages."""

    def __init__(self, node: yaml.Node, path: str, source: str) -> None:
        self.node, self.path, self.source = node, path, source

    def error(self, msg: str) -> ScenarioError:
        m = self.node.start_mark
        return ScenarioError(f"{self.source}:{m.line + 1}:{m.column + 1}: {self.path or '<root>'}: {msg}")

    def _sub(self, node: yaml.Node, key: str | int) -> _N:
        path = f"{self.path}[{key}]" if isinstance(key, int) else (f"{self.path}.{key}" if self.path else key)
        return _N(node, path, self.source)

    def mapping(self, allowed: set[str], required: set[str] = frozenset()) -> dict[str, _N]:
        if not isinstance(self.node, yaml.MappingNode):
            raise self.error("expected a mapping")
        out: dict[str, _N] = {}
        for k, v in self.node.value:
            key = _CONSTRUCTOR.construct_object(k, deep=True)
            if not isinstance(key, str) or key not in allowed:
                raise _N(k, self.path, self.source).error(f"unknown field {key!r}")
            if key in out:
                raise _N(k, self.path, self.source).error(f"duplicate field {key!r}")
            out[key] = self._sub(v, key)
        for r in sorted(required - out.keys()):
            raise self.error(f"missing required field {r!r}")
        return out

    def seq(self) -> list[_N]:
        if not isinstance(self.node, yaml.SequenceNode):
            raise self.error("expected a list")
        return [self._sub(v, i) for i, v in enumerate(self.node.value)]

    def value(self) -> Any:
        return _CONSTRUCTOR.construct_object(self.node, deep=True)

    def is_null(self) -> bool:
        return isinstance(self.node, yaml.ScalarNode) and self.node.tag.endswith(":null")

    def int(self, lo: int | None = None, hi: int | None = None) -> int:
        v = self.value()
        if isinstance(v, bool) or not isinstance(v, int):
            raise self.error(f"expected an integer, got {v!r}")
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            raise self.error(f"{v} outside [{lo if lo is not None else '-inf'}, {hi if hi is not None else 'inf'}]")
        return v

    def float(self, lo: float | None = None, hi: float | None = None) -> float:
        v = self.value()
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.error(f"expected a number, got {v!r}")
        v = float(v)
        if v != v or v in (float("inf"), float("-inf")):
            raise self.error("number must be finite")
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            raise self.error(f"{v} outside [{lo}, {hi}]")
        return v

    def bool(self) -> bool:
        v = self.value()
        if not isinstance(v, bool):
            raise self.error(f"expected true or false, got {v!r}")
        return v

    def str(self) -> str:
        v = self.value()
        if not isinstance(v, str) or not v:
            raise self.error(f"expected a non-empty string, got {v!r}")
        return v

    def hex(self, nbytes: int) -> str:
        v = self.value()
        if isinstance(v, int) and not isinstance(v, bool):
            v = f"{v:0{2 * nbytes}X}" if nbytes == 4 else str(v)
        if not isinstance(v, str):
            raise self.error("expected a hex string")
        try:
            raw = bytes.fromhex(v)
        except ValueError:
            raise self.error(f"{v!r} is not hex") from None
        if len(raw) != nbytes:
            raise self.error(f"expected {nbytes} bytes of hex, got {len(raw)}")
        return raw.hex().upper()


def _opt(m: dict[str, _N], key: str, conv, default):
    n = m.get(key)
    if n is None or n.is_null():
        return default
    return conv(n)


def _radio(n: _N) -> RadioDefaults:
    m = n.mapping({"bandwidth_hz", "coding_rate", "preamble_symbols", "explicit_header",
                   "crc_on", "low_data_rate_opt"})
    bw = _opt(m, "bandwidth_hz", lambda x: x.int(), 125_000)
    if bw not in (125_000, 250_000):
        raise m["bandwidth_hz"].error("bandwidth must be 125000 or 250000")
    return RadioDefaults(
        bandwidth_hz=bw,
        coding_rate=_opt(m, "coding_rate", lambda x: x.int(1, 4), 1),
        preamble_symbols=_opt(m, "preamble_symbols", lambda x: x.int(1, 65535), 8),
        explicit_header=_opt(m, "explicit_header", lambda x: x.bool(), True),
        crc_on=_opt(m, "crc_on", lambda x: x.bool(), True),
        low_data_rate_opt=_opt(m, "low_data_rate_opt", lambda x: x.bool(), None),
    )


def _capture(n: _N) -> tuple[tuple[float, ...], ...]:
    m = n.mapping({"rows", "overrides"})
    if "rows" in m:
        rows_n = m["rows"].seq()
        if len(rows_n) != 6:
            raise m["rows"].error("capture matrix needs 6 rows (desired SF7..SF12)")
        rows = []
        for r in rows_n:
            cells = r.seq()
            if len(cells) != 6:
                raise r.error("each capture row needs 6 values (interferer SF7..SF12)")
            rows.append(tuple(c.float() for c in cells))
        matrix = CaptureMatrix(tuple(rows))
    else:
        matrix = CaptureMatrix.default()
    for o in (m["overrides"].seq() if "overrides" in m else []):
        om = o.mapping({"ds", "is", "db"}, {"ds", "is", "db"})
        matrix = matrix.with_override(om["ds"].int(7, 12), om["is"].int(7, 12), om["db"].float())
    return matrix.rows


def _channels_weighted(n: _N) -> tuple[tuple[int, float], ...]:
    out = []
    for item in n.seq():
        if isinstance(item.node, yaml.SequenceNode):
            pair = item.seq()
            if len(pair) != 2:
                raise item.error("a weighted channel is [frequency_hz, weight]")
            out.append((pair[0].int(1), pair[1].float(0)))
        else:
            out.append((item.int(1), 1.0))
    if not out:
        raise n.error("channel plan is empty")
    if sum(w for _, w in out) <= 0:
        raise n.error("channel weights must have a positive sum")
    return tuple(out)


def _int_list(n: _N, lo=None, hi=None) -> tuple[int, ...]:
    items = tuple(i.int(lo, hi) for i in n.seq())
    if not items:
        raise n.error("list must not be empty")
    return items


def _traffic(n: _N) -> TrafficSpec:
    m = n.mapping({"kind", "period_us", "offset_us", "jitter_us", "count", "times_us"})
    kind = _opt(m, "kind", lambda x: x.str(), "periodic")
    if kind not in ("periodic", "poisson", "explicit"):
        raise m["kind"].error("kind must be periodic, poisson or explicit")
    if kind == "explicit" and "times_us" not in m:
        raise n.error("explicit traffic needs times_us")
    return TrafficSpec(
        kind=kind,
        period_us=_opt(m, "period_us", lambda x: x.int(1), 60_000_000),
        offset_us=_opt(m, "offset_us", lambda x: x.int(0), 0),
        jitter_us=_opt(m, "jitter_us", lambda x: x.int(0), 0),
        count=_opt(m, "count", lambda x: x.int(0), None),
        times_us=tuple(sorted(i.int(0) for i in m["times_us"].seq())) if "times_us" in m else (),
    )


def _device(n: _N, radio: RadioDefaults) -> DeviceSpec:
    m = n.mapping({"id", "dev_addr", "nwk_skey", "app_skey", "sf", "channels", "traffic", "frame_len",
                   "fport", "mhdr", "duty_cycle", "tx_power_dbm"},
                  {"id", "dev_addr", "nwk_skey", "app_skey", "sf", "channels"})
    sf = m["sf"].int(7, 12)
    if (sf, radio.bandwidth_hz) not in DATA_RATES:
        raise m["sf"].error(f"SF{sf} is not a data rate at {radio.bandwidth_hz} Hz")
    limit = DATA_RATES[(sf, radio.bandwidth_hz)][1]
    return DeviceSpec(
        id=m["id"].str(),
        dev_addr=int(m["dev_addr"].hex(4), 16),
        nwk_skey=m["nwk_skey"].hex(16),
        app_skey=m["app_skey"].hex(16),
        sf=sf,
        channels=_channels_weighted(m["channels"]),
        traffic=_traffic(m["traffic"]) if "traffic" in m else TrafficSpec(),
        frame_len=_opt(m, "frame_len", lambda x: x.int(13, limit), 17),
        fport=_opt(m, "fport", lambda x: x.int(0, 255), 1),
        mhdr=_opt(m, "mhdr", lambda x: x.int(0, 255), 0x40),
        duty_cycle=_opt(m, "duty_cycle", lambda x: _positive_fraction(x), None) if "duty_cycle" in m else 0.01,
        tx_power_dbm=_opt(m, "tx_power_dbm", lambda x: x.float(), 14.0),
    )


def _positive_fraction(n: _N) -> float:
    v = n.float(0, 1)
    if v == 0:
        raise n.error("duty_cycle must be greater than 0 (use null to disable)")
    return v


_ADV_FIELDS = {"kind", "id", "sniffer", "channels", "sfs", "policy", "read_bytes", "decision_delay_us",
               "detect_delay_us", "jam_len", "miss_probability", "rearm_us", "latency", "replay",
               "active", "tx_power_dbm"}


def _adversary(n: _N) -> AdversarySpec:
    m = n.mapping(_ADV_FIELDS, {"kind", "id"})
    kind = m["kind"].str()
    if kind not in ("triggered", "selective", "wormhole"):
        raise m["kind"].error("kind must be triggered, selective or wormhole")
    sniffer = _opt(m, "sniffer", lambda x: x.str(), None)
    if kind == "wormhole" and sniffer is None:
        raise n.error("a wormhole needs a sniffer node id")
    if kind != "wormhole" and sniffer is not None:
        raise m["sniffer"].error("only a wormhole has a sniffer")
    read_bytes = _opt(m, "read_bytes", lambda x: x.int(1, 255), 5)
    policy = JamPolicy("always")
    if "policy" in m:
        try:
            policy = compile_policy(m["policy"].value(), read_bytes)
        except (PolicyError, ValueError) as e:
            raise m["policy"].error(str(e)) from None
    lat_mean, lat_std = 100_830, 1_700
    if "latency" in m:
        lm = m["latency"].mapping({"mean_us", "std_us"}, {"mean_us"})
        lat_mean = lm["mean_us"].int(0)
        lat_std = _opt(lm, "std_us", lambda x: x.int(0), 0)
    replay, replay_start, replay_interval = False, None, None
    if "replay" in m:
        rm = m["replay"].mapping({"enabled", "start_us", "interval_us"})
        replay = _opt(rm, "enabled", lambda x: x.bool(), True)
        replay_start = _opt(rm, "start_us", lambda x: x.int(0), None)
        if "interval_us" in rm and rm["interval_us"].value() != "auto":
            replay_interval = _opt(rm, "interval_us", lambda x: x.int(1), None)
    a_start, a_end = 0, None
    if "active" in m:
        am = m["active"].mapping({"start_us", "end_us"})
        a_start = _opt(am, "start_us", lambda x: x.int(0), 0)
        a_end = _opt(am, "end_us", lambda x: x.int(0), None)
        if a_end is not None and a_end < a_start:
            raise am["end_us"].error("active window ends before it starts")
    return AdversarySpec(
        kind=kind, id=m["id"].str(), sniffer=sniffer,
        channels=_opt(m, "channels", lambda x: _int_list(x, 1), None),
        sfs=_opt(m, "sfs", lambda x: _int_list(x, 7, 12), None),
        policy=policy, read_bytes=read_bytes,
        decision_delay_us=_opt(m, "decision_delay_us", lambda x: x.int(0), None),
        detect_delay_us=_opt(m, "detect_delay_us", lambda x: x.int(0), None),
        jam_len=_opt(m, "jam_len", lambda x: x.int(1, 230), 10),
        miss_probability=_opt(m, "miss_probability", lambda x: x.float(0, 1), 0.0),
        rearm_us=_opt(m, "rearm_us", lambda x: x.int(0), 0),
        latency_mean_us=lat_mean, latency_std_us=lat_std,
        replay=replay, replay_start_us=replay_start, replay_interval_us=replay_interval,
        active_start_us=a_start, active_end_us=a_end,
        tx_power_dbm=_opt(m, "tx_power_dbm", lambda x: x.float(), 14.0),
    )


def _unique(items: list[_N], ids: list[str], what: str, seen: dict[str, str]) -> None:
    for node, i in zip(items, ids):
        if i in seen:
            raise node.error(f"{what} id {i!r} already used by a {seen[i]}")
        seen[i] = what


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        raise ScenarioError(f"{where}: malformed YAML: {getattr(e, 'problem', e)}") from None
    if root is None:
        raise ScenarioError(f"{source}:1:1: <root>: empty scenario")
    r = _N(root, "", source)
    m = r.mapping({"seed", "duration_us", "radio", "capture", "gateways", "devices", "adversaries",
                   "links", "outputs"}, {"seed", "duration_us"})
    radio = _radio(m["radio"]) if "radio" in m else RadioDefaults()
    gw_nodes = m["gateways"].seq() if "gateways" in m else []
    gateways = []
    for g in gw_nodes:
        gm = g.mapping({"id", "channels"}, {"id"})
        gateways.append(GatewaySpec(gm["id"].str(), _opt(gm, "channels", lambda x: _int_list(x, 1), None)))
    dev_nodes = m["devices"].seq() if "devices" in m else []
    devices = [_device(d, radio) for d in dev_nodes]
    adv_nodes = m["adversaries"].seq() if "adversaries" in m else []
    adversaries = [_adversary(a) for a in adv_nodes]

    seen: dict[str, str] = {}
    _unique(gw_nodes, [g.id for g in gateways], "gateway", seen)
    _unique(dev_nodes, [d.id for d in devices], "device", seen)
    _unique(adv_nodes, [a.id for a in adversaries], "adversary", seen)
    _unique([a for a, s in zip(adv_nodes, adversaries) if s.sniffer],
            [s.sniffer for s in adversaries if s.sniffer], "sniffer", seen)
    addrs: dict[int, str] = {}
    for node, d in zip(dev_nodes, devices):
        if d.dev_addr in addrs:
            raise node.error(f"dev_addr {d.dev_addr:08X} already used by {addrs[d.dev_addr]}")
        addrs[d.dev_addr] = d.id
    if devices and not gateways:
        raise (m.get("devices") or r).error("devices need at least one gateway")

    links: list[tuple[str, str, float]] = []
    if "links" in m:
        lm = m["links"].mapping(set(seen))
        for src, row in lm.items():
            for rx, v in row.mapping(set(seen) - {src}).items():
                links.append((src, rx, v.float()))
    links.sort()
    have = {(s, x) for s, x, _ in links}
    transmitters = [d.id for d in devices] + [a.transmitter for a in adversaries]
    receivers = [g.id for g in gateways] + [a.listener for a in adversaries]
    for t in transmitters:
        for x in receivers:
            if t != x and (t, x) not in have:
                raise (m.get("links") or r).error(f"missing RSSI for {t} -> {x}")

    outputs = ("metrics",)
    if "outputs" in m:
        outs = []
        for o in m["outputs"].seq():
            v = o.str()
            if v not in OUTPUT_KINDS:
                raise o.error(f"output must be one of {', '.join(OUTPUT_KINDS)}")
            outs.append(v)
        outputs = tuple(outs)

    try:
        capture = _capture(m["capture"]) if "capture" in m else CaptureMatrix.default().rows
    except ValueError as e:
        if isinstance(e, ScenarioError):
            raise
        raise m["capture"].error(str(e)) from None
    try:
        for d in devices:
            radio.params(d.sf)
    except PhyError as e:
        raise m["radio"].error(str(e)) from None
    return Scenario(
        seed=m["seed"].int(), duration_us=m["duration_us"].int(0), radio=radio, capture=capture,
        gateways=tuple(gateways), devices=tuple(devices), adversaries=tuple(adversaries),
        links=tuple(links), outputs=outputs,
    )


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read(), str(path))


# ------------------------------------------------------------------ serialising

def scenario_to_obj(s: Scenario) -> dict[str, Any]:
    r = s.radio
    radio = {"bandwidth_hz": r.bandwidth_hz, "coding_rate": r.coding_rate,
             "preamble_symbols": r.preamble_symbols, "explicit_header": r.explicit_header,
             "crc_on": r.crc_on, "low_data_rate_opt": r.low_data_rate_opt}
    obj: dict[str, Any] = {
        "seed": s.seed,
        "duration_us": s.duration_us,
        "radio": radio,
        "capture": {"rows": [list(row) for row in s.capture]},
        "gateways": [{"id": g.id, "channels": list(g.channels) if g.channels else None} for g in s.gateways],
        "devices": [_device_obj(d) for d in s.devices],
        "adversaries": [_adversary_obj(a) for a in s.adversaries],
        "links": s.link_dict(),
        "outputs": list(s.outputs),
    }
    return obj


def _device_obj(d: DeviceSpec) -> dict[str, Any]:
    t = d.traffic
    traffic: dict[str, Any] = {"kind": t.kind, "period_us": t.period_us, "offset_us": t.offset_us,
                               "jitter_us": t.jitter_us, "count": t.count}
    if t.times_us:
        traffic["times_us"] = list(t.times_us)
    return {
        "id": d.id, "dev_addr": f"{d.dev_addr:08X}", "nwk_skey": d.nwk_skey, "app_skey": d.app_skey,
        "sf": d.sf, "channels": [[c, w] for c, w in d.channels], "traffic": traffic,
        "frame_len": d.frame_len, "fport": d.fport, "mhdr": d.mhdr, "duty_cycle": d.duty_cycle,
        "tx_power_dbm": d.tx_power_dbm,
    }


def _adversary_obj(a: AdversarySpec) -> dict[str, Any]:
    obj: dict[str, Any] = {"kind": a.kind, "id": a.id}
    if a.sniffer is not None:
        obj["sniffer"] = a.sniffer
    obj.update({
        "channels": list(a.channels) if a.channels else None,
        "sfs": list(a.sfs) if a.sfs else None,
        "policy": a.policy.to_obj(),
        "read_bytes": a.read_bytes,
        "decision_delay_us": a.decision_delay_us,
        "detect_delay_us": a.detect_delay_us,
        "jam_len": a.jam_len,
        "miss_probability": a.miss_probability,
        "rearm_us": a.rearm_us,
        "latency": {"mean_us": a.latency_mean_us, "std_us": a.latency_std_us},
        "replay": {"enabled": a.replay, "start_us": a.replay_start_us,
                   "interval_us": "auto" if a.replay_interval_us is None else a.replay_interval_us},
        "active": {"start_us": a.active_start_us, "end_us": a.active_end_us},
        "tx_power_dbm": a.tx_power_dbm,
    })
    return obj


def serialize_scenario(s: Scenario) -> str:
    return yaml.safe_dump(scenario_to_obj(s), sort_keys=False, default_flow_style=None, width=100)
