"""Ready-made scenarios for the experiments the tool reproduces.

Each builder returns a plain :class:`Scenario`, so the same setups can be
written to YAML, tweaked and rerun from the command line.
"""

from __future__ import annotations

import math

from .actors import JamPolicy
from .medium import CaptureMatrix
from .phy import RadioParams, time_on_air
from .scenario import AdversarySpec, DeviceSpec, GatewaySpec, RadioDefaults, Scenario, TrafficSpec

CH = 868_100_000
TARGET_ADDR = 0x12345663
CONTROL_ADDR = 0x12345664
NWK_SKEY = "2B7E151628AED2A6ABF7158809CF4F3C"
APP_SKEY = "000102030405060708090A0B0C0D0E0F"


def duty_period_us(sf: int, frame_len: int, duty_cycle: float = 0.01, radio: RadioDefaults = RadioDefaults()) -> int:
    """Shortest whole-second period a device can keep at ``duty_cycle``."""
    airtime = time_on_air(radio.params(sf), frame_len)
    return math.ceil(airtime / duty_cycle / 1e6 + 1) * 1_000_000


def _device(dev_id: str, addr: int, sf: int, frame_len: int, traffic: TrafficSpec,
            channels=((CH, 1.0),)) -> DeviceSpec:
    return DeviceSpec(dev_id, addr, NWK_SKEY, APP_SKEY, sf, tuple(channels), traffic, frame_len=frame_len)


def _links(rows: dict[str, dict[str, float]]) -> tuple[tuple[str, str, float], ...]:
    return tuple(sorted((s, r, float(v)) for s, row in rows.items() for r, v in row.items()))


def selective_scenario(sf: int, frames: int = 1000, *, miss_probability: float = 0.01, frame_len: int = 17,
                       seed: int = 1, decision_delay_us: int | None = None) -> Scenario:
    """Target and control device on one channel; the jammer's policy names the target."""
    period = duty_period_us(sf, frame_len)
    target = _device("target", TARGET_ADDR, sf, frame_len, TrafficSpec(period_us=period, count=frames))
    control = _device("control", CONTROL_ADDR, sf, frame_len,
                      TrafficSpec(period_us=period, offset_us=period // 2, count=frames))
    jammer = AdversarySpec("selective", "jammer", channels=(CH,),
                           policy=JamPolicy("dev_addr", (TARGET_ADDR,)),
                           miss_probability=miss_probability, decision_delay_us=decision_delay_us)
    links = _links({"target": {"gw": -80, "jammer": -60}, "control": {"gw": -80, "jammer": -60},
                    "jammer": {"gw": -40}})
    return Scenario(seed=seed, duration_us=period * (frames + 1), gateways=(GatewaySpec("gw"),),
                    devices=(target, control), adversaries=(jammer,), links=links)


def triggered_scenario(frames_per_sf: int = 100, *, seed: int = 1, jammer_channel: int = CH) -> Scenario:
    """One device per SF7..SF12, staggered so their frames never overlap."""
    period = duty_period_us(12, 17) + 60_000_000
    devices, links = [], {"jammer": {"gw": -40}}
    for i, sf in enumerate(range(7, 13)):
        name = f"dev_sf{sf}"
        devices.append(_device(name, 0x26011000 + sf, sf, 17,
                               TrafficSpec(period_us=period, offset_us=i * 10_000_000, count=frames_per_sf)))
        links[name] = {"gw": -80, "jammer": -60}
    jammer = AdversarySpec("triggered", "jammer", channels=(jammer_channel,))
    return Scenario(seed=seed, duration_us=period * (frames_per_sf + 1), gateways=(GatewaySpec("gw"),),
                    devices=tuple(devices), adversaries=(jammer,), links=_links(links))


def wormhole_scenario(sf: int, frame_len: int, *, frames: int = 100, latency_mean_us: int = 100_830,
                      latency_std_us: int = 1_700, seed: int = 1, replay: bool = False,
                      replay_start_us: int | None = None, replay_interval_us: int | None = None,
                      jammer_at_sniffer_dbm: float = -110.0) -> Scenario:
    """Sniffer beside the victim, jammer beside the gateway."""
    period = duty_period_us(sf, frame_len)
    dev = _device("victim", TARGET_ADDR, sf, frame_len, TrafficSpec(period_us=period, count=frames))
    adv = AdversarySpec("wormhole", "jammer", sniffer="sniffer", channels=(CH,),
                        policy=JamPolicy("dev_addr", (TARGET_ADDR,)),
                        latency_mean_us=latency_mean_us, latency_std_us=latency_std_us,
                        replay=replay, replay_start_us=replay_start_us, replay_interval_us=replay_interval_us)
    links = _links({"victim": {"gw": -80, "sniffer": -50},
                    "jammer": {"gw": -40, "sniffer": jammer_at_sniffer_dbm}})
    duration = period * (frames + 1)
    if replay:
        duration *= 3
    return Scenario(seed=seed, duration_us=duration, gateways=(GatewaySpec("gw"),), devices=(dev,),
                    adversaries=(adv,), links=links)


def rssi_sweep_scenario(differential_db: float, *, frames: int = 50, seed: int = 1,
                        threshold_db: float = 36.0) -> Scenario:
    """SF12 victim at -80 dBm at the gateway; the jammer sits ``differential_db`` above it."""
    base = selective_scenario(12, frames, miss_probability=0.0, seed=seed)
    capture = CaptureMatrix(base.capture).with_override(12, 12, threshold_db).rows
    rows = base.link_dict()
    rows["jammer"]["gw"] = -80 + differential_db
    return Scenario(seed=seed, duration_us=base.duration_us, capture=capture, gateways=base.gateways,
                    devices=base.devices[:1], adversaries=base.adversaries,
                    links=_links({k: v for k, v in rows.items() if k != "control"}))


def detector_scenario(*, period_us: int = 60_000_000, jam_start_us: int = 600_000_000,
                      jam_end_us: int = 1_200_000_000, duration_us: int = 1_800_000_000,
                      sf: int = 7, seed: int = 1) -> Scenario:
    """Periodic device with a selective jammer switched on for a fixed window."""
    dev = _device("target", TARGET_ADDR, sf, 17, TrafficSpec(period_us=period_us))
    jammer = AdversarySpec("selective", "jammer", channels=(CH,), policy=JamPolicy("dev_addr", (TARGET_ADDR,)),
                           active_start_us=jam_start_us, active_end_us=jam_end_us)
    links = _links({"target": {"gw": -80, "jammer": -60}, "jammer": {"gw": -40}})
    return Scenario(seed=seed, duration_us=duration_us, gateways=(GatewaySpec("gw"),), devices=(dev,),
                    adversaries=(jammer,), links=links)


def default_params(sf: int) -> RadioParams:
    return RadioDefaults().params(sf)
