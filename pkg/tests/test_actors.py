from __future__ import annotations

import itertools
import random
from collections import Counter
from dataclasses import replace

import pytest

from lorajam.actors import (
    ChannelPlan,
    EndDevice,
    JamPolicy,
    NetworkServer,
    PolicyTooDeep,
    ReplayStore,
    Traffic,
    Verdict,
    compile_policy,
    urban_plan,
    off_time,
    parse_policy,
)
from lorajam.codec import Frame, SessionKeys, WireFrame, decode, encode, verify_mic
from lorajam.engine import Engine
from lorajam.medium import LinkModel, Medium, Receiver
from lorajam.phy import RadioParams, time_on_air
from lorajam.presets import (
    APP_SKEY,
    CONTROL_ADDR,
    NWK_SKEY,
    TARGET_ADDR,
    selective_scenario,
    triggered_scenario,
    wormhole_scenario,
)
from lorajam.sim import Simulation, run_scenario

KEYS = SessionKeys.from_hex(NWK_SKEY, APP_SKEY)


def lone_device(params, traffic, plan=ChannelPlan.single(868_100_000), **kw):
    eng = Engine()
    medium = Medium(eng, LinkModel({"dev": {"gw": -80}}))
    medium.add_receiver(Receiver("gw", multi_demod=True))
    dev = EndDevice("dev", 0x01020304, KEYS, params, plan, traffic, medium, random.Random(1), **kw)
    return eng, dev


def test_channel_weights_within_two_percent():
    plan = urban_plan()
    rng = random.Random(42)
    counts = Counter(plan.sample(rng) for _ in range(10_000))
    total = sum(w for _, w in plan.entries)
    for ch, w in plan.entries:
        assert abs(counts[ch] / 10_000 - w / total) <= 0.02


def test_single_channel_plan():
    eng, dev = lone_device(RadioParams(7), Traffic(period_us=10_000_000, count=20))
    dev.start()
    eng.run_until(10**10)
    assert {t.channel_hz for t in dev.sent} == {868_100_000}


def test_duty_cycle_off_time_sf12():
    airtime = time_on_air(RadioParams(12), 17)
    assert airtime == 1_318_912
    assert off_time(airtime, 0.01) == 130_572_288


def test_duty_cycle_gate_defers_and_spaces_frames():
    eng, dev = lone_device(RadioParams(12), Traffic(period_us=1_000_000, count=5))
    dev.start()
    eng.run_until(10**10)
    starts = [t.start for t in dev.sent]
    assert len(starts) == 5
    assert all(b - a >= 1_318_912 + 130_572_288 for a, b in zip(starts, starts[1:]))
    assert dev.deferrals >= 4
    assert any(r["kind"] == "DutyCycleDeferral" for r in eng.log)


def test_fcnt_strictly_increases():
    eng, dev = lone_device(RadioParams(7), Traffic(kind="poisson", period_us=20_000_000, count=30))
    dev.start()
    eng.run_until(10**11)
    fcnts = [decode(t.wire).fcnt for t in dev.sent]
    assert fcnts == sorted(set(fcnts)) and len(fcnts) == 30


def test_duty_cycle_budget_over_sliding_windows():
    eng, dev = lone_device(RadioParams(9), Traffic(kind="poisson", period_us=500_000, count=200))
    dev.start()
    eng.run_until(10**12)
    # airtime spent between any two frame starts fits the 1% budget of that span
    for i, j in itertools.combinations(range(len(dev.sent)), 2):
        air = sum(t.airtime for t in dev.sent[i:j])
        assert air * 100 <= dev.sent[j].start - dev.sent[i].start


def test_policy_compilation_depth():
    assert compile_policy({"dev_addr": ["12345663"]}, 5).needed_bytes == 5
    assert compile_policy({"mtype": ["JoinRequest"]}, 1).needed_bytes == 1
    with pytest.raises(PolicyTooDeep):
        compile_policy({"fcnt": [0, 10]}, 5)
    with pytest.raises(PolicyTooDeep):
        compile_policy({"and": [{"mtype": [0]}, {"dev_addr": ["12345663"]}]}, 4)


def test_policy_combinators():
    h = decode(encode(Frame(dev_addr=0x12345663, fcnt=7, fport=1), KEYS, b"x").data[:8], partial=True)
    p = parse_policy({"and": [{"dev_addr": ["12345663"]}, {"not": {"fcnt": [0, 5]}}]})
    assert p.matches(h)
    assert not parse_policy({"or": ["never", {"mtype": ["JoinRequest"]}]}).matches(h)
    assert parse_policy(p.to_obj()) == p


def test_replay_store_keeps_bytes_and_order():
    store = ReplayStore()
    assert store.pop() is None
    sim = Simulation(wormhole_scenario(12, 17, frames=3))
    sim.run()
    held = sim.adversaries[0].store
    assert len(held) == 3
    assert [decode(t.wire).fcnt for t in held.for_device(TARGET_ADDR)] == [0, 1, 2]
    assert all(t.wire.data == s.wire.data for t, s in zip(held.for_device(TARGET_ADDR), sim.devices["victim"].sent))


# ------------------------------------------------------------------ server

def signed(fcnt):
    return encode(Frame(dev_addr=TARGET_ADDR, fcnt=fcnt, fport=1), KEYS, b"\x01\x02")


def test_server_verdicts():
    s = NetworkServer({TARGET_ADDR: KEYS})
    assert s.receive(WireFrame(signed(0).data, crc_ok=False)) is Verdict.REJECT_CRC
    assert s.receive(signed(0)) is Verdict.ACCEPT
    assert s.receive(signed(0)) is Verdict.REJECT_REPLAY
    tampered = bytearray(signed(1).data)
    tampered[10] ^= 1
    assert s.receive(WireFrame(bytes(tampered))) is Verdict.REJECT_MIC
    assert s.receive(WireFrame(b"\x00" * 10)) is Verdict.REJECT_MIC
    assert s.receive(signed(5)) is Verdict.ACCEPT
    assert s.receive(signed(3)) is Verdict.REJECT_REPLAY


def server_oracle(sequence):
    """Reference: accept the first presentation of each counter above every accepted one."""
    best, out = -1, []
    for f in sequence:
        if f > best:
            out.append(Verdict.ACCEPT)
            best = f
        else:
            out.append(Verdict.REJECT_REPLAY)
    return out


def test_server_exhaustive_orderings_of_four_frames_presented_twice():
    frames = {f: signed(f) for f in (0, 1, 2, 3)}
    seqs = set(itertools.permutations([0, 1, 2, 3] * 2))
    assert len(seqs) == 2520
    for seq in seqs:
        s = NetworkServer({TARGET_ADDR: KEYS})
        got = [s.receive(frames[f]) for f in seq]
        assert got == server_oracle(seq)
        assert all(verify_mic(frames[f], KEYS) for f, v in zip(seq, got) if v is Verdict.ACCEPT)
        assert got.count(Verdict.ACCEPT) <= 4


# ------------------------------------------------------------------ adversaries

def test_triggered_jams_every_sf():
    m = run_scenario(triggered_scenario(20)).metrics
    tot = m.totals()
    assert tot.sent == 120 and tot.jammed == 120


def test_triggered_jammer_on_other_channel_jams_nothing():
    m = run_scenario(triggered_scenario(10, jammer_channel=868_300_000)).metrics
    assert m.totals().jammed == 0 and m.totals().delivered == 60


def test_selective_spares_control():
    m = run_scenario(selective_scenario(9, 100, miss_probability=0.0)).metrics
    assert m.devices["target"].jammed == 100
    assert m.devices["control"].delivered == 100


def test_selective_policy_never_delivers_everything():
    s = selective_scenario(8, 30, miss_probability=0.0)
    s = replace(s, adversaries=(replace(s.adversaries[0], policy=JamPolicy("never")),))
    m = run_scenario(s).metrics
    assert m.totals().delivered == 60 and m.jams_sent == 0


def test_selective_join_request_policy_only_hits_join_frames():
    s = selective_scenario(7, 30, miss_probability=0.0)
    join = replace(s.devices[1], mhdr=0x00)
    adv = replace(s.adversaries[0], policy=compile_policy({"mtype": ["JoinRequest"]}, 5))
    m = run_scenario(replace(s, devices=(s.devices[0], join), adversaries=(adv,))).metrics
    assert m.devices["target"].jammed == 0
    assert m.devices["control"].jammed == 30


def test_selective_corruption_starts_after_header():
    r = run_scenario(selective_scenario(10, 50, miss_probability=0.0))
    assert r.corrupted_from and min(v for v in r.corrupted_from.values() if v) >= 12


def test_detection_miss_rate_is_stochastic():
    m = run_scenario(selective_scenario(7, 1000, miss_probability=0.01, seed=5)).metrics
    target = m.devices["target"]
    assert 0 < target.delivered < 30


@pytest.mark.parametrize("sf,size,lo,hi", [(12, 17, 96, 100), (7, 57, 0, 0), (9, 27, 1, 94)])
def test_wormhole_cells(sf, size, lo, hi):
    m = run_scenario(wormhole_scenario(sf, size, frames=100, seed=sf)).metrics.devices["victim"]
    assert lo <= m.jam_pct <= hi


def test_wormhole_success_non_increasing_in_latency():
    rates = [run_scenario(wormhole_scenario(9, 27, frames=100, latency_mean_us=mu, seed=3))
             .metrics.devices["victim"].jammed for mu in (60_000, 100_830, 140_000)]
    assert rates == sorted(rates, reverse=True)


def test_wormhole_success_non_decreasing_in_size():
    rates = [run_scenario(wormhole_scenario(9, size, frames=100, seed=3)).metrics.devices["victim"].jammed
             for size in (17, 27, 37, 47)]
    assert rates == sorted(rates)


def test_sniffer_jammed_itself_is_flagged():
    s = wormhole_scenario(12, 17, frames=5, jammer_at_sniffer_dbm=-20)
    r = run_scenario(s)
    assert r.metrics.sniffer_self_jammed == 5
    assert any(e["kind"] == "SnifferJammedItself" for e in r.log)
    sim = Simulation(s)
    assert sim.adversaries[0].jam_reaches_sniffer(sim.devices["victim"].transmit_now())


def test_replays_are_accepted_and_verify():
    sim = Simulation(wormhole_scenario(12, 17, frames=8, replay=True))
    r = sim.run()
    m = r.metrics.devices["victim"]
    assert m.jammed == 8 and m.replay_accepted == 8 and m.replay_rejected == 0
    for tx in sim.adversaries[0].replays:
        assert verify_mic(tx.wire, KEYS)
