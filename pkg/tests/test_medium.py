from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from lorajam.codec import WireFrame
from lorajam.engine import Engine, SchedulingInPast
from lorajam.medium import (
    CaptureMatrix,
    LinkModel,
    Medium,
    MissingLinkEntry,
    Receiver,
    Status,
    Transmission,
    brute_force_resolve,
    first_overlapping_byte,
    resolve,
)
from lorajam.phy import RadioParams

CH1, CH2 = 868_100_000, 868_300_000


def tx(tx_id, src, start, sf=7, length=17, channel=CH1):
    return Transmission(tx_id, src, channel, RadioParams(sf), WireFrame(bytes(length)), start)


def setup(rssi, capture=None):
    eng = Engine()
    medium = Medium(eng, LinkModel(rssi), capture)
    outcomes = []
    medium.add_receiver(Receiver("gw", multi_demod=True, on_outcome=outcomes.append))
    return eng, medium, outcomes


def by_tx(outcomes):
    return {o.tx.tx_id: o for o in outcomes}


def test_default_matrix_shape_and_diagonal():
    m = CaptureMatrix.default()
    assert all(m.threshold(sf, sf) == -6 for sf in range(7, 13))
    assert m.threshold(7, 8) == 8 and m.threshold(12, 7) == 25


def test_matrix_validation():
    with pytest.raises(ValueError):
        CaptureMatrix(((0,) * 6,) * 5)
    with pytest.raises(ValueError):
        CaptureMatrix(((float("nan"),) * 6,) * 6)


def test_different_channels_both_delivered():
    eng, medium, out = setup({"a": {"gw": -80}, "b": {"gw": -80}})
    medium.schedule(tx(1, "a", 0, channel=CH1))
    medium.schedule(tx(2, "b", 0, channel=CH2))
    eng.run_until()
    assert {o.status for o in out} == {Status.DELIVERED}


def test_equal_power_same_start_both_lost():
    eng, medium, out = setup({"a": {"gw": -80}, "b": {"gw": -80}})
    medium.schedule(tx(1, "a", 0))
    medium.schedule(tx(2, "b", 0))
    eng.run_until()
    assert [o.status for o in out] == [Status.CRC_FAILED] * 2
    assert all(o.corrupted_from_byte == 1 for o in out)


def test_disjoint_same_channel_both_delivered():
    eng, medium, out = setup({"a": {"gw": -80}, "b": {"gw": -80}})
    first = medium.schedule(tx(1, "a", 0))
    medium.schedule(tx(2, "b", first.end))
    eng.run_until()
    assert [o.status for o in out] == [Status.DELIVERED] * 2


def sf12_capture():
    return CaptureMatrix.default().with_override(12, 12, 36)


@pytest.mark.parametrize("is_rssi,status", [(-40, Status.CRC_FAILED), (-60, Status.DELIVERED)])
def test_sf12_threshold_36db(is_rssi, status):
    eng, medium, out = setup({"dev": {"gw": -80}, "jam": {"gw": is_rssi}}, sf12_capture())
    medium.schedule(tx(1, "dev", 0, sf=12))
    medium.schedule(tx(2, "jam", 500_000, sf=12, length=10))
    eng.run_until()
    assert by_tx(out)[1].status is status


def test_later_frame_is_not_received_by_locked_gateway():
    eng, medium, out = setup({"dev": {"gw": -80}, "jam": {"gw": -40}})
    medium.schedule(tx(1, "dev", 0))
    medium.schedule(tx(2, "jam", 30_000, length=10))
    eng.run_until()
    got = by_tx(out)
    assert got[1].status is Status.CRC_FAILED and got[1].culprits == (2,)
    assert got[2].status is Status.NOT_HEARD


def test_capture_is_asymmetric():
    links = LinkModel({"a": {"gw": -80}, "b": {"gw": -60}})
    m = CaptureMatrix.default()
    a, b = tx(1, "a", 0), tx(2, "b", 0)
    assert resolve(a, [b], "gw", links, m).status is Status.CRC_FAILED
    assert resolve(b, [a], "gw", links, m).status is Status.DELIVERED


def test_missing_link_entry():
    with pytest.raises(MissingLinkEntry):
        resolve(tx(1, "a", 0), [tx(2, "b", 0)], "gw", LinkModel({"a": {"gw": -80}}), CaptureMatrix.default())


def test_interference_confined_to_preamble_is_harmless_when_it_ends_before_payload():
    desired = tx(1, "a", 10_000)
    # ends before the desired frame's preamble finishes
    assert first_overlapping_byte(desired, 0, desired.boundaries[0]) is None
    assert first_overlapping_byte(desired, 0, desired.boundaries[0] + 1) == 1


def test_scheduling_in_past_rejected():
    eng, medium, _ = setup({"a": {"gw": -80}})
    eng.run_until(1000)
    with pytest.raises(SchedulingInPast):
        medium.schedule(tx(1, "a", 10))


def test_empty_run_has_empty_log():
    eng, _, _ = setup({})
    assert len(eng.run_until(10**9)) == 0


def test_hundred_frames_single_device_delivered():
    eng, medium, out = setup({"a": {"gw": -80}})
    for i in range(100):
        medium.schedule(tx(i + 1, "a", i * 100_000))
    eng.run_until()
    assert len(out) == 100 and all(o.status is Status.DELIVERED for o in out)


def test_half_duplex_transmitter_drops_its_reception():
    eng = Engine()
    medium = Medium(eng, LinkModel({"a": {"r": -70}, "r": {}}))
    got = []
    medium.add_receiver(Receiver("r", on_outcome=got.append))
    medium.schedule(tx(1, "a", 0))
    medium.schedule(tx(2, "r", 5_000, channel=CH2))
    eng.run_until()
    assert got[0].status is Status.NOT_HEARD


def test_prefix_intact_query():
    eng, medium, _ = setup({"dev": {"gw": -80}, "jam": {"gw": -40}})
    d = medium.schedule(tx(1, "dev", 0))
    medium.schedule(tx(2, "jam", d.boundaries[6], length=10))
    answers = {}
    eng.schedule(d.boundaries[5], lambda: answers.setdefault("early", medium.prefix_intact("gw", d, 5)))
    eng.schedule(d.boundaries[9], lambda: answers.setdefault("late", medium.prefix_intact("gw", d, 9)))
    eng.run_until()
    assert answers == {"early": True, "late": False}


def random_case(rng):
    sfs = [rng.randint(7, 12) for _ in range(3)]
    n = rng.randint(1, 3)
    links = LinkModel({f"n{i}": {"gw": rng.uniform(-120, -30)} for i in range(n)})
    txs = []
    for i in range(n):
        p = RadioParams(sfs[i])
        length = rng.randint(1, 40)
        txs.append(Transmission(i + 1, f"n{i}", rng.choice([CH1, CH1, CH2]), p,
                                WireFrame(bytes(length)), rng.randint(0, 400_000)))
    return txs, links


def test_resolve_matches_bytewise_oracle_on_seeded_corpus():
    rng = random.Random(200)
    m = CaptureMatrix.default()
    for _ in range(200):
        txs, links = random_case(rng)
        for d in txs:
            others = [o for o in txs if o is not d and o.overlaps(d.start, d.end)]
            got = resolve(d, others, "gw", links, m)
            assert (got.status, got.corrupted_from_byte) == brute_force_resolve(d, others, "gw", links, m)


@settings(max_examples=200)
@given(st.randoms(use_true_random=False))
def test_corruption_never_precedes_overlap(rng):
    txs, links = random_case(rng)
    m = CaptureMatrix.default()
    for d in txs:
        others = [o for o in txs if o is not d and o.overlaps(d.start, d.end)]
        got = resolve(d, others, "gw", links, m)
        if got.status is Status.CRC_FAILED:
            k = got.corrupted_from_byte
            lo, hi = d.boundaries[k - 1], d.boundaries[k]
            assert any(o.start < hi and o.end > lo for o in others if o.tx_id in got.culprits)


def test_same_seed_same_digest():
    def run():
        rng = random.Random(9)
        eng, medium, _ = setup({f"n{i}": {"gw": -80 - i} for i in range(5)})
        for i in range(50):
            medium.schedule(tx(i + 1, f"n{i % 5}", rng.randint(0, 2_000_000), sf=rng.randint(7, 9)))
        return eng.run_until().digest()

    assert run() == run()
