from __future__ import annotations

import math

import pytest
from hypothesis import given, strategies as st

from lorajam.phy import (
    InvalidRadioParams,
    LatencyModel,
    PayloadTooLarge,
    Prediction,
    RadioParams,
    byte_timeline,
    jamming_window,
    predict_jammable,
    read_point,
    symbol_time,
    time_on_air,
)


def datasheet_airtime_us(sf, bw_hz, cr, preamble, explicit, crc, ldro, pl):
    """Transceiver datasheet formula in float seconds (H = 0 for explicit header)."""
    t_sym = 2.0**sf / bw_hz
    h = 0 if explicit else 1
    de = 1 if ldro else 0
    t_preamble = (preamble + 4.25) * t_sym
    n = 8 + max(math.ceil((8.0 * pl - 4.0 * sf + 28 + 16 * crc - 20 * h) / (4.0 * (sf - 2 * de))) * (cr + 4), 0)
    return round((t_preamble + n * t_sym) * 1e6)


def default_params(sf: int) -> RadioParams:
    return RadioParams(sf=sf)


MU = 100_830
SIGMA = 1_700


def test_symbol_time_examples():
    assert symbol_time(RadioParams(7)) == 1024
    assert symbol_time(RadioParams(12)) == 32768
    assert symbol_time(RadioParams(7, bandwidth_hz=250_000)) == 512


@pytest.mark.parametrize("sf", range(7, 12))
def test_symbol_time_doubles_with_sf(sf):
    assert symbol_time(RadioParams(sf + 1)) == 2 * symbol_time(RadioParams(sf))


def test_symbol_time_halves_with_bandwidth():
    assert symbol_time(RadioParams(7, 250_000)) * 2 == symbol_time(RadioParams(7, 125_000))


def test_ldro_default_policy():
    assert [RadioParams(sf).low_data_rate_opt for sf in range(7, 13)] == [False] * 4 + [True] * 2
    assert RadioParams(12, low_data_rate_opt=False).low_data_rate_opt is False


@pytest.mark.parametrize("kwargs", [
    dict(sf=6), dict(sf=13), dict(sf=8, bandwidth_hz=250_000),
    dict(sf=7, bandwidth_hz=500_000), dict(sf=7, coding_rate=5), dict(sf=7, preamble_symbols=0),
])
def test_invalid_params_rejected(kwargs):
    with pytest.raises(InvalidRadioParams):
        RadioParams(**kwargs)


def test_time_on_air_examples():
    assert time_on_air(RadioParams(7), 17) == 51456
    assert time_on_air(RadioParams(12), 17) == 1318912


@pytest.mark.parametrize("sf,limit", [(12, 59), (10, 59), (9, 123), (8, 230)])
def test_payload_limit_per_data_rate(sf, limit):
    time_on_air(RadioParams(sf), limit)
    with pytest.raises(PayloadTooLarge):
        time_on_air(RadioParams(sf), limit + 1)


params_strategy = st.builds(
    RadioParams,
    sf=st.integers(7, 12),
    coding_rate=st.integers(1, 4),
    preamble_symbols=st.integers(1, 16),
    explicit_header=st.booleans(),
    crc_on=st.booleans(),
)


@given(params_strategy, st.integers(1, 59))
def test_time_on_air_matches_datasheet(params, pl):
    assert time_on_air(params, pl) == datasheet_airtime_us(
        params.sf, params.bandwidth_hz, params.coding_rate, params.preamble_symbols,
        params.explicit_header, params.crc_on, params.low_data_rate_opt, pl)


@given(params_strategy, st.integers(1, 58))
def test_time_on_air_non_decreasing_in_length(params, pl):
    assert time_on_air(params, pl + 1) >= time_on_air(params, pl)


@given(st.integers(1, 59))
def test_time_on_air_strictly_increasing_in_sf(pl):
    times = [time_on_air(RadioParams(sf, low_data_rate_opt=False), pl) for sf in range(7, 13)]
    assert times == sorted(set(times))


@given(params_strategy, st.integers(1, 59))
def test_byte_timeline_shape(params, pl):
    timeline = byte_timeline(params, pl)
    assert [k for k, _ in timeline] == list(range(1, pl + 1))
    times = [t for _, t in timeline]
    assert all(a < b for a, b in zip(times, times[1:]))
    assert times[-1] == time_on_air(params, pl)


def test_byte_five_completes_before_read_point_plus_symbol():
    p = RadioParams(9)
    t5 = dict(byte_timeline(p, 17))[5]
    assert t5 < read_point(p, 5) + symbol_time(p)


@pytest.mark.parametrize("sf,pl,expected", [
    (9, 17, 40960), (9, 27, 102400), (7, 57, 76800), (10, 17, 81920),
])
def test_jamming_window_examples(sf, pl, expected):
    p = default_params(sf)
    expected_oracle = (datasheet_airtime_us(sf, 125_000, 1, 8, True, True, sf >= 11, pl)
                       - datasheet_airtime_us(sf, 125_000, 1, 8, True, True, sf >= 11, 5))
    assert expected_oracle == expected
    assert jamming_window(p, pl, 5) == expected


@given(params_strategy, st.integers(1, 59), st.integers(1, 59))
def test_window_plus_prefix_is_total(params, a, b):
    read, pl = min(a, b), max(a, b)
    assert jamming_window(params, pl, read) + time_on_air(params, read) == time_on_air(params, pl)


def test_prediction_examples():
    lat = LatencyModel(MU, SIGMA)
    assert predict_jammable(default_params(12), 17, 5, lat) is Prediction.SUCCESS
    assert all(predict_jammable(default_params(7), pl, 5, lat) is Prediction.FAIL for pl in range(5, 58))
    assert predict_jammable(default_params(10), 17, 5, lat) is Prediction.FAIL
    assert predict_jammable(default_params(9), 27, 5, lat) is Prediction.MIXED


def test_latency_sampling_truncates_at_zero():
    import random

    rng = random.Random(3)
    lat = LatencyModel(1.0, 50.0)
    assert min(lat.sample(rng) for _ in range(2000)) == 0
    assert LatencyModel(100_830, 0).sample(rng) == 100_830
