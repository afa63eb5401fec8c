"""LoRa physical-layer timing.

All durations are integer microseconds. Symbol times for the supported
(SF, bandwidth) set are exact integers; the 4.25-symbol sync term is rounded
once per frame.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction

Micros = int

# (sf, bandwidth_hz) -> (data rate index, maximum frame size in bytes)
DATA_RATES: dict[tuple[int, int], tuple[int, int]] = {
    (12, 125_000): (0, 59),
    (11, 125_000): (1, 59),
    (10, 125_000): (2, 59),
    (9, 125_000): (3, 123),
    (8, 125_000): (4, 230),
    (7, 125_000): (5, 230),
    (7, 250_000): (6, 230),
}

SYNC_SYMBOLS = Fraction(17, 4)  # 2 sync upchirps + 2.25 downchirps


class PhyError(ValueError):
    pass


class InvalidRadioParams(PhyError):
    pass


class PayloadTooLarge(PhyError):
    pass


@dataclass(frozen=True)
class RadioParams:
    """PHY configuration of one LoRa transmission.

    ``coding_rate`` is the CR index (1..4 for 4/5..4/8). ``low_data_rate_opt``
    left as ``None`` follows the transceiver default: on for SF11/SF12 at
    125 kHz.
    """

    sf: int
    bandwidth_hz: int = 125_000
    coding_rate: int = 1
    preamble_symbols: int = 8
    explicit_header: bool = True
    crc_on: bool = True
    low_data_rate_opt: bool | None = field(default=None)

    def __post_init__(self) -> None:
        if self.sf not in range(7, 13):
            raise InvalidRadioParams(f"sf must be in 7..12, got {self.sf}")
        if self.bandwidth_hz not in (125_000, 250_000):
            raise InvalidRadioParams(f"bandwidth must be 125000 or 250000 Hz, got {self.bandwidth_hz}")
        if (self.sf, self.bandwidth_hz) not in DATA_RATES:
            raise InvalidRadioParams(f"SF{self.sf}/{self.bandwidth_hz} Hz is not a LoRaWAN data rate")
        if self.coding_rate not in range(1, 5):
            raise InvalidRadioParams(f"coding_rate must be in 1..4, got {self.coding_rate}")
        if self.preamble_symbols < 1:
            raise InvalidRadioParams("preamble_symbols must be >= 1")
        if self.low_data_rate_opt is None:
            object.__setattr__(self, "low_data_rate_opt", self.sf >= 11 and self.bandwidth_hz == 125_000)

    @property
    def data_rate(self) -> int:
        return DATA_RATES[(self.sf, self.bandwidth_hz)][0]

    @property
    def max_frame_size(self) -> int:
        return DATA_RATES[(self.sf, self.bandwidth_hz)][1]

    def with_sf(self, sf: int) -> RadioParams:
        # LDRO is re-derived unless it was set explicitly away from the default
        default_ldro = self.sf >= 11 and self.bandwidth_hz == 125_000
        ldro = None if self.low_data_rate_opt == default_ldro else self.low_data_rate_opt
        return RadioParams(sf, self.bandwidth_hz, self.coding_rate, self.preamble_symbols,
                           self.explicit_header, self.crc_on, ldro)


def _check_payload(params: RadioParams, payload_len: int) -> None:
    if payload_len < 1:
        raise PhyError(f"payload length must be >= 1, got {payload_len}")
    if payload_len > params.max_frame_size:
        raise PayloadTooLarge(
            f"{payload_len} bytes exceeds the {params.max_frame_size}-byte limit of DR{params.data_rate}"
        )


def symbol_time(params: RadioParams) -> Micros:
    return (2**params.sf * 1_000_000) // params.bandwidth_hz


def preamble_time(params: RadioParams) -> Micros:
    return round((params.preamble_symbols + SYNC_SYMBOLS) * symbol_time(params))


def payload_symbols(params: RadioParams, payload_len: int) -> int:
    """Number of symbols after the preamble (header block included)."""
    sf = params.sf
    num = 8 * payload_len - 4 * sf + 28 + 16 * params.crc_on - 20 * (not params.explicit_header)
    den = 4 * (sf - 2 * params.low_data_rate_opt)
    return 8 + max(math.ceil(num / den) * (params.coding_rate + 4), 0)


def time_on_air(params: RadioParams, payload_len: int) -> Micros:
    _check_payload(params, payload_len)
    return preamble_time(params) + payload_symbols(params, payload_len) * symbol_time(params)


def byte_timeline(params: RadioParams, payload_len: int) -> list[tuple[int, Micros]]:
    """Completion offset of each byte ``1..payload_len`` relative to frame start.

    Bytes are spread linearly over the payload-symbol block, so the last byte
    completes exactly at ``time_on_air``.
    """
    _check_payload(params, payload_len)
    pre = preamble_time(params)
    block = payload_symbols(params, payload_len) * symbol_time(params)
    return [(k, pre + block * k // payload_len) for k in range(1, payload_len + 1)]


def byte_boundaries(params: RadioParams, payload_len: int) -> list[Micros]:
    """``[c0, c1, ..., cPL]`` where byte k occupies ``[c(k-1), c(k))`` and c0 is the preamble end."""
    return [preamble_time(params)] + [t for _, t in byte_timeline(params, payload_len)]


def read_point(params: RadioParams, read_bytes: int) -> Micros:
    """Offset at which a receiver holds the first ``read_bytes`` bytes of a frame.

    Matches the airtime of a ``read_bytes``-byte frame, header included, which
    is the same quantity the jamming window subtracts.
    """
    return time_on_air(params, read_bytes)


def jamming_window(params: RadioParams, payload_len: int, read_bytes: int) -> Micros:
    if read_bytes < 1:
        raise PhyError("read_bytes must be >= 1")
    if payload_len < read_bytes:
        raise PhyError("payload_len must be >= read_bytes")
    return time_on_air(params, payload_len) - time_on_air(params, read_bytes)


@dataclass(frozen=True)
class LatencyModel:
    """Gaussian reaction latency, truncated at zero when sampled."""

    mean_us: float
    std_us: float = 0.0

    def __post_init__(self) -> None:
        if self.mean_us < 0 or self.std_us < 0:
            raise PhyError("latency mean and deviation must be non-negative")

    def sample(self, rng) -> Micros:
        if self.std_us == 0:
            return round(self.mean_us)
        return max(0, round(rng.gauss(self.mean_us, self.std_us)))


class Prediction(str, enum.Enum):
    SUCCESS = "S"
    MIXED = "M"
    FAIL = "F"


def predict_jammable(params: RadioParams, payload_len: int, read_bytes: int,
                     latency: LatencyModel) -> Prediction:
    """Classify a (params, size) pair against a reaction latency.

    The mixed band spans mean +/- 3 sigma, widened by one symbol on the
    success side.
    """
    window = jamming_window(params, payload_len, read_bytes)
    if window >= latency.mean_us + 3 * latency.std_us + symbol_time(params):
        return Prediction.SUCCESS
    if window <= latency.mean_us - 3 * latency.std_us:
        return Prediction.FAIL
    return Prediction.MIXED
