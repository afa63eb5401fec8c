from __future__ import annotations

import random

import pytest
from cryptography.hazmat.primitives import cmac as crypto_cmac
from cryptography.hazmat.primitives.ciphers import algorithms
from hypothesis import given, strategies as st

from lorajam.codec import (
    Frame,
    MissingFPort,
    SessionKeys,
    TooShort,
    UnknownMType,
    WireFrame,
    cmac,
    decode,
    decode_frame,
    decrypt_payload,
    encode,
    hexdump,
    keystream_xor,
    parse_hexdump,
    verify_mic,
    with_mic,
)
from lorajam.phy import PayloadTooLarge

RFC4493_KEY = bytes.fromhex("2b7e151628aed2a6abf7158809cf4f3c")
RFC4493_MSG = bytes.fromhex(
    "6bc1bee22e409f96e93d7e117393172a"
    "ae2d8a571e03ac9c9eb76fac45af8e51"
    "30c81c46a35ce411e5fbc1191a0a52ef"
    "f69f2445df4f9b17ad2b417be66c3710"
)

# Receive FIFO contents captured on the bench during jamming; the last group is the 4-byte MIC
FIFO_DUMPS = [
    "40 | 63 56 34 12 | 00 00 00 | 01 | 40 D2 83 92 | A8 C8 EB F3",
    "40 | 63 56 34 12 | 00 00 00 | 01 | 40 D2 5D F6 | 71 DA EB CB",
    "40 | 63 56 34 12 | 00 00 00 | 01 | 40 D2 3D 9A | 1A 7A C7 99",
    "40 | 63 56 34 12 | 00 00 00 | 01 | 40 D2 34 90 | D6 F5 FF 69",
]

KEYS = SessionKeys.from_hex("2B7E151628AED2A6ABF7158809CF4F3C", "000102030405060708090A0B0C0D0E0F")


def reference_cmac(key: bytes, msg: bytes) -> bytes:
    c = crypto_cmac.CMAC(algorithms.AES(key))
    c.update(msg)
    return c.finalize()


@pytest.mark.parametrize("length,tag", [
    (0, "bb1d6929e95937287fa37d129b756746"),
    (16, "070a16b46b4d4144f79bdd9dd04a287c"),
    (40, "dfa66747de9ae63030ca32611497c827"),
    (64, "51f0bebf7e3b9d92fc49741779363cfe"),
])
def test_cmac_rfc4493_vectors(length, tag):
    assert cmac(RFC4493_KEY, RFC4493_MSG[:length]).hex() == tag


def test_cmac_zero_key_matches_reference():
    block = bytes(range(16))
    assert cmac(bytes(16), block) == reference_cmac(bytes(16), block)


@given(st.binary(min_size=16, max_size=16), st.binary(max_size=80))
def test_cmac_matches_reference(key, msg):
    assert cmac(key, msg) == reference_cmac(key, msg)


def test_cipher_is_injectable():
    calls = []

    def spy(key, block):
        calls.append(block)
        from lorajam.codec import aes128_encrypt

        return aes128_encrypt(key, block)

    cmac(RFC4493_KEY, RFC4493_MSG[:16], cipher=spy)
    assert len(calls) == 2  # subkey derivation + one block


def test_fifo_dump_header_prefix():
    wire = encode(Frame(dev_addr=0x12345663, fcnt=0, fport=1), KEYS, b"\x00\x01\x02\x03")
    assert wire.data[:9] == bytes.fromhex("406356341200000001")
    assert len(wire) == 17


def test_fifo_dump_row_decodes_without_keys():
    h = decode(parse_hexdump(FIFO_DUMPS[0]))
    assert (h.mhdr, h.dev_addr, h.fcnt, h.fport) == (0x40, 0x12345663, 0, 1)
    assert h.frm_payload == bytes.fromhex("40D28392")


def test_five_byte_prefix_gives_mhdr_and_address():
    h = decode(bytes.fromhex("4063563412"), partial=True)
    assert h.mhdr == 0x40 and h.dev_addr == 0x12345663
    assert h.fctrl is None and h.fcnt is None


def test_hexdump_round_trip_matches_table_grouping():
    for row in FIFO_DUMPS:
        assert hexdump(parse_hexdump(row)) == row


def test_empty_payload_without_port():
    wire = encode(Frame(dev_addr=1, fcnt=7), KEYS)
    assert len(wire) == 12
    assert verify_mic(wire, KEYS)
    h = decode(wire)
    assert h.fport is None and h.frm_payload == b""


def test_fopts_carried_opaquely():
    f = Frame(dev_addr=1, fcnt=7, fctrl=0x03, fopts=b"\x02\x03\x04", fport=5)
    wire = encode(f, KEYS, b"hi")
    assert len(wire) == 12 + 3 + 1 + 2
    assert decode_frame(wire).fopts == b"\x02\x03\x04"


def test_missing_port_rejected():
    with pytest.raises(MissingFPort):
        encode(Frame(dev_addr=1, fcnt=1), KEYS, b"x")


def test_size_limit():
    with pytest.raises(PayloadTooLarge):
        encode(Frame(dev_addr=1, fcnt=1, fport=1), KEYS, bytes(47), max_len=59)


def test_too_short_and_reserved_mtype():
    with pytest.raises(TooShort):
        decode(bytes(11))
    rfu = bytes([0xC0]) + bytes(11)
    assert decode(rfu).known_mtype is False
    with pytest.raises(UnknownMType):
        decode(rfu, strict=True)


frames = st.builds(
    lambda addr, fcnt, port, opts: Frame(dev_addr=addr, fcnt=fcnt, fctrl=len(opts), fopts=opts, fport=port),
    st.integers(0, 2**32 - 1), st.integers(0, 2**16 - 1), st.integers(0, 223),
    st.binary(max_size=15),
)


@given(frames, st.binary(max_size=40))
def test_round_trip(frame, plaintext):
    wire = encode(frame, KEYS, plaintext)
    back = decode_frame(wire)
    assert (back.mhdr, back.dev_addr, back.fctrl, back.fcnt, back.fopts, back.fport) == (
        frame.mhdr, frame.dev_addr, frame.fctrl, frame.fcnt, frame.fopts, frame.fport)
    assert decrypt_payload(wire, KEYS) == plaintext
    assert len(wire) == 1 + 7 + len(frame.fopts) + 1 + len(plaintext) + 4
    assert verify_mic(wire, KEYS)


@given(frames, st.binary(min_size=1, max_size=40), st.integers(9, 60))
def test_header_recoverable_from_any_prefix(frame, plaintext, cut):
    wire = encode(frame, KEYS, plaintext).data
    cut = min(cut, len(wire))
    if cut < 9 + len(frame.fopts):
        return
    h = decode(wire[:cut], partial=True)
    assert (h.mhdr, h.dev_addr, h.fctrl, h.fcnt, h.fport) == (
        frame.mhdr, frame.dev_addr, frame.fctrl, frame.fcnt, frame.fport)


@given(st.binary(min_size=16, max_size=16), st.integers(0, 2**32 - 1), st.integers(0, 2**16 - 1),
       st.binary(max_size=64))
def test_keystream_is_involution(key, addr, fcnt, data):
    assert keystream_xor(key, addr, fcnt, keystream_xor(key, addr, fcnt, data)) == data


def test_single_byte_mutations_never_verify():
    rng = random.Random(20171107)
    wire = encode(Frame(dev_addr=0x12345663, fcnt=0, fport=1), KEYS, b"\x11\x22\x33\x44").data
    accepted = 0
    for _ in range(1000):
        i = rng.randrange(len(wire))
        mutated = bytearray(wire)
        mutated[i] ^= rng.randrange(1, 256)
        accepted += verify_mic(bytes(mutated), KEYS)
    assert accepted == 0
    assert verify_mic(wire, KEYS)


def test_exhaustive_mutations_at_one_position():
    wire = encode(Frame(dev_addr=0x12345663, fcnt=0, fport=1), KEYS, b"\x11\x22\x33\x44").data
    for delta in range(1, 256):
        mutated = bytearray(wire)
        mutated[11] ^= delta
        assert not verify_mic(bytes(mutated), KEYS)


def test_jammed_fifo_dumps_fail_mic():
    # the session key behind these captures is unknown; sign row 1's body
    # under KEYS so row 1 validates, then check the jammed captures against it
    row1 = with_mic(parse_hexdump(FIFO_DUMPS[0]), KEYS)
    assert verify_mic(row1, KEYS)
    for row in FIFO_DUMPS[1:]:
        jammed = parse_hexdump(row)
        assert jammed[:11] == row1[:11]
        assert not verify_mic(jammed, KEYS)
        assert not verify_mic(with_mic(jammed, KEYS)[:-4] + row1[-4:], KEYS)


def test_wireframe_crc_flag_defaults_true():
    assert WireFrame(b"\x40" * 12).crc_ok
