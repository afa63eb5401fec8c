"""LoRaWAN 1.0 uplink frames: build, parse, MIC and payload encryption.

Header fields sit in clear text ahead of the encrypted payload, so
:func:`decode` needs no key material and works on any prefix long enough to
hold the field being asked for.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Callable

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .phy import PayloadTooLarge

BlockCipher = Callable[[bytes, bytes], bytes]
"""``encrypt(key, block) -> block`` on 16-byte values."""

UPLINK = 0
MIN_FRAME_LEN = 12  # MHDR + FHDR(7) + MIC, no FPort
HEADER_OVERHEAD = 13  # the same with FPort


def aes128_encrypt(key: bytes, block: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


class CodecError(ValueError):
    pass


class TooShort(CodecError):
    pass


class MissingFPort(CodecError):
    pass


class UnknownMType(CodecError):
    pass


class MType(enum.IntEnum):
    JOIN_REQUEST = 0
    JOIN_ACCEPT = 1
    UNCONFIRMED_UP = 2
    UNCONFIRMED_DOWN = 3
    CONFIRMED_UP = 4
    CONFIRMED_DOWN = 5
    RFU = 6
    PROPRIETARY = 7


# ---------------------------------------------------------------- CMAC

_RB = 0x87


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def _dbl(block: bytes) -> bytes:
    n = int.from_bytes(block, "big") << 1
    if n >> 128:
        n = (n & ((1 << 128) - 1)) ^ _RB
    return n.to_bytes(16, "big")


def cmac(key: bytes, message: bytes, cipher: BlockCipher = aes128_encrypt) -> bytes:
    """AES-CMAC (RFC 4493) built on a raw block encryption function."""
    k1 = _dbl(cipher(key, bytes(16)))
    k2 = _dbl(k1)
    blocks = [message[i:i + 16] for i in range(0, len(message), 16)] or [b""]
    last = blocks[-1]
    if len(last) == 16:
        last = _xor(last, k1)
    else:
        last = _xor(last + b"\x80" + bytes(15 - len(last)), k2)
    x = bytes(16)
    for b in blocks[:-1]:
        x = cipher(key, _xor(x, b))
    return cipher(key, _xor(x, last))


# ---------------------------------------------------------------- frames

@dataclass(frozen=True)
class SessionKeys:
    nwk_skey: bytes = field(repr=False)
    app_skey: bytes = field(repr=False)

    def __post_init__(self) -> None:
        if len(self.nwk_skey) != 16 or len(self.app_skey) != 16:
            raise CodecError("session keys must be 16 bytes")

    @classmethod
    def from_hex(cls, nwk: str, app: str) -> SessionKeys:
        return cls(bytes.fromhex(nwk), bytes.fromhex(app))


@dataclass(frozen=True)
class Frame:
    """Logical uplink frame. ``dev_addr`` is the integer address; it goes on
    the wire little-endian, like every other multi-byte field."""

    dev_addr: int
    fcnt: int
    mhdr: int = 0x40
    fctrl: int = 0x00
    fopts: bytes = b""
    fport: int | None = None
    frm_payload: bytes = b""
    mic: bytes = b""

    def __post_init__(self) -> None:
        if not 0 <= self.dev_addr < 2**32:
            raise CodecError("dev_addr out of range")
        if not 0 <= self.fcnt < 2**16:
            raise CodecError("fcnt must be a 16-bit counter")
        if len(self.fopts) > 15 or len(self.fopts) != self.fctrl & 0x0F:
            raise CodecError("FOpts length must match the FCtrl low nibble")

    @property
    def mtype(self) -> int:
        return self.mhdr >> 5

    @property
    def wire_len(self) -> int:
        return 8 + len(self.fopts) + (self.fport is not None) + len(self.frm_payload) + 4


@dataclass(frozen=True)
class WireFrame:
    data: bytes
    crc_ok: bool = True

    def __len__(self) -> int:
        return len(self.data)


def _block_a(dev_addr: int, fcnt: int, i: int, direction: int = UPLINK) -> bytes:
    return b"\x01" + bytes(4) + bytes([direction]) + struct.pack("<II", dev_addr, fcnt) + b"\x00" + bytes([i])


def keystream_xor(key: bytes, dev_addr: int, fcnt: int, data: bytes,
                  cipher: BlockCipher = aes128_encrypt) -> bytes:
    """FRMPayload encryption; applying it twice restores the input."""
    out = bytearray()
    for i in range(0, len(data), 16):
        s = cipher(key, _block_a(dev_addr, fcnt, i // 16 + 1))
        out += _xor(data[i:i + 16], s)
    return bytes(out)


def compute_mic(nwk_skey: bytes, msg: bytes, dev_addr: int, fcnt: int,
                cipher: BlockCipher = aes128_encrypt) -> bytes:
    b0 = b"\x49" + bytes(4) + bytes([UPLINK]) + struct.pack("<II", dev_addr, fcnt) + b"\x00" + bytes([len(msg)])
    return cmac(nwk_skey, b0 + msg, cipher)[:4]


def _header_bytes(frame: Frame) -> bytes:
    hdr = bytes([frame.mhdr]) + struct.pack("<IBH", frame.dev_addr, frame.fctrl, frame.fcnt) + frame.fopts
    if frame.fport is not None:
        hdr += bytes([frame.fport])
    return hdr


def encode(frame: Frame, keys: SessionKeys, plaintext: bytes = b"", *,
           max_len: int | None = None, cipher: BlockCipher = aes128_encrypt) -> WireFrame:
    """Encrypt ``plaintext`` into ``frame`` and sign it. ``frame.frm_payload``
    and ``frame.mic`` are ignored on input."""
    if plaintext and frame.fport is None:
        raise MissingFPort("a non-empty payload needs an FPort")
    key = keys.nwk_skey if frame.fport == 0 else keys.app_skey
    enc = keystream_xor(key, frame.dev_addr, frame.fcnt, plaintext, cipher)
    msg = _header_bytes(frame) + enc
    if max_len is not None and len(msg) + 4 > max_len:
        raise PayloadTooLarge(f"frame of {len(msg) + 4} bytes exceeds {max_len}")
    return WireFrame(msg + compute_mic(keys.nwk_skey, msg, frame.dev_addr, frame.fcnt, cipher))


@dataclass(frozen=True)
class DecodedHeader:
    """Whatever the prefix reveals. Fields beyond the prefix are ``None``."""

    mhdr: int
    dev_addr: int | None = None
    fctrl: int | None = None
    fcnt: int | None = None
    fport: int | None = None
    frm_payload: bytes | None = None
    mic: bytes | None = None
    known_mtype: bool = True

    @property
    def mtype(self) -> int:
        return self.mhdr >> 5


def decode(data: bytes | WireFrame, *, partial: bool = False, strict: bool = False) -> DecodedHeader:
    """Parse header fields without keys.

    With ``partial`` set, ``data`` may be any non-empty prefix and only the
    fields it fully covers are returned; otherwise it must be a whole frame.
    Reserved MType or major-version values are flagged through
    ``known_mtype``; ``strict`` turns them into :class:`UnknownMType`.
    """
    if isinstance(data, WireFrame):
        data = data.data
    if not partial and len(data) < MIN_FRAME_LEN:
        raise TooShort(f"frame of {len(data)} bytes is shorter than {MIN_FRAME_LEN}")
    if not data:
        raise TooShort("empty frame")
    mhdr = data[0]
    known = (mhdr >> 5) != MType.RFU and mhdr & 0x03 == 0
    if strict and not known:
        raise UnknownMType(f"reserved MHDR value 0x{mhdr:02X}")
    fields: dict = {"mhdr": mhdr, "known_mtype": known}
    if len(data) >= 5:
        fields["dev_addr"] = struct.unpack_from("<I", data, 1)[0]
    if len(data) >= 6:
        fields["fctrl"] = data[5]
    if len(data) >= 8:
        fields["fcnt"] = struct.unpack_from("<H", data, 6)[0]
    if partial:
        # a prefix cannot tell FPort from MIC; assume a data frame with a port
        if len(data) >= 6 and len(data) > 8 + (data[5] & 0x0F):
            fields["fport"] = data[8 + (data[5] & 0x0F)]
        return DecodedHeader(**fields)
    fopts_len = data[5] & 0x0F
    body_end = len(data) - 4
    port_at = 8 + fopts_len
    if port_at > body_end:
        raise TooShort("FOpts run into the MIC")
    if port_at < body_end:
        fields["fport"] = data[port_at]
        fields["frm_payload"] = data[port_at + 1:body_end]
    else:
        fields["frm_payload"] = b""
    fields["mic"] = data[body_end:]
    return DecodedHeader(**fields)


def decode_frame(data: bytes | WireFrame) -> Frame:
    """Full structural parse into a :class:`Frame` (payload stays encrypted)."""
    if isinstance(data, WireFrame):
        data = data.data
    h = decode(data)
    fopts_len = h.fctrl & 0x0F
    return Frame(dev_addr=h.dev_addr, fcnt=h.fcnt, mhdr=h.mhdr, fctrl=h.fctrl,
                 fopts=bytes(data[8:8 + fopts_len]), fport=h.fport,
                 frm_payload=h.frm_payload, mic=h.mic)


def decrypt_payload(data: bytes | WireFrame, keys: SessionKeys,
                    cipher: BlockCipher = aes128_encrypt) -> bytes:
    h = decode(data)
    key = keys.nwk_skey if h.fport == 0 else keys.app_skey
    return keystream_xor(key, h.dev_addr, h.fcnt, h.frm_payload, cipher)


def verify_mic(data: bytes | WireFrame, keys: SessionKeys,
               cipher: BlockCipher = aes128_encrypt) -> bool:
    if isinstance(data, WireFrame):
        data = data.data
    if len(data) < MIN_FRAME_LEN:
        return False
    dev_addr, fcnt = struct.unpack_from("<I", data, 1)[0], struct.unpack_from("<H", data, 6)[0]
    return compute_mic(keys.nwk_skey, data[:-4], dev_addr, fcnt, cipher) == data[-4:]


def hexdump(data: bytes | WireFrame) -> str:
    """Render as ``type | devaddr | fctrl+fcnt | fport | payload | mic``."""
    if isinstance(data, WireFrame):
        data = data.data
    h = decode(data)
    fopts_end = 8 + (h.fctrl & 0x0F)

    def hx(b: bytes) -> str:
        return " ".join(f"{x:02X}" for x in b)

    cols = [hx(data[0:1]), hx(data[1:5]), hx(data[5:fopts_end])]
    if h.fport is not None:
        cols += [hx(data[fopts_end:fopts_end + 1]), hx(h.frm_payload)]
    else:
        cols += ["", ""]
    cols.append(hx(h.mic))
    return " | ".join(cols)


def parse_hexdump(text: str) -> bytes:
    return bytes.fromhex(text.replace("|", " "))


def with_mic(data: bytes, keys: SessionKeys) -> bytes:
    """Re-sign an arbitrary frame body (everything but the trailing MIC)."""
    dev_addr, fcnt = struct.unpack_from("<I", data, 1)[0], struct.unpack_from("<H", data, 6)[0]
    return data[:-4] + compute_mic(keys.nwk_skey, data[:-4], dev_addr, fcnt)


__all__ = [
    "BlockCipher", "CodecError", "DecodedHeader", "Frame", "MType", "MissingFPort",
    "SessionKeys", "TooShort", "UnknownMType", "WireFrame", "aes128_encrypt", "cmac",
    "compute_mic", "decode", "decode_frame", "decrypt_payload", "encode", "hexdump",
    "keystream_xor", "parse_hexdump", "verify_mic", "with_mic",
]
