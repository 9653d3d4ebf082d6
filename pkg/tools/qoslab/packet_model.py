"""
Packet Model

Byte-exact value types for the RTP / MPEG-TS / PES encapsulation stack and
the timestamped packet records every metric is computed from.

All multi-byte wire fields are big-endian. Timestamps are integer
nanoseconds; float seconds are only derived for display.
"""

import struct
from dataclasses import dataclass, replace
from typing import Optional, Union

from .errors import InvalidPacket, PacketError, TruncatedHeader, UnsupportedVersion

# ============================================
# Constants
# ============================================

SEQ_MOD = 1 << 16
HALF_SEQ = 1 << 15
NS_PER_S = 1_000_000_000

RTP_VERSION = 2
RTP_HEADER_SIZE = 12
RTP_HEADER = struct.Struct("!BBHII")

TS_PACKET_SIZE = 188
TS_HEADER_SIZE = 4
TS_MAX_PAYLOAD = 184
TS_SYNC_BYTE = 0x47
TS_STUFFING = 0xFF

PES_START_CODE = b"\x00\x00\x01"
PES_HEADER_SIZE = 6
PES_MAX_PAYLOAD = 0xFFFF - 5  # 65530: keeps a bounded PES within 65536 bytes
PES_MAX_SIZE = 65536

Buffer = Union[bytes, bytearray, memoryview]


# ============================================
# Sequence arithmetic
# ============================================

def seq_succ(seq: int) -> int:
    """Successor of a 16-bit RTP sequence number."""
    return (seq + 1) % SEQ_MOD


def seq_diff(a: int, b: int) -> int:
    """Signed distance a - b under mod-2^16 arithmetic, in [-2^15, 2^15)."""
    d = (a - b) % SEQ_MOD
    return d - SEQ_MOD if d >= HALF_SEQ else d


def seconds_to_ns(seconds: float) -> int:
    return int(round(seconds * NS_PER_S))


def ns_to_seconds(ns: int) -> float:
    return ns / NS_PER_S


def _check_bits(name: str, value: int, bits: int) -> None:
    if not 0 <= value < (1 << bits):
        raise InvalidPacket(f"{name} must fit in {bits} bits, got {value}")


# ============================================
# RTP
# ============================================

@dataclass(frozen=True)
class RtpPacket:
    """
    RTP packet with the fixed 12-byte header (no CSRC list, no extension).

    Example:
        >>> pkt = RtpPacket(sequence_number=65535, rtp_timestamp=0, ssrc=1)
        >>> pkt.to_bytes()[2:4]
        b'\\xff\\xff'
    """

    sequence_number: int
    rtp_timestamp: int
    ssrc: int
    payload_type: int = 33
    marker: bool = False
    payload: bytes = b""
    version: int = RTP_VERSION

    def __post_init__(self):
        if self.version != RTP_VERSION:
            raise InvalidPacket(f"RTP version must be 2, got {self.version}")
        _check_bits("payload_type", self.payload_type, 7)
        _check_bits("sequence_number", self.sequence_number, 16)
        _check_bits("rtp_timestamp", self.rtp_timestamp, 32)
        _check_bits("ssrc", self.ssrc, 32)

    def to_bytes(self) -> bytes:
        header = RTP_HEADER.pack(
            self.version << 6,
            (int(self.marker) << 7) | self.payload_type,
            self.sequence_number,
            self.rtp_timestamp,
            self.ssrc,
        )
        return header + bytes(self.payload)

    @classmethod
    def from_bytes(cls, buf: Buffer) -> "RtpPacket":
        if len(buf) < RTP_HEADER_SIZE:
            raise TruncatedHeader(f"RTP header needs {RTP_HEADER_SIZE} bytes, got {len(buf)}")
        b0, b1, seq, ts, ssrc = RTP_HEADER.unpack_from(buf, 0)
        version = b0 >> 6
        if version != RTP_VERSION:
            raise UnsupportedVersion(f"unsupported RTP version {version}")
        return cls(
            sequence_number=seq,
            rtp_timestamp=ts,
            ssrc=ssrc,
            payload_type=b1 & 0x7F,
            marker=bool(b1 & 0x80),
            payload=bytes(buf[RTP_HEADER_SIZE:]),
        )

    def __len__(self) -> int:
        return RTP_HEADER_SIZE + len(self.payload)


def serialize_rtp(pkt: RtpPacket) -> bytes:
    """12-byte header followed by the payload."""
    return pkt.to_bytes()


def parse_rtp(buf: Buffer) -> RtpPacket:
    """Inverse of serialize_rtp; raises TruncatedHeader or UnsupportedVersion."""
    return RtpPacket.from_bytes(buf)


# ============================================
# MPEG-TS
# ============================================

@dataclass(frozen=True)
class TsPacket:
    """
    Transport stream packet, always 188 bytes on the wire.

    A payload shorter than 184 bytes is padded with an adaptation field made
    of 0xFF stuffing, so the payload itself round-trips exactly.
    """

    pid: int
    continuity_counter: int = 0
    payload_unit_start: bool = False
    payload: bytes = b""

    def __post_init__(self):
        _check_bits("pid", self.pid, 13)
        _check_bits("continuity_counter", self.continuity_counter, 4)
        if len(self.payload) > TS_MAX_PAYLOAD:
            raise InvalidPacket(f"TS payload too large: {len(self.payload)} > {TS_MAX_PAYLOAD}")

    def to_bytes(self) -> bytes:
        n = len(self.payload)
        if n == TS_MAX_PAYLOAD:
            afc = 0b01
        elif n == 0:
            afc = 0b10
        else:
            afc = 0b11

        out = bytearray(TS_HEADER_SIZE)
        out[0] = TS_SYNC_BYTE
        out[1] = (int(self.payload_unit_start) << 6) | ((self.pid >> 8) & 0x1F)
        out[2] = self.pid & 0xFF
        out[3] = (afc << 4) | self.continuity_counter

        if afc != 0b01:
            af_length = TS_MAX_PAYLOAD - 1 - n
            out.append(af_length)
            if af_length > 0:
                out.append(0x00)  # no adaptation flags
                out.extend(bytes([TS_STUFFING]) * (af_length - 1))
        out.extend(self.payload)
        return bytes(out)

    @classmethod
    def from_bytes(cls, buf: Buffer) -> "TsPacket":
        if len(buf) != TS_PACKET_SIZE:
            raise InvalidPacket(f"TS packet must be {TS_PACKET_SIZE} bytes, got {len(buf)}")
        if buf[0] != TS_SYNC_BYTE:
            raise InvalidPacket(f"invalid sync byte 0x{buf[0]:02X}, expected 0x47")

        pusi = bool(buf[1] & 0x40)
        pid = ((buf[1] & 0x1F) << 8) | buf[2]
        afc = (buf[3] >> 4) & 0x03
        cc = buf[3] & 0x0F

        pos = TS_HEADER_SIZE
        if afc in (0b10, 0b11):
            pos += 1 + buf[pos]
            if pos > TS_PACKET_SIZE:
                raise InvalidPacket("adaptation field overruns the TS packet")
        payload = bytes(buf[pos:]) if afc in (0b01, 0b11) else b""
        return cls(pid=pid, continuity_counter=cc, payload_unit_start=pusi, payload=payload)


# ============================================
# PES
# ============================================

@dataclass(frozen=True)
class PesPacket:
    """
    Packetized elementary stream packet: start code, stream id, length, payload.

    declared_length is the PES_packet_length field; 0 is the unbounded-video
    convention, anything else must equal the payload length.
    """

    stream_id: int
    payload: bytes = b""
    declared_length: int = 0

    def __post_init__(self):
        _check_bits("stream_id", self.stream_id, 8)
        if self.declared_length:
            if self.declared_length != len(self.payload):
                raise InvalidPacket(
                    f"declared_length {self.declared_length} does not match payload {len(self.payload)}"
                )
            if self.declared_length > PES_MAX_PAYLOAD:
                raise InvalidPacket(f"bounded PES payload exceeds {PES_MAX_PAYLOAD} bytes")

    @classmethod
    def bounded(cls, stream_id: int, payload: bytes) -> "PesPacket":
        return cls(stream_id=stream_id, payload=payload, declared_length=len(payload))

    def to_bytes(self) -> bytes:
        return (PES_START_CODE + bytes([self.stream_id])
                + struct.pack("!H", self.declared_length) + bytes(self.payload))

    @classmethod
    def from_bytes(cls, buf: Buffer) -> "PesPacket":
        if len(buf) < PES_HEADER_SIZE or bytes(buf[:3]) != PES_START_CODE:
            raise InvalidPacket("PES packet does not begin with start code 0x000001")
        stream_id = buf[3]
        (declared,) = struct.unpack_from("!H", buf, 4)
        body = bytes(buf[PES_HEADER_SIZE:])
        if declared and len(body) != declared:
            raise PacketError(f"PES length field says {declared} bytes, found {len(body)}")
        return cls(stream_id=stream_id, payload=body, declared_length=declared)

    def __len__(self) -> int:
        return PES_HEADER_SIZE + len(self.payload)


# ============================================
# Packet records
# ============================================

@dataclass(frozen=True)
class PacketRecord:
    """One packet's identity plus its send and receive timestamps."""

    stream_id: str
    seq: int
    send_ns: Optional[int]
    size_bytes: int
    src_port: int = 0
    dst_port: int = 0
    recv_ns: Optional[int] = None
    corrupted: bool = False

    def __post_init__(self):
        _check_bits("seq", self.seq, 16)
        if self.size_bytes <= 0:
            raise InvalidPacket(f"size_bytes must be positive, got {self.size_bytes}")

    @property
    def received(self) -> bool:
        return self.recv_ns is not None

    @property
    def send_ts(self) -> Optional[float]:
        return None if self.send_ns is None else ns_to_seconds(self.send_ns)

    @property
    def recv_ts(self) -> Optional[float]:
        return None if self.recv_ns is None else ns_to_seconds(self.recv_ns)

    @property
    def delay_ns(self) -> Optional[int]:
        if self.send_ns is None or self.recv_ns is None:
            return None
        return self.recv_ns - self.send_ns

    def arrived(self, recv_ns: int, corrupted: bool = False) -> "PacketRecord":
        return replace(self, recv_ns=recv_ns, corrupted=corrupted)
