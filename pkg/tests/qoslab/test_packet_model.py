"""
Packet Model Tests

Covers sequence arithmetic, RTP header layout, TS stuffing and PES
length handling, and PacketRecord accessors.
"""

import struct

import pytest

from tools.qoslab.errors import InvalidPacket, PacketError, TruncatedHeader, UnsupportedVersion
from tools.qoslab.packet_model import (
    PES_MAX_PAYLOAD,
    TS_PACKET_SIZE,
    PacketRecord,
    PesPacket,
    RtpPacket,
    TsPacket,
    parse_rtp,
    seconds_to_ns,
    seq_diff,
    seq_succ,
    serialize_rtp,
)


# ============================================
# Sequence arithmetic
# ============================================

class TestSequenceArithmetic:
    def test_successor_wraps(self):
        assert seq_succ(65535) == 0
        assert seq_succ(7) == 8

    def test_signed_difference_across_wrap(self):
        assert seq_diff(0, 65535) == 1
        assert seq_diff(65535, 0) == -1
        assert seq_diff(5, 2) == 3

    def test_half_range_is_negative(self):
        assert seq_diff(32768, 0) == -32768
        assert seq_diff(32767, 0) == 32767

    def test_seconds_to_ns_rounds(self):
        assert seconds_to_ns(0.2) == 200_000_000
        assert seconds_to_ns(396.54) == 396_540_000_000


# ============================================
# RTP
# ============================================

class TestRtp:
    def test_header_layout(self):
        pkt = RtpPacket(sequence_number=0x1234, rtp_timestamp=0xDEADBEEF, ssrc=0x01020304,
                        payload_type=33, marker=True, payload=b"xyz")
        data = serialize_rtp(pkt)
        assert len(data) == 15
        b0, b1, seq, ts, ssrc = struct.unpack("!BBHII", data[:12])
        assert b0 == 0x80
        assert b1 == 0x80 | 33
        assert (seq, ts, ssrc) == (0x1234, 0xDEADBEEF, 0x01020304)
        assert data[12:] == b"xyz"

    def test_sequence_65535_encodes_as_ffff(self):
        data = RtpPacket(sequence_number=65535, rtp_timestamp=0, ssrc=1).to_bytes()
        assert data[2:4] == b"\xff\xff"

    def test_parse_inverts_serialize(self):
        pkt = RtpPacket(sequence_number=9, rtp_timestamp=90000, ssrc=42, payload_type=96, payload=bytes(range(50)))
        assert parse_rtp(serialize_rtp(pkt)) == pkt

    def test_header_only_packet(self):
        pkt = parse_rtp(RtpPacket(sequence_number=1, rtp_timestamp=2, ssrc=3).to_bytes())
        assert pkt.payload == b""
        assert len(pkt) == 12

    def test_truncated_header(self):
        with pytest.raises(TruncatedHeader):
            parse_rtp(b"\x80" * 11)

    def test_unsupported_version(self):
        data = bytearray(RtpPacket(sequence_number=1, rtp_timestamp=2, ssrc=3).to_bytes())
        data[0] = 0x40
        with pytest.raises(UnsupportedVersion):
            parse_rtp(bytes(data))

    @pytest.mark.parametrize("kwargs", [
        {"sequence_number": 65536},
        {"payload_type": 128},
        {"ssrc": -1},
        {"version": 1},
    ])
    def test_field_bounds(self, kwargs):
        base = {"sequence_number": 0, "rtp_timestamp": 0, "ssrc": 0}
        base.update(kwargs)
        with pytest.raises(InvalidPacket):
            RtpPacket(**base)

    def test_errors_share_packet_family(self):
        assert issubclass(TruncatedHeader, PacketError)
        assert TruncatedHeader.exit_code == 3


# ============================================
# TS
# ============================================

class TestTs:
    @pytest.mark.parametrize("size", [0, 1, 100, 182, 183, 184])
    def test_always_188_bytes(self, size):
        pkt = TsPacket(pid=0x100, continuity_counter=5, payload=b"\xAB" * size)
        data = pkt.to_bytes()
        assert len(data) == TS_PACKET_SIZE
        assert data[0] == 0x47
        assert TsPacket.from_bytes(data) == pkt

    def test_short_payload_is_stuffed_with_ff(self):
        data = TsPacket(pid=1, payload=b"\x01\x02").to_bytes()
        af_length = data[4]
        assert af_length == 181
        assert data[6:5 + af_length] == b"\xff" * (af_length - 1)
        assert data[-2:] == b"\x01\x02"

    def test_header_bits(self):
        data = TsPacket(pid=0x1ABC, continuity_counter=15, payload_unit_start=True, payload=b"\x00" * 184).to_bytes()
        assert data[1] & 0x40
        assert ((data[1] & 0x1F) << 8 | data[2]) == 0x1ABC
        assert data[3] & 0x0F == 15
        assert (data[3] >> 4) & 0x03 == 0b01

    def test_bad_sync_byte(self):
        data = bytearray(TsPacket(pid=1).to_bytes())
        data[0] = 0x48
        with pytest.raises(InvalidPacket):
            TsPacket.from_bytes(bytes(data))

    def test_wrong_length(self):
        with pytest.raises(InvalidPacket):
            TsPacket.from_bytes(b"\x47" * 187)

    def test_payload_too_large(self):
        with pytest.raises(InvalidPacket):
            TsPacket(pid=1, payload=b"\x00" * 185)

    def test_pid_bounds(self):
        with pytest.raises(InvalidPacket):
            TsPacket(pid=1 << 13)


# ============================================
# PES
# ============================================

class TestPes:
    def test_bounded_length_field(self):
        data = PesPacket.bounded(0xE0, b"\x11" * 300).to_bytes()
        assert data[:3] == b"\x00\x00\x01"
        assert data[3] == 0xE0
        assert struct.unpack("!H", data[4:6])[0] == 300

    def test_unbounded_length_is_zero(self):
        pes = PesPacket(stream_id=0xE0, payload=b"\x22" * 70000)
        data = pes.to_bytes()
        assert data[4:6] == b"\x00\x00"
        assert PesPacket.from_bytes(data) == pes

    def test_declared_length_must_match(self):
        with pytest.raises(InvalidPacket):
            PesPacket(stream_id=0xE0, payload=b"abc", declared_length=4)

    def test_bounded_payload_limit(self):
        PesPacket.bounded(0xE0, b"\x00" * PES_MAX_PAYLOAD)
        with pytest.raises(InvalidPacket):
            PesPacket.bounded(0xE0, b"\x00" * (PES_MAX_PAYLOAD + 1))

    def test_missing_start_code(self):
        with pytest.raises(InvalidPacket):
            PesPacket.from_bytes(b"\x00\x00\x02\xe0\x00\x00")


# ============================================
# Packet records
# ============================================

class TestPacketRecord:
    def test_never_received(self):
        rec = PacketRecord(stream_id="s", seq=1, send_ns=1000, size_bytes=100)
        assert not rec.received
        assert rec.delay_ns is None
        assert rec.recv_ts is None

    def test_arrived(self):
        rec = PacketRecord(stream_id="s", seq=1, send_ns=1_000_000_000, size_bytes=100)
        got = rec.arrived(1_250_000_000, corrupted=True)
        assert got.received
        assert got.corrupted
        assert got.delay_ns == 250_000_000
        assert got.send_ts == 1.0

    def test_size_must_be_positive(self):
        with pytest.raises(InvalidPacket):
            PacketRecord(stream_id="s", seq=1, send_ns=0, size_bytes=0)
