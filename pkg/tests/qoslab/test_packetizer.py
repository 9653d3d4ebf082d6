"""
Packetizer Tests

PES -> TS -> RTP encapsulation and the reverse path.
"""

import unittest

import numpy as np
import pytest

from tools.qoslab.errors import ContinuityBreak, InvalidPacket, MissingStart, PacketError
from tools.qoslab.packet_model import TS_PACKET_SIZE, PesPacket, RtpPacket, TsPacket
from tools.qoslab.packetizer import (
    PacketizerConfig,
    depacketize,
    packetize,
    pes_to_ts,
    rtp_to_ts,
    split_pes_runs,
    ts_to_pes,
    ts_to_rtp,
)


@pytest.fixture
def cfg():
    return PacketizerConfig(pid=0x100, ts_per_rtp=7)


class TestPacketizerConfig(unittest.TestCase):
    def test_seven_ts_packets_fit_ethernet(self):
        self.assertEqual(PacketizerConfig(ts_per_rtp=7).rtp_size, 1328)

    def test_eight_ts_packets_exceed_mtu(self):
        with self.assertRaises(InvalidPacket):
            PacketizerConfig(ts_per_rtp=8)

    def test_mtu_check_can_be_disabled(self):
        self.assertEqual(PacketizerConfig(ts_per_rtp=8, ethernet_safe=False).rtp_size, 12 + 8 * 188)

    def test_ts_per_rtp_positive(self):
        with self.assertRaises(InvalidPacket):
            PacketizerConfig(ts_per_rtp=0)


class TestPesToTs:
    def test_packet_count_and_flags(self, cfg):
        pes = PesPacket.bounded(0xE0, b"\x5A" * 1000)
        packets = pes_to_ts(pes, cfg)
        # 1006 bytes over 184-byte payloads
        assert len(packets) == 6
        assert packets[0].payload_unit_start
        assert not any(p.payload_unit_start for p in packets[1:])
        assert all(len(p.to_bytes()) == TS_PACKET_SIZE for p in packets)

    def test_continuity_counter_wraps(self, cfg):
        packets = pes_to_ts(PesPacket.bounded(0xE0, b"\x00" * 5000), cfg, cc_start=14)
        counters = [p.continuity_counter for p in packets]
        assert counters[:4] == [14, 15, 0, 1]
        assert all((b - a) % 16 == 1 for a, b in zip(counters, counters[1:]))

    def test_reassembly(self, cfg):
        pes = PesPacket.bounded(0xE0, bytes(range(256)) * 4)
        assert ts_to_pes(pes_to_ts(pes, cfg)) == pes


class TestTsToPes:
    def test_missing_start(self, cfg):
        packets = pes_to_ts(PesPacket.bounded(0xE0, b"\x00" * 500), cfg)
        with pytest.raises(MissingStart):
            ts_to_pes(packets[1:])

    def test_empty_input(self):
        with pytest.raises(MissingStart):
            ts_to_pes([])

    def test_continuity_break_reports_position(self, cfg):
        packets = pes_to_ts(PesPacket.bounded(0xE0, b"\x00" * 800), cfg)
        del packets[2]
        with pytest.raises(ContinuityBreak) as info:
            ts_to_pes(packets)
        assert info.value.position == 2
        assert info.value.expected == 2
        assert info.value.found == 3

    def test_mixed_pids(self, cfg):
        packets = pes_to_ts(PesPacket.bounded(0xE0, b"\x00" * 400), cfg)
        packets[1] = TsPacket(pid=0x101, continuity_counter=1, payload=packets[1].payload)
        with pytest.raises(PacketError):
            ts_to_pes(packets)


class TestRtpGrouping:
    def test_groups_of_ts_per_rtp(self, cfg):
        ts = pes_to_ts(PesPacket.bounded(0xE0, b"\x01" * 3000), cfg)
        rtps = ts_to_rtp(ts, cfg, seq0=65534, ssrc=7)
        assert [p.sequence_number for p in rtps] == [65534, 65535, 0]
        assert all(len(p.payload) % TS_PACKET_SIZE == 0 for p in rtps)
        assert len(rtps[0]) == cfg.rtp_size
        assert all(p.payload_type == 33 for p in rtps)

    def test_rtp_to_ts_rejects_partial_payload(self):
        with pytest.raises(PacketError):
            rtp_to_ts([RtpPacket(sequence_number=0, rtp_timestamp=0, ssrc=0, payload=b"\x47" * 100)])

    def test_split_runs(self, cfg):
        a = pes_to_ts(PesPacket.bounded(0xE0, b"\x00" * 400), cfg)
        b = pes_to_ts(PesPacket.bounded(0xE0, b"\x01" * 10), cfg, cc_start=len(a))
        runs = split_pes_runs(a + b)
        assert [len(r) for r in runs] == [len(a), len(b)]


class TestRoundTrip:
    @pytest.mark.parametrize("size", [0, 1, 183, 184, 1000, 65530, 65531, 200000])
    def test_packetize_depacketize(self, cfg, size):
        es = np.random.default_rng(size).bytes(size)
        rtps = packetize(es, cfg, stream_id=0xE0, seq0=100, ssrc=1)
        pes_list = depacketize(rtps)
        assert b"".join(p.payload for p in pes_list) == es
        assert all(p.declared_length == len(p.payload) for p in pes_list)

    def test_survives_wire_bytes(self, cfg):
        es = b"\xC3" * 9000
        wire = [p.to_bytes() for p in packetize(es, cfg, stream_id=0xE0, seq0=0, ssrc=5)]
        parsed = [RtpPacket.from_bytes(w) for w in wire]
        assert b"".join(p.payload for p in depacketize(parsed)) == es
