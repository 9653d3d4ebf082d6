"""
Stream Generator

Deterministic synthetic RTP timelines imitating the camera (CBR), VoD and
DVB MPEG-TS streams of the lab. Every payload carries a CRC32 so the
analyzer can tell a corrupted packet from an intact one.
"""

import logging
import struct
import zlib
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import InvalidProfile, PacketError
from .packet_model import (
    NS_PER_S,
    RTP_HEADER_SIZE,
    SEQ_MOD,
    TS_MAX_PAYLOAD,
    TS_PACKET_SIZE,
    TS_SYNC_BYTE,
    PES_HEADER_SIZE,
    PacketRecord,
    PesPacket,
    RtpPacket,
    seconds_to_ns,
)
from .packetizer import PacketizerConfig, depacketize, pes_to_ts, ts_to_rtp

logger = logging.getLogger(__name__)

CRC_SIZE = 4
RTP_CLOCK_HZ = 90_000
OPAQUE_PAYLOAD_TYPE = 96
VIDEO_STREAM_ID = 0xE0

VALID_MODES = ("cbr", "vbr")
VALID_CARRIAGES = ("opaque", "mpegts")


@dataclass(frozen=True)
class StreamProfile:
    """Generator parameters for one stream."""

    name: str
    packet_payload_bytes: int
    packets_per_minute: int
    duration_s: float = 60.0
    mode: str = "cbr"
    seed: int = 0
    dst_port: int = 5000
    src_port: int = 1234
    first_seq: int = 0
    carriage: str = "opaque"
    ts_per_rtp: int = 7

    def __post_init__(self):
        if self.mode not in VALID_MODES:
            raise InvalidProfile(f"mode must be one of {VALID_MODES}, got {self.mode!r}", field="mode")
        if self.carriage not in VALID_CARRIAGES:
            raise InvalidProfile(
                f"carriage must be one of {VALID_CARRIAGES}, got {self.carriage!r}", field="carriage"
            )
        if self.duration_s <= 0:
            raise InvalidProfile(f"must be positive, got {self.duration_s}", field="duration_s")
        if self.packets_per_minute <= 0:
            raise InvalidProfile(f"must be positive, got {self.packets_per_minute}", field="packets_per_minute")
        if self.packet_payload_bytes < RTP_HEADER_SIZE + CRC_SIZE:
            raise InvalidProfile(
                f"must be at least {RTP_HEADER_SIZE + CRC_SIZE}, got {self.packet_payload_bytes}",
                field="packet_payload_bytes",
            )
        if not 0 <= self.first_seq < SEQ_MOD:
            raise InvalidProfile(f"must be a 16-bit value, got {self.first_seq}", field="first_seq")
        for port_field in ("dst_port", "src_port"):
            port = getattr(self, port_field)
            if not 0 < port < 65536:
                raise InvalidProfile(f"must be a UDP port, got {port}", field=port_field)
        if self.carriage == "mpegts":
            expected = RTP_HEADER_SIZE + self.ts_per_rtp * TS_PACKET_SIZE
            if self.packet_payload_bytes != expected:
                raise InvalidProfile(
                    f"mpegts carriage with ts_per_rtp={self.ts_per_rtp} needs {expected} bytes, "
                    f"got {self.packet_payload_bytes}",
                    field="packet_payload_bytes",
                )

    @property
    def interval_ns(self) -> float:
        """CBR inter-send interval in nanoseconds (60 / packets_per_minute seconds)."""
        return 60 * NS_PER_S / self.packets_per_minute

    @property
    def nominal_bps(self) -> float:
        return self.packets_per_minute * self.packet_payload_bytes * 8 / 60


BUILTIN_PROFILES: Dict[str, StreamProfile] = {
    "stream1-camera": StreamProfile(
        name="stream1-camera", packet_payload_bytes=1372, packets_per_minute=4000,
        dst_port=5000, seed=1,
    ),
    "stream2-vod": StreamProfile(
        name="stream2-vod", packet_payload_bytes=1370, packets_per_minute=5000,
        dst_port=5001, seed=2,
    ),
    "stream3-dvb": StreamProfile(
        name="stream3-dvb", packet_payload_bytes=1372, packets_per_minute=20000,
        dst_port=5002, seed=3,
    ),
}


def builtin_profile(name: str, **overrides) -> StreamProfile:
    """Look up a built-in profile, optionally overriding fields."""
    try:
        profile = BUILTIN_PROFILES[name]
    except KeyError:
        raise InvalidProfile(
            f"unknown profile {name!r} (built-ins: {', '.join(sorted(BUILTIN_PROFILES))})", field="profile"
        ) from None
    return replace(profile, **overrides) if overrides else profile


# ============================================
# Send schedule
# ============================================

def send_schedule(profile: StreamProfile, rng: np.random.Generator) -> np.ndarray:
    """Send timestamps in ns, starting at 0 and strictly below duration."""
    duration_ns = seconds_to_ns(profile.duration_s)
    ppm = profile.packets_per_minute
    minute_ns = 60 * NS_PER_S

    if profile.mode == "cbr":
        count = -(-duration_ns * ppm // minute_ns)
        return np.arange(count, dtype=np.int64) * minute_ns // ppm

    # VBR: per-second packet count uniform in [0.5, 1.5] x nominal
    nominal = ppm / 60
    seconds = -(-duration_ns // NS_PER_S)
    counts = np.rint(rng.uniform(0.5, 1.5, size=seconds) * nominal).astype(np.int64)
    parts = []
    for second, count in enumerate(counts):
        if count <= 0:
            continue
        offsets = np.arange(count, dtype=np.int64) * NS_PER_S // count
        parts.append(second * NS_PER_S + offsets)
    if not parts:
        return np.zeros(0, dtype=np.int64)
    times = np.concatenate(parts)
    return times[times < duration_ns]


# ============================================
# Payloads
# ============================================

def _crc_tag(body: bytes) -> bytes:
    return struct.pack("!I", zlib.crc32(body) & 0xFFFFFFFF)


def _crc_ok(data: bytes) -> bool:
    return len(data) >= CRC_SIZE and _crc_tag(data[:-CRC_SIZE]) == data[-CRC_SIZE:]


def _ts_payload_intact(payload: bytes) -> bool:
    try:
        (pes,) = depacketize([RtpPacket(sequence_number=0, rtp_timestamp=0, ssrc=0, payload=payload)])
    except (PacketError, ValueError):
        return False
    if pes.stream_id != VIDEO_STREAM_ID or not _crc_ok(pes.payload):
        return False
    # header bits the parser skips (TEI, priority, scrambling, stuffing) must match too
    cfg = PacketizerConfig(ts_per_rtp=len(payload) // TS_PACKET_SIZE, ethernet_safe=False)
    rebuilt = pes_to_ts(pes, cfg, payload[3] & 0x0F)
    return b"".join(p.to_bytes() for p in rebuilt) == payload


def payload_intact(payload: bytes) -> bool:
    """
    Check the integrity tag of an RTP payload.

    TS-carried payloads are depacketized, their PES payload CRC checked and
    the TS run rebuilt byte for byte; opaque payloads end in the CRC32 of the
    preceding bytes.
    """
    payload = bytes(payload)
    if payload and len(payload) % TS_PACKET_SIZE == 0 and payload[0] == TS_SYNC_BYTE:
        if _ts_payload_intact(payload):
            return True
    return _crc_ok(payload)


class _TsCarriage:
    """Builds one self-contained PES per RTP packet, continuity running across the stream."""

    def __init__(self, profile: StreamProfile):
        self.cfg = PacketizerConfig(ts_per_rtp=profile.ts_per_rtp, ethernet_safe=False)
        self.pes_payload = profile.ts_per_rtp * TS_MAX_PAYLOAD - PES_HEADER_SIZE
        self.cc = 0

    @property
    def body_size(self) -> int:
        return self.pes_payload - CRC_SIZE

    def build(self, body: bytes, seq: int, ssrc: int, rtp_ts: int) -> RtpPacket:
        pes = PesPacket.bounded(VIDEO_STREAM_ID, body + _crc_tag(body))
        ts_packets = pes_to_ts(pes, self.cfg, self.cc)
        self.cc = (self.cc + len(ts_packets)) % 16
        (rtp,) = ts_to_rtp(ts_packets, self.cfg, seq, ssrc, rtp_timestamp=rtp_ts)
        return rtp


# ============================================
# Generation
# ============================================

def generate(profile: StreamProfile) -> Tuple[List[PacketRecord], List[RtpPacket]]:
    """
    Generate the packet timeline for a profile.

    Returns records (send timestamps only) and the matching RTP packets, both
    in send order. Same profile and seed give bit-identical output.
    """
    rng = np.random.default_rng(profile.seed)
    ssrc = int(rng.integers(0, 1 << 32))
    send_times = send_schedule(profile, rng)
    count = len(send_times)

    carriage: Optional[_TsCarriage] = None
    if profile.carriage == "mpegts":
        carriage = _TsCarriage(profile)
        body_size = carriage.body_size
        payload_type = carriage.cfg.payload_type
    else:
        body_size = profile.packet_payload_bytes - RTP_HEADER_SIZE - CRC_SIZE
        payload_type = OPAQUE_PAYLOAD_TYPE

    noise = rng.bytes(body_size * count)

    records: List[PacketRecord] = []
    packets: List[RtpPacket] = []
    for i in range(count):
        send_ns = int(send_times[i])
        seq = (profile.first_seq + i) % SEQ_MOD
        rtp_ts = (send_ns * RTP_CLOCK_HZ // NS_PER_S) & 0xFFFFFFFF
        body = noise[i * body_size:(i + 1) * body_size]

        if carriage is not None:
            pkt = carriage.build(body, seq, ssrc, rtp_ts)
        else:
            pkt = RtpPacket(
                sequence_number=seq,
                rtp_timestamp=rtp_ts,
                ssrc=ssrc,
                payload_type=payload_type,
                marker=(i == 0),
                payload=body + _crc_tag(body),
            )
        packets.append(pkt)
        records.append(PacketRecord(
            stream_id=profile.name,
            seq=seq,
            send_ns=send_ns,
            size_bytes=len(pkt),
            src_port=profile.src_port,
            dst_port=profile.dst_port,
        ))

    logger.info("generated %d packets for %s (%s, %d B, ssrc=0x%08x)",
                count, profile.name, profile.mode, profile.packet_payload_bytes, ssrc)
    return records, packets
