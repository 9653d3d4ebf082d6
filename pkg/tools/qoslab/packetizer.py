"""
Packetizer

Encapsulation pipeline: elementary-stream bytes -> PES -> 188-byte TS
packets -> RTP payloads carrying up to ts_per_rtp TS packets each, and the
inverse path used by the analyzer to check TS-carried payloads.
"""

from dataclasses import dataclass
from typing import Iterable, List, Sequence

from .errors import ContinuityBreak, InvalidPacket, MissingStart, PacketError
from .packet_model import (
    PES_MAX_PAYLOAD,
    RTP_HEADER_SIZE,
    SEQ_MOD,
    TS_MAX_PAYLOAD,
    TS_PACKET_SIZE,
    PesPacket,
    RtpPacket,
    TsPacket,
)

ETHERNET_MTU = 1500
MP2T_PAYLOAD_TYPE = 33
DEFAULT_PID = 0x100


@dataclass(frozen=True)
class PacketizerConfig:
    """Configuration for PES/TS/RTP packetization."""

    pid: int = DEFAULT_PID
    ts_per_rtp: int = 7
    pes_max_payload: int = PES_MAX_PAYLOAD
    ethernet_safe: bool = True
    payload_type: int = MP2T_PAYLOAD_TYPE

    def __post_init__(self):
        if not 0 <= self.pid < (1 << 13):
            raise InvalidPacket(f"pid must fit in 13 bits, got {self.pid}")
        if self.ts_per_rtp < 1:
            raise InvalidPacket(f"ts_per_rtp must be >= 1, got {self.ts_per_rtp}")
        if not 1 <= self.pes_max_payload <= PES_MAX_PAYLOAD:
            raise InvalidPacket(f"pes_max_payload must be in 1..{PES_MAX_PAYLOAD}, got {self.pes_max_payload}")
        if self.ethernet_safe and self.rtp_size > ETHERNET_MTU:
            raise InvalidPacket(
                f"{self.ts_per_rtp} TS packets per RTP give {self.rtp_size} bytes, over the {ETHERNET_MTU}-byte MTU"
            )

    @property
    def rtp_size(self) -> int:
        """Size of a full RTP packet (header + ts_per_rtp TS packets)."""
        return RTP_HEADER_SIZE + self.ts_per_rtp * TS_PACKET_SIZE


def pes_to_ts(pes: PesPacket, cfg: PacketizerConfig, cc_start: int = 0) -> List[TsPacket]:
    """
    Break one PES packet into TS packets on cfg.pid.

    The first packet has payload_unit_start set, the last one is stuffed to
    188 bytes through its adaptation field, and continuity counters run
    consecutively mod 16 from cc_start.
    """
    data = pes.to_bytes()
    packets = []
    for i, offset in enumerate(range(0, len(data), TS_MAX_PAYLOAD)):
        packets.append(TsPacket(
            pid=cfg.pid,
            continuity_counter=(cc_start + i) % 16,
            payload_unit_start=(i == 0),
            payload=data[offset:offset + TS_MAX_PAYLOAD],
        ))
    return packets


def ts_to_pes(packets: Sequence[TsPacket]) -> PesPacket:
    """Reassemble a PES packet from its TS packets."""
    if not packets:
        raise MissingStart("no TS packets to reassemble")
    first = packets[0]
    if not first.payload_unit_start:
        raise MissingStart("first TS packet lacks payload_unit_start")

    expected = first.continuity_counter
    chunks = []
    for position, pkt in enumerate(packets):
        if pkt.pid != first.pid:
            raise PacketError(f"TS packet {position} has PID {pkt.pid}, expected {first.pid}")
        if pkt.continuity_counter != expected:
            raise ContinuityBreak(position, expected, pkt.continuity_counter)
        chunks.append(pkt.payload)
        expected = (expected + 1) % 16
    return PesPacket.from_bytes(b"".join(chunks))


def ts_to_rtp(packets: Sequence[TsPacket], cfg: PacketizerConfig, seq0: int, ssrc: int,
              rtp_timestamp: int = 0) -> List[RtpPacket]:
    """Group TS packets into RTP packets, ts_per_rtp at a time."""
    out = []
    step = cfg.ts_per_rtp
    for i, start in enumerate(range(0, len(packets), step)):
        payload = b"".join(p.to_bytes() for p in packets[start:start + step])
        out.append(RtpPacket(
            sequence_number=(seq0 + i) % SEQ_MOD,
            rtp_timestamp=rtp_timestamp,
            ssrc=ssrc,
            payload_type=cfg.payload_type,
            payload=payload,
        ))
    return out


def rtp_to_ts(packets: Iterable[RtpPacket]) -> List[TsPacket]:
    """Split RTP payloads back into TS packets."""
    out = []
    for pkt in packets:
        if not pkt.payload or len(pkt.payload) % TS_PACKET_SIZE:
            raise PacketError(
                f"RTP seq {pkt.sequence_number} payload of {len(pkt.payload)} bytes is not a multiple of 188"
            )
        for offset in range(0, len(pkt.payload), TS_PACKET_SIZE):
            out.append(TsPacket.from_bytes(pkt.payload[offset:offset + TS_PACKET_SIZE]))
    return out


def split_pes_runs(packets: Sequence[TsPacket]) -> List[List[TsPacket]]:
    """Cut a TS packet sequence at every payload_unit_start."""
    runs: List[List[TsPacket]] = []
    for pkt in packets:
        if pkt.payload_unit_start or not runs:
            runs.append([])
        runs[-1].append(pkt)
    return runs


def packetize(es: bytes, cfg: PacketizerConfig, stream_id: int, seq0: int, ssrc: int,
              cc_start: int = 0) -> List[RtpPacket]:
    """Elementary stream bytes to RTP packets through bounded PES and TS."""
    ts_packets: List[TsPacket] = []
    cc = cc_start
    for offset in range(0, max(len(es), 1), cfg.pes_max_payload):
        pes = PesPacket.bounded(stream_id, es[offset:offset + cfg.pes_max_payload])
        run = pes_to_ts(pes, cfg, cc)
        ts_packets.extend(run)
        cc = (cc + len(run)) % 16
    return ts_to_rtp(ts_packets, cfg, seq0, ssrc)


def depacketize(packets: Iterable[RtpPacket]) -> List[PesPacket]:
    """RTP packets back to the PES packets they carry."""
    return [ts_to_pes(run) for run in split_pes_runs(rtp_to_ts(packets))]
