"""
Capture I/O

Packet ingress and egress for the analyzer:

- classic pcap reading/writing (micro- and nanosecond magic, either byte order)
  with Ethernet/IPv4/UDP framing handled by dpkt;
- a live UDP listener that timestamps datagrams on filtered ports;
- the send-log CSV carrying sender timestamps out of band, and the join that
  turns arrivals plus send-log into PacketRecords.
"""

import logging
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import dpkt
import pandas as pd

from .errors import BadMagic, BindFailure, ConfigError, IoFailure, PacketError, TruncatedRecord
from .packet_model import NS_PER_S, SEQ_MOD, PacketRecord, parse_rtp, seq_diff

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# ============================================
# Datagrams
# ============================================

DEFAULT_SRC_IP = "10.150.5.2"
DEFAULT_DST_IP = "10.150.6.2"
SRC_MAC = b"\x02\x00\x00\x00\x05\x02"
DST_MAC = b"\x02\x00\x00\x00\x06\x02"


@dataclass(frozen=True)
class Datagram:
    """A UDP payload with its capture (or send) timestamp in ns."""

    ts_ns: int
    src_port: int
    dst_port: int
    payload: bytes
    src_ip: str = DEFAULT_SRC_IP
    dst_ip: str = DEFAULT_DST_IP

    @property
    def recv_ts(self) -> float:
        return self.ts_ns / NS_PER_S


# ============================================
# pcap
# ============================================

MAGIC_US = 0xA1B2C3D4
MAGIC_NS = 0xA1B23C4D
LINKTYPE_ETHERNET = 1
DEFAULT_SNAPLEN = 65535

_GLOBAL_HEADER = "IHHiIII"
_RECORD_HEADER = "iIII"
_BYTE_ORDERS = {"little": "<", "big": ">"}


@dataclass
class PcapCapture:
    """Result of reading a pcap file."""

    datagrams: List[Datagram]
    nanosecond: bool
    byte_order: str
    non_udp_skipped: int = 0
    filtered_out: int = 0

    def __iter__(self):
        return iter(self.datagrams)

    def __len__(self) -> int:
        return len(self.datagrams)


def encode_frame(dg: Datagram) -> bytes:
    """Wrap a datagram in Ethernet/IPv4/UDP headers."""
    udp = dpkt.udp.UDP(sport=dg.src_port, dport=dg.dst_port, data=dg.payload)
    udp.ulen = len(udp)
    ip = dpkt.ip.IP(
        src=socket.inet_aton(dg.src_ip),
        dst=socket.inet_aton(dg.dst_ip),
        p=dpkt.ip.IP_PROTO_UDP,
        ttl=64,
        data=udp,
    )
    ip.len = len(ip)
    eth = dpkt.ethernet.Ethernet(src=SRC_MAC, dst=DST_MAC, type=dpkt.ethernet.ETH_TYPE_IP, data=ip)
    return bytes(eth)


def decode_frame(ts_ns: int, frame: bytes) -> Optional[Datagram]:
    """Extract the UDP datagram from an Ethernet frame, or None if it is not IPv4/UDP."""
    try:
        eth = dpkt.ethernet.Ethernet(frame)
    except (dpkt.UnpackError, dpkt.NeedData):
        return None
    ip = eth.data
    if not isinstance(ip, dpkt.ip.IP):
        return None
    udp = ip.data
    if not isinstance(udp, dpkt.udp.UDP):
        return None
    return Datagram(
        ts_ns=ts_ns,
        src_port=udp.sport,
        dst_port=udp.dport,
        payload=bytes(udp.data),
        src_ip=socket.inet_ntoa(ip.src),
        dst_ip=socket.inet_ntoa(ip.dst),
    )


def write_pcap(datagrams: Iterable[Datagram], path: PathLike, nanosecond: bool = True,
               byte_order: str = "little", snaplen: int = DEFAULT_SNAPLEN) -> int:
    """
    Write datagrams as a classic pcap file.

    Args:
        datagrams: Datagrams in capture order
        path: Output file
        nanosecond: Use the nanosecond magic; otherwise timestamps are floored to microseconds
        byte_order: "little" or "big"

    Returns:
        Number of records written
    """
    try:
        prefix = _BYTE_ORDERS[byte_order]
    except KeyError:
        raise ConfigError(f"byte order must be 'little' or 'big', got {byte_order!r}", field="byte_order") from None

    magic = MAGIC_NS if nanosecond else MAGIC_US
    global_header = struct.Struct(prefix + _GLOBAL_HEADER)
    record_header = struct.Struct(prefix + _RECORD_HEADER)

    count = 0
    try:
        with open(path, "wb") as f:
            f.write(global_header.pack(magic, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))
            for dg in datagrams:
                frame = encode_frame(dg)
                sec, frac = divmod(dg.ts_ns, NS_PER_S)
                if not nanosecond:
                    frac //= 1000
                caplen = min(len(frame), snaplen)
                f.write(record_header.pack(sec, frac, caplen, len(frame)))
                f.write(frame[:caplen])
                count += 1
    except OSError as e:
        raise IoFailure(f"cannot write pcap {path}: {e}") from e
    logger.info("wrote %d records to %s", count, path)
    return count


def _detect_format(head: bytes) -> Tuple[str, bool]:
    for prefix in ("<", ">"):
        (magic,) = struct.unpack(prefix + "I", head)
        if magic == MAGIC_US:
            return prefix, False
        if magic == MAGIC_NS:
            return prefix, True
    raise BadMagic(f"unrecognised pcap magic 0x{head.hex()}")


def read_pcap(path: PathLike, ports: Optional[Iterable[int]] = None) -> PcapCapture:
    """
    Read UDP datagrams from a classic pcap file.

    Args:
        path: pcap file
        ports: Keep only datagrams whose destination port is listed (all when None)

    Raises:
        BadMagic: File is empty or not a classic pcap
        TruncatedRecord: A header or record body is cut short
    """
    wanted = frozenset(ports) if ports else None
    try:
        with open(path, "rb") as f:
            head = f.read(4)
            if len(head) < 4:
                raise BadMagic(f"{path} is too short to be a pcap file")
            prefix, nanosecond = _detect_format(head)
            global_header = struct.Struct(prefix + _GLOBAL_HEADER)
            record_header = struct.Struct(prefix + _RECORD_HEADER)

            rest = f.read(global_header.size - 4)
            if len(rest) < global_header.size - 4:
                raise TruncatedRecord(f"{path}: global header truncated")
            linktype = global_header.unpack(head + rest)[6]
            if linktype != LINKTYPE_ETHERNET:
                logger.warning("%s: linktype %d is not Ethernet; frames will be skipped", path, linktype)

            capture = PcapCapture(datagrams=[], nanosecond=nanosecond,
                                  byte_order="little" if prefix == "<" else "big")
            scale = 1 if nanosecond else 1000
            index = 0
            while True:
                hdr = f.read(record_header.size)
                if not hdr:
                    break
                if len(hdr) < record_header.size:
                    raise TruncatedRecord(f"{path}: record {index} header truncated")
                sec, frac, caplen, _orig = record_header.unpack(hdr)
                frame = f.read(caplen)
                if len(frame) < caplen:
                    raise TruncatedRecord(f"{path}: record {index} has {len(frame)} of {caplen} bytes")
                index += 1

                ts_ns = sec * NS_PER_S + frac * scale
                dg = decode_frame(ts_ns, frame) if linktype == LINKTYPE_ETHERNET else None
                if dg is None:
                    capture.non_udp_skipped += 1
                    logger.debug("%s: record %d is not IPv4/UDP, skipped", path, index)
                    continue
                if wanted is not None and dg.dst_port not in wanted:
                    capture.filtered_out += 1
                    continue
                capture.datagrams.append(dg)
    except OSError as e:
        raise IoFailure(f"cannot read pcap {path}: {e}") from e

    logger.info("read %d datagrams from %s (%d non-UDP skipped)",
                len(capture.datagrams), path, capture.non_udp_skipped)
    return capture


# ============================================
# Send log
# ============================================

SEND_LOG_COLUMNS = ["stream_id", "seq", "send_ts_ns", "size_bytes"]


@dataclass(frozen=True)
class SendLogEntry:
    stream_id: str
    seq: int
    send_ns: int
    size_bytes: int


@dataclass
class SendLog:
    """Out-of-band sender timestamps, one entry per transmitted packet."""

    entries: List[SendLogEntry] = field(default_factory=list)

    @classmethod
    def from_records(cls, records: Iterable[PacketRecord]) -> "SendLog":
        return cls([SendLogEntry(r.stream_id, r.seq, r.send_ns, r.size_bytes) for r in records])

    def __len__(self) -> int:
        return len(self.entries)

    def streams(self) -> Dict[str, List[SendLogEntry]]:
        out: Dict[str, List[SendLogEntry]] = {}
        for entry in self.entries:
            out.setdefault(entry.stream_id, []).append(entry)
        return out

    def merged(self, other: "SendLog") -> "SendLog":
        entries = sorted(self.entries + other.entries, key=lambda e: e.send_ns)
        return SendLog(entries)

    def write(self, path: PathLike) -> None:
        frame = pd.DataFrame(
            [(e.stream_id, e.seq, e.send_ns, e.size_bytes) for e in self.entries],
            columns=SEND_LOG_COLUMNS,
        )
        try:
            frame.to_csv(path, index=False)
        except OSError as e:
            raise IoFailure(f"cannot write send log {path}: {e}") from e

    @classmethod
    def read(cls, path: PathLike) -> "SendLog":
        try:
            frame = pd.read_csv(path, dtype={"stream_id": str, "seq": "int64",
                                             "send_ts_ns": "int64", "size_bytes": "int64"})
        except OSError as e:
            raise IoFailure(f"cannot read send log {path}: {e}") from e
        except ValueError as e:
            raise ConfigError(f"malformed send log {path}: {e}", field="send_log") from e
        missing = [c for c in SEND_LOG_COLUMNS if c not in frame.columns]
        if missing:
            raise ConfigError(f"send log {path} lacks columns {missing}", field="send_log")
        entries = [
            SendLogEntry(str(sid), int(seq), int(ts), int(size))
            for sid, seq, ts, size in frame[SEND_LOG_COLUMNS].itertuples(index=False, name=None)
        ]
        return cls(entries)


def _extend_log(entries: Sequence[SendLogEntry]) -> List[int]:
    """Extended (unwrapped) sequence numbers of one stream's send-log entries."""
    ext: List[int] = []
    for entry in entries:
        if not ext:
            ext.append(entry.seq)
        else:
            ext.append(ext[-1] + (entry.seq - ext[-1]) % SEQ_MOD)
    return ext


@dataclass
class JoinResult:
    """Arrivals joined against the send log."""

    received: List[PacketRecord]
    never_received: List[PacketRecord]
    unknown: List[PacketRecord]

    @property
    def records(self) -> List[PacketRecord]:
        return self.received + self.never_received

    def for_stream(self, stream_id: str) -> "JoinResult":
        return JoinResult(
            received=[r for r in self.received if r.stream_id == stream_id],
            never_received=[r for r in self.never_received if r.stream_id == stream_id],
            unknown=[r for r in self.unknown if r.stream_id == stream_id],
        )


def arrivals_to_records(arrivals: Iterable[Datagram], port_map: Mapping[int, str],
                        verify: Optional[Callable[[bytes], bool]] = None) -> List[PacketRecord]:
    """Records for arrivals without a send log; send timestamps stay absent."""
    out = []
    for dg in arrivals:
        try:
            rtp = parse_rtp(dg.payload)
        except PacketError as e:
            logger.debug("port %d: unparseable RTP at %d ns: %s", dg.dst_port, dg.ts_ns, e)
            continue
        out.append(PacketRecord(
            stream_id=port_map.get(dg.dst_port, str(dg.dst_port)),
            seq=rtp.sequence_number,
            send_ns=None,
            size_bytes=len(dg.payload),
            src_port=dg.src_port,
            dst_port=dg.dst_port,
            recv_ns=dg.ts_ns,
            corrupted=bool(verify and not verify(rtp.payload)),
        ))
    return out


def join_send_log(arrivals: Iterable[Datagram], log: SendLog, port_map: Mapping[int, str],
                  verify: Optional[Callable[[bytes], bool]] = None) -> JoinResult:
    """
    Match arrivals to send-log entries by (stream, sequence number).

    Sequence numbers are unwrapped on both sides, so streams longer than one
    16-bit epoch join correctly. Arrivals with no entry (or a second copy of
    an already matched entry) are returned as unknown; entries with no
    arrival become never-received records.

    Args:
        arrivals: Datagrams in arrival order
        log: Send log
        port_map: Destination port -> stream id
        verify: Payload integrity check; failing arrivals are flagged corrupted
    """
    per_stream = log.streams()
    index: Dict[Tuple[str, int], SendLogEntry] = {}
    highest: Dict[str, int] = {}
    for stream_id, entries in per_stream.items():
        ext = _extend_log(entries)
        for e, x in zip(entries, ext):
            index[(stream_id, x)] = e
        highest[stream_id] = ext[0] - 1

    matched: Dict[Tuple[str, int], bool] = {}
    received: List[PacketRecord] = []
    unknown: List[PacketRecord] = []

    for record in arrivals_to_records(arrivals, port_map, verify):
        stream_id = record.stream_id
        entry = None
        if stream_id in highest:
            ref = highest[stream_id]
            ext = ref + seq_diff(record.seq, ref % SEQ_MOD)
            highest[stream_id] = max(ref, ext)
            key = (stream_id, ext)
            if key not in matched:
                entry = index.get(key)
        if entry is None:
            logger.warning("unknown sequence %d on port %d (stream %s)", record.seq, record.dst_port, stream_id)
            unknown.append(record)
            continue
        matched[(stream_id, ext)] = True
        received.append(PacketRecord(
            stream_id=stream_id,
            seq=record.seq,
            send_ns=entry.send_ns,
            size_bytes=record.size_bytes,
            src_port=record.src_port,
            dst_port=record.dst_port,
            recv_ns=record.recv_ns,
            corrupted=record.corrupted,
        ))

    ports_by_stream = {sid: port for port, sid in port_map.items()}
    never_received = []
    for stream_id, entries in per_stream.items():
        for e, x in zip(entries, _extend_log(entries)):
            if (stream_id, x) not in matched:
                never_received.append(PacketRecord(
                    stream_id=stream_id,
                    seq=e.seq,
                    send_ns=e.send_ns,
                    size_bytes=e.size_bytes,
                    dst_port=ports_by_stream.get(stream_id, 0),
                ))
    return JoinResult(received=received, never_received=never_received, unknown=unknown)


# ============================================
# Live UDP capture
# ============================================

VALID_CAPTURE_MODES = ("pcap", "live")


@dataclass(frozen=True)
class CaptureConfig:
    """Where arrivals come from: a pcap file or live UDP ports."""

    mode: str
    filter_ports: FrozenSet[int]
    interface_or_path: str = "0.0.0.0"

    def __post_init__(self):
        if self.mode not in VALID_CAPTURE_MODES:
            raise ConfigError(f"mode must be one of {VALID_CAPTURE_MODES}, got {self.mode!r}", field="mode")
        if not self.filter_ports:
            raise ConfigError("at least one port is required", field="ports")


class CaptureSink:
    """
    Shared, order-preserving destination for live arrivals.

    Timestamps are taken under the sink lock from a monotonic clock mapped
    once to wall-clock time, so records come out in non-decreasing recv_ts.
    """

    def __init__(self, on_datagram: Optional[Callable[[Datagram], None]] = None):
        self._lock = threading.Lock()
        self._records: List[Datagram] = []
        self._closed = False
        self._on_datagram = on_datagram
        self._wall_base = time.time_ns()
        self._mono_base = time.monotonic_ns()

    def now_ns(self) -> int:
        return self._wall_base + (time.monotonic_ns() - self._mono_base)

    def deliver(self, src_port: int, dst_port: int, payload: bytes, src_ip: str = DEFAULT_SRC_IP,
                dst_ip: str = DEFAULT_DST_IP) -> Optional[Datagram]:
        with self._lock:
            if self._closed:
                return None
            dg = Datagram(self.now_ns(), src_port, dst_port, payload, src_ip, dst_ip)
            self._records.append(dg)
            if self._on_datagram is not None:
                self._on_datagram(dg)
            return dg

    def close(self) -> None:
        with self._lock:
            self._closed = True

    def snapshot(self) -> List[Datagram]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


class UdpCaptureSession:
    """One receiving thread per filtered port, all feeding the same sink."""

    POLL_INTERVAL_S = 0.1

    def __init__(self, cfg: CaptureConfig, sink: CaptureSink):
        if cfg.mode != "live":
            raise ConfigError("live capture needs mode 'live'", field="mode")
        self.cfg = cfg
        self.sink = sink
        self._stop = threading.Event()
        self._sockets: Dict[int, socket.socket] = {}
        self._threads: List[threading.Thread] = []

    @property
    def bound_ports(self) -> List[int]:
        return sorted(self._sockets)

    def start(self) -> "UdpCaptureSession":
        host = self.cfg.interface_or_path
        try:
            for port in sorted(self.cfg.filter_ports):
                sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                try:
                    sock.bind((host, port))
                except OSError as e:
                    sock.close()
                    raise BindFailure(port, str(e)) from e
                sock.settimeout(self.POLL_INTERVAL_S)
                self._sockets[sock.getsockname()[1]] = sock
        except BindFailure:
            self._close_sockets()
            raise

        for port, sock in self._sockets.items():
            thread = threading.Thread(target=self._receive, args=(port, sock),
                                      name=f"qoslab-udp-{port}", daemon=True)
            thread.start()
            self._threads.append(thread)
        logger.info("listening on %s ports %s", host, self.bound_ports)
        return self

    def _receive(self, port: int, sock: socket.socket) -> None:
        while not self._stop.is_set():
            try:
                payload, (src_ip, src_port) = sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            if self._stop.is_set():
                break
            self.sink.deliver(src_port, port, payload, src_ip=src_ip, dst_ip=self.cfg.interface_or_path)

    def _close_sockets(self) -> None:
        for sock in self._sockets.values():
            sock.close()

    def stop(self) -> None:
        """Stop receiving; the sink sees no records after this returns."""
        self.sink.close()
        self._stop.set()
        for thread in self._threads:
            thread.join()
        self._close_sockets()
        logger.info("capture stopped with %d datagrams", len(self.sink))

    def __enter__(self) -> "UdpCaptureSession":
        return self.start() if not self._threads else self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.stop()


def listen_udp(cfg: CaptureConfig, sink: CaptureSink) -> UdpCaptureSession:
    """Start a live capture session on every port in cfg.filter_ports."""
    return UdpCaptureSession(cfg, sink).start()
