"""
QoS Metrics

Traffic rate, one-way delay, inter-packet jitter, RTP-sequence loss and
reorder detection, and packet error rate over PacketRecord streams.

Definitions:
    rate   = total_bytes / transmission_duration                 (Bps, x8 for bps)
    delay  = (Delay_1 + ... + Delay_N) / N,  Delay_i = recv_i - send_i
    jitter = (|Jitter_1| + ... + |Jitter_M|) / M,  Jitter_i = Delay_{i+1} - Delay_i
    PER    = corrupted / received x 100 %

All timestamp arithmetic is done on integer nanoseconds.
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptySeries, EmptyStream, MissingTimestamp, NoPackets
from .packet_model import HALF_SEQ, NS_PER_S, SEQ_MOD, PacketRecord, seq_diff, seconds_to_ns

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 3000
DEFAULT_LOSS_SAMPLE = 20000


# ============================================
# Traffic rate
# ============================================

@dataclass(frozen=True)
class TrafficRate:
    total_bytes: int
    duration_ns: int

    @property
    def bytes_per_second(self) -> float:
        return float(Fraction(self.total_bytes * NS_PER_S, self.duration_ns))

    @property
    def bits_per_second(self) -> float:
        return float(Fraction(self.total_bytes * 8 * NS_PER_S, self.duration_ns))

    @property
    def duration_s(self) -> float:
        return self.duration_ns / NS_PER_S


def traffic_rate(records: Iterable[PacketRecord], duration_s: Optional[float] = None) -> TrafficRate:
    """
    Rate over the received records.

    Args:
        records: Records; only received ones count
        duration_s: Transmission duration; defaults to last recv - first recv

    Raises:
        EmptyStream: No received records
        EmptySeries: Duration is not positive
    """
    received = [r for r in records if r.received]
    if not received:
        raise EmptyStream("no received packets to compute a traffic rate")
    total = sum(r.size_bytes for r in received)
    if duration_s is None:
        times = [r.recv_ns for r in received]
        duration_ns = max(times) - min(times)
    else:
        duration_ns = seconds_to_ns(duration_s)
    if duration_ns <= 0:
        raise EmptySeries(f"transmission duration must be positive, got {duration_ns} ns")
    return TrafficRate(total_bytes=total, duration_ns=duration_ns)


def rate_series(records: Iterable[PacketRecord], window_s: float = 1.0) -> np.ndarray:
    """Bits per second in consecutive fixed windows starting at the first arrival."""
    recv = np.array([r.recv_ns for r in records if r.received], dtype=np.int64)
    sizes = np.array([r.size_bytes for r in records if r.received], dtype=np.int64)
    if recv.size == 0:
        raise EmptySeries("no received packets for a rate series")
    window_ns = seconds_to_ns(window_s)
    if window_ns <= 0:
        raise EmptySeries(f"rate window must be positive, got {window_s}")
    bins = (recv - recv.min()) // window_ns
    totals = np.bincount(bins, weights=sizes)
    return totals * 8 / window_s


# ============================================
# Delay and jitter
# ============================================

@dataclass(frozen=True)
class DelaySeries:
    """One-way delays in arrival order, in ns."""

    delays_ns: np.ndarray
    seqs: Tuple[int, ...] = ()

    @property
    def n(self) -> int:
        return int(self.delays_ns.size)

    @property
    def delays(self) -> np.ndarray:
        return self.delays_ns / NS_PER_S

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class JitterSeries:
    """Signed differences between consecutive delays, in ns."""

    jitters_ns: np.ndarray

    @property
    def n(self) -> int:
        return int(self.jitters_ns.size)

    @property
    def jitters(self) -> np.ndarray:
        return self.jitters_ns / NS_PER_S

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class SeriesStats:
    mean_s: float
    min_ns: int
    max_ns: int

    @property
    def min_s(self) -> float:
        return self.min_ns / NS_PER_S

    @property
    def max_s(self) -> float:
        return self.max_ns / NS_PER_S


def delay_series(records: Iterable[PacketRecord]) -> DelaySeries:
    """Delays of received records in arrival order; never-received records are ignored."""
    delays = []
    seqs = []
    for r in records:
        if not r.received:
            continue
        if r.send_ns is None:
            raise MissingTimestamp(f"received packet seq {r.seq} of {r.stream_id} has no send timestamp")
        delays.append(r.recv_ns - r.send_ns)
        seqs.append(r.seq)
    return DelaySeries(np.array(delays, dtype=np.int64), tuple(seqs))


def mean_one_way_delay(series: DelaySeries) -> SeriesStats:
    """Arithmetic mean delay, with min and max."""
    if series.n == 0:
        raise EmptySeries("no delay samples")
    d = series.delays_ns
    return SeriesStats(
        mean_s=int(d.sum()) / series.n / NS_PER_S,
        min_ns=int(d.min()),
        max_ns=int(d.max()),
    )


def jitter_series(series: DelaySeries) -> JitterSeries:
    if series.n < 2:
        raise EmptySeries(f"jitter needs at least 2 delays, got {series.n}")
    return JitterSeries(np.diff(series.delays_ns))


def mean_abs_jitter(jitter: JitterSeries) -> SeriesStats:
    """Mean of |Jitter_i| over the M jitter samples, with signed min and max."""
    if jitter.n == 0:
        raise EmptySeries("no jitter samples")
    j = jitter.jitters_ns
    return SeriesStats(
        mean_s=int(np.abs(j).sum()) / jitter.n / NS_PER_S,
        min_ns=int(j.min()),
        max_ns=int(j.max()),
    )


# ============================================
# Loss and reordering
# ============================================

@dataclass(frozen=True)
class LossEvent:
    """gap packets lost between after_seq and before_seq, seen at detected_at_ns."""

    detected_at_ns: int
    gap: int
    after_seq: int
    before_seq: int

    @property
    def detected_at(self) -> float:
        return self.detected_at_ns / NS_PER_S

    @property
    def lost_seqs(self) -> List[int]:
        return [(self.after_seq + k) % SEQ_MOD for k in range(1, self.gap + 1)]

    def to_dict(self) -> Dict[str, int]:
        return {"detected_at_ns": self.detected_at_ns, "gap": self.gap,
                "after_seq": self.after_seq, "before_seq": self.before_seq}


class LossDetector:
    """
    Streaming RTP sequence monitor.

    The reference is the highest sequence number seen. An arrival ahead of it
    by g+1 reports a gap of g packets when 1 <= g <= window; an arrival at or
    behind it is late or duplicated and leaves the reference alone; a jump
    beyond the window resynchronises without reporting. Corrupted arrivals
    are not part of the valid stream, so they surface as gaps.
    """

    def __init__(self, window: int = DEFAULT_WINDOW, first_seq: Optional[int] = None):
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        self.window = window
        self.reference: Optional[int] = None if first_seq is None else (first_seq - 1) % SEQ_MOD
        self.last_recv_ns: Optional[int] = None
        self.events: List[LossEvent] = []
        self.lost_count = 0
        self.valid_count = 0

    def feed(self, record: PacketRecord) -> Optional[LossEvent]:
        if not record.received or record.corrupted:
            return None
        self.valid_count += 1
        self.last_recv_ns = record.recv_ns
        if self.reference is None:
            self.reference = record.seq
            return None

        d = seq_diff(record.seq, self.reference)
        if d <= 0:
            return None
        previous = self.reference
        self.reference = record.seq
        gap = d - 1
        if gap == 0:
            return None
        if gap > self.window:
            logger.warning("%s: sequence jumped %d -> %d (%d > window %d), resynchronising",
                           record.stream_id, previous, record.seq, gap, self.window)
            return None
        return self._emit(LossEvent(record.recv_ns, gap, previous, record.seq))

    def close(self, last_seq: Optional[int] = None) -> Optional[LossEvent]:
        """Report packets lost after the last arrival when the last sent seq is known."""
        if last_seq is None or self.reference is None or self.last_recv_ns is None:
            return None
        d = seq_diff(last_seq, self.reference)
        if d <= 0:
            return None
        if d > self.window:
            logger.warning("tail gap after seq %d to last sent seq %d (%d > window %d), not reported",
                           self.reference, last_seq, d, self.window)
            return None
        return self._emit(LossEvent(self.last_recv_ns, d, self.reference, (last_seq + 1) % SEQ_MOD))

    def _emit(self, event: LossEvent) -> LossEvent:
        self.events.append(event)
        self.lost_count += event.gap
        logger.debug("loss of %d after seq %d at %d ns", event.gap, event.after_seq, event.detected_at_ns)
        return event


def detect_losses(arrivals: Iterable[PacketRecord], window: int = DEFAULT_WINDOW,
                  first_seq: Optional[int] = None, last_seq: Optional[int] = None
                  ) -> Tuple[List[LossEvent], int]:
    """
    Batch loss detection over records in arrival order.

    first_seq / last_seq are the stream bounds from the send log; with them,
    losses before the first and after the last arrival are reported too.
    """
    detector = LossDetector(window, first_seq=first_seq)
    for record in arrivals:
        detector.feed(record)
    detector.close(last_seq)
    return detector.events, detector.lost_count


def detect_reorders(arrivals: Iterable[PacketRecord]) -> Tuple[int, List[int]]:
    """Count arrivals whose seq is smaller than the previous arrival's (mod 2^16)."""
    reordered = []
    previous: Optional[int] = None
    for r in arrivals:
        if not r.received:
            continue
        if previous is not None and -HALF_SEQ < seq_diff(r.seq, previous) < 0:
            reordered.append(r.seq)
        previous = r.seq
    return len(reordered), reordered


def per(corrupted_count: int, received_count: int) -> float:
    """Packet error rate in percent."""
    if received_count <= 0:
        raise NoPackets("PER needs at least one received packet")
    return corrupted_count / received_count * 100


# ============================================
# Report
# ============================================

_SCALAR_FIELDS = (
    "stream_id", "port", "total_bytes", "transmission_duration_ns", "traffic_rate_bps",
    "mean_delay_s", "min_delay_ns", "max_delay_ns", "delay_samples",
    "mean_abs_jitter_s", "min_jitter_ns", "max_jitter_ns", "jitter_samples",
    "received_count", "lost_count", "loss_percent", "corrupted_count", "per_percent",
    "reordered_count", "sample_loss_count", "loss_sample", "unknown_count",
)


@dataclass
class QosReport:
    """
    Per-stream QoS results.

    lost_count counts packets declared lost by sequence monitoring, which
    includes corrupted packets (they are removed from the valid stream first)
    and is an upper bound when packets arrive reordered: a late packet never
    takes back a gap already reported. Delay and jitter fields are None when
    the send timestamps are unknown.
    """

    stream_id: str
    port: int
    total_bytes: int
    transmission_duration_ns: int
    traffic_rate_bps: float
    received_count: int
    lost_count: int
    loss_percent: float
    corrupted_count: int
    per_percent: float
    reordered_count: int
    loss_events: List[LossEvent] = field(default_factory=list)
    mean_delay_s: Optional[float] = None
    min_delay_ns: Optional[int] = None
    max_delay_ns: Optional[int] = None
    delay_samples: int = 0
    mean_abs_jitter_s: Optional[float] = None
    min_jitter_ns: Optional[int] = None
    max_jitter_ns: Optional[int] = None
    jitter_samples: int = 0
    sample_loss_count: int = 0
    loss_sample: int = DEFAULT_LOSS_SAMPLE
    unknown_count: int = 0
    arrivals: List[PacketRecord] = field(default_factory=list, compare=False, repr=False)
    delays: Optional[DelaySeries] = field(default=None, compare=False, repr=False)
    jitters: Optional[JitterSeries] = field(default=None, compare=False, repr=False)

    @property
    def transmission_duration(self) -> float:
        return self.transmission_duration_ns / NS_PER_S

    @property
    def min_delay_s(self) -> Optional[float]:
        return None if self.min_delay_ns is None else self.min_delay_ns / NS_PER_S

    @property
    def max_delay_s(self) -> Optional[float]:
        return None if self.max_delay_ns is None else self.max_delay_ns / NS_PER_S

    @property
    def min_jitter_s(self) -> Optional[float]:
        return None if self.min_jitter_ns is None else self.min_jitter_ns / NS_PER_S

    @property
    def max_jitter_s(self) -> Optional[float]:
        return None if self.max_jitter_ns is None else self.max_jitter_ns / NS_PER_S

    def to_dict(self) -> Dict[str, Any]:
        out = {name: getattr(self, name) for name in _SCALAR_FIELDS}
        out["loss_events"] = [e.to_dict() for e in self.loss_events]
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "QosReport":
        kwargs = {name: data[name] for name in _SCALAR_FIELDS if name in data}
        kwargs["loss_events"] = [LossEvent(**e) for e in data.get("loss_events", [])]
        return cls(**kwargs)


def analyze(arrivals: Sequence[PacketRecord], send_log: Optional[Sequence[Tuple[int, int]]] = None,
            duration_s: Optional[float] = None, window: int = DEFAULT_WINDOW, delay_sample: int = 0,
            loss_sample: int = DEFAULT_LOSS_SAMPLE, stream_id: Optional[str] = None,
            port: int = 0, unknown_count: int = 0) -> QosReport:
    """
    Compose every metric into one report.

    Args:
        arrivals: One stream's received records in arrival order (joined with
            the send log when it is known)
        send_log: That stream's (send_ns, seq) pairs in send order, or None
        duration_s: Transmission duration for the rate; defaults to the arrival span
        window: Loss-detection window
        delay_sample: Use only the first N transmitted packets for delay/jitter (0 = all)
        loss_sample: Count losses within the first N valid arrivals separately
    """
    if delay_sample < 0:
        raise ValueError(f"delay_sample must be >= 0, got {delay_sample}")
    received = [r for r in arrivals if r.received]
    if stream_id is None:
        stream_id = received[0].stream_id if received else "stream"

    rate = traffic_rate(received, duration_s)

    first_seq = last_seq = None
    if send_log:
        send_log = sorted(send_log)
        first_seq, last_seq = send_log[0][1], send_log[-1][1]
    events, lost = detect_losses(received, window, first_seq=first_seq, last_seq=last_seq)
    _, sample_lost = detect_losses(
        [r for r in received if not r.corrupted][:loss_sample], window, first_seq=first_seq
    )
    reordered_count, _ = detect_reorders(received)
    corrupted_count = sum(1 for r in received if r.corrupted)
    received_count = len(received)

    report = QosReport(
        stream_id=stream_id,
        port=port,
        total_bytes=rate.total_bytes,
        transmission_duration_ns=rate.duration_ns,
        traffic_rate_bps=rate.bits_per_second,
        received_count=received_count,
        lost_count=lost,
        loss_percent=100 * lost / (received_count + lost),
        corrupted_count=corrupted_count,
        per_percent=per(corrupted_count, received_count),
        reordered_count=reordered_count,
        loss_events=events,
        sample_loss_count=sample_lost,
        loss_sample=loss_sample,
        unknown_count=unknown_count,
        arrivals=received,
    )

    timed = [r for r in received if r.send_ns is not None and not r.corrupted]
    if send_log and delay_sample:
        cutoff = send_log[min(delay_sample, len(send_log)) - 1][0]
        timed = [r for r in timed if r.send_ns <= cutoff]
    if timed:
        delays = delay_series(timed)
        stats = mean_one_way_delay(delays)
        report.delays = delays
        report.mean_delay_s, report.min_delay_ns, report.max_delay_ns = stats.mean_s, stats.min_ns, stats.max_ns
        report.delay_samples = delays.n
        if stats.min_ns < 0:
            logger.warning("%s: negative one-way delay (%d ns); sender and receiver clocks disagree",
                           stream_id, stats.min_ns)
        if delays.n >= 2:
            jitters = jitter_series(delays)
            jstats = mean_abs_jitter(jitters)
            report.jitters = jitters
            report.mean_abs_jitter_s = jstats.mean_s
            report.min_jitter_ns, report.max_jitter_ns = jstats.min_ns, jstats.max_ns
            report.jitter_samples = jitters.n
    else:
        logger.info("%s: no send timestamps, delay and jitter omitted", stream_id)

    logger.info("%s: %d received, %d lost (%.4f%%), %d corrupted, %d reordered, %.2f bps",
                stream_id, received_count, lost, report.loss_percent, corrupted_count,
                reordered_count, report.traffic_rate_bps)
    return report
