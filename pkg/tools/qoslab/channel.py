"""
Impairment Channel

Deterministic, seeded stand-in for the aggregation/access path between the
streaming servers and the client. Applies base delay, jitter, Bernoulli
loss, reordering (extra delay on selected packets) and corruption, and keeps
the ground truth of what it did for oracle tests.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, FrozenSet, List, Sequence, Tuple

import numpy as np

from .capture_io import Datagram
from .errors import AnalysisError, InvalidSpec, PacketError
from .packet_model import RTP_HEADER_SIZE, PacketRecord, parse_rtp, seconds_to_ns

logger = logging.getLogger(__name__)

JITTER_MODELS = ("none", "uniform", "normal")


@dataclass(frozen=True)
class ImpairmentSpec:
    """
    Seeded channel behaviour.

    jitter_s is the half-width for the uniform model and the standard
    deviation for the normal model. Loss and corruption are drawn from one
    uniform per packet, so the two are mutually exclusive.
    """

    base_delay_s: float = 0.0
    jitter_model: str = "none"
    jitter_s: float = 0.0
    loss_prob: float = 0.0
    reorder_prob: float = 0.0
    reorder_extra_delay_s: float = 0.05
    corrupt_prob: float = 0.0
    clock_offset_s: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.base_delay_s < 0:
            raise InvalidSpec(f"must be >= 0, got {self.base_delay_s}", field="base_delay_s")
        if self.jitter_model not in JITTER_MODELS:
            raise InvalidSpec(f"must be one of {JITTER_MODELS}, got {self.jitter_model!r}", field="jitter_model")
        if self.jitter_s < 0:
            raise InvalidSpec(f"must be >= 0, got {self.jitter_s}", field="jitter_s")
        for name in ("loss_prob", "reorder_prob", "corrupt_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidSpec(f"must be within [0, 1], got {value}", field=name)
        if self.loss_prob + self.corrupt_prob > 1.0:
            raise InvalidSpec(
                f"loss_prob + corrupt_prob must not exceed 1, got {self.loss_prob + self.corrupt_prob}",
                field="corrupt_prob",
            )
        if self.reorder_extra_delay_s <= 0:
            raise InvalidSpec(f"must be > 0, got {self.reorder_extra_delay_s}", field="reorder_extra_delay_s")

    @property
    def is_identity(self) -> bool:
        return self == ImpairmentSpec(seed=self.seed)


@dataclass(frozen=True)
class ChannelGroundTruth:
    """
    What the channel did, in send order.

    dropped, corrupted and reordered hold send indices and per_packet_delay_ns
    is keyed by send index, so streams longer than one 16-bit sequence epoch
    keep one entry per packet. The *_seqs views map back to wire sequence
    numbers through seqs.
    """

    seqs: Tuple[int, ...] = ()
    dropped: Tuple[int, ...] = ()
    corrupted: Tuple[int, ...] = ()
    reordered: Tuple[int, ...] = ()
    per_packet_delay_ns: Dict[int, int] = field(default_factory=dict)

    def _wire(self, indices: Sequence[int]) -> FrozenSet[int]:
        return frozenset(self.seqs[i] for i in indices)

    @property
    def dropped_seqs(self) -> FrozenSet[int]:
        return self._wire(self.dropped)

    @property
    def corrupted_seqs(self) -> FrozenSet[int]:
        return self._wire(self.corrupted)

    @property
    def reordered_seqs(self) -> FrozenSet[int]:
        return self._wire(self.reordered)

    @property
    def per_packet_delay(self) -> Dict[int, float]:
        """Channel delay in seconds per send index, clock offset excluded."""
        return {index: ns / 1e9 for index, ns in self.per_packet_delay_ns.items()}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seqs": list(self.seqs),
            "dropped": list(self.dropped),
            "corrupted": list(self.corrupted),
            "reordered": list(self.reordered),
            "dropped_seqs": sorted(self.dropped_seqs),
            "corrupted_seqs": sorted(self.corrupted_seqs),
            "reordered_seqs": sorted(self.reordered_seqs),
            "per_packet_delay_ns": dict(self.per_packet_delay_ns),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ChannelGroundTruth":
        return cls(
            seqs=tuple(data.get("seqs", ())),
            dropped=tuple(data.get("dropped", ())),
            corrupted=tuple(data.get("corrupted", ())),
            reordered=tuple(data.get("reordered", ())),
            per_packet_delay_ns={int(k): int(v) for k, v in data.get("per_packet_delay_ns", {}).items()},
        )


@dataclass
class _Fates:
    """Per-packet draws for one channel pass."""

    dropped: np.ndarray
    corrupted: np.ndarray
    reordered: np.ndarray
    delay_ns: np.ndarray
    flip_at: np.ndarray
    flip_mask: np.ndarray


def _draw(n: int, spec: ImpairmentSpec) -> _Fates:
    rng = np.random.default_rng(spec.seed)
    fate = rng.random(n)
    reorder_u = rng.random(n)
    if spec.jitter_model == "uniform":
        jitter = rng.uniform(-spec.jitter_s, spec.jitter_s, n)
    elif spec.jitter_model == "normal":
        jitter = rng.normal(0.0, spec.jitter_s, n)
    else:
        jitter = np.zeros(n)
    flip_at = rng.random(n)
    flip_mask = rng.integers(1, 256, n)

    dropped = fate < spec.loss_prob
    corrupted = ~dropped & (fate < spec.loss_prob + spec.corrupt_prob)
    reordered = ~dropped & ~corrupted & (reorder_u < spec.reorder_prob)

    delay_ns = np.rint((spec.base_delay_s + jitter) * 1e9).astype(np.int64)
    np.maximum(delay_ns, 0, out=delay_ns)
    delay_ns[reordered] += seconds_to_ns(spec.reorder_extra_delay_s)
    return _Fates(dropped, corrupted, reordered, delay_ns, flip_at, flip_mask)


def _check_sorted(send_ns: Sequence[int]) -> None:
    if any(b < a for a, b in zip(send_ns, send_ns[1:])):
        raise AnalysisError("channel input must be sorted by send timestamp")


def _pass(seqs: Sequence[int], send_ns: Sequence[int], spec: ImpairmentSpec
          ) -> Tuple[_Fates, List[int], ChannelGroundTruth]:
    """Draw fates and return them with the arrival order (indices) and ground truth."""
    _check_sorted(send_ns)
    fates = _draw(len(seqs), spec)
    offset_ns = seconds_to_ns(spec.clock_offset_s)

    survivors = [i for i in range(len(seqs)) if not fates.dropped[i]]
    recv = {i: send_ns[i] + int(fates.delay_ns[i]) + offset_ns for i in survivors}
    order = sorted(survivors, key=lambda i: (recv[i], i))

    truth = ChannelGroundTruth(
        seqs=tuple(int(s) for s in seqs),
        dropped=tuple(int(i) for i in np.flatnonzero(fates.dropped)),
        corrupted=tuple(int(i) for i in np.flatnonzero(fates.corrupted)),
        reordered=tuple(int(i) for i in np.flatnonzero(fates.reordered)),
        per_packet_delay_ns={i: int(fates.delay_ns[i]) for i in survivors},
    )
    logger.info("channel: %d in, %d dropped, %d corrupted, %d reordered",
                len(seqs), len(truth.dropped), len(truth.corrupted), len(truth.reordered))
    return fates, order, truth


def apply(timeline: Sequence[PacketRecord], spec: ImpairmentSpec
          ) -> Tuple[List[PacketRecord], ChannelGroundTruth]:
    """
    Pass a send-ordered timeline through the channel.

    Returns the surviving records in arrival order, each with recv_ns set and
    corrupted flagged, plus the ground truth. Dropped records do not appear.
    """
    if any(r.send_ns is None for r in timeline):
        raise AnalysisError("channel input records need send timestamps")
    seqs = [r.seq for r in timeline]
    send_ns = [r.send_ns for r in timeline]
    fates, order, truth = _pass(seqs, send_ns, spec)
    offset_ns = seconds_to_ns(spec.clock_offset_s)

    arrivals = [
        timeline[i].arrived(send_ns[i] + int(fates.delay_ns[i]) + offset_ns, corrupted=bool(fates.corrupted[i]))
        for i in order
    ]
    return arrivals, truth


def corrupt_payload(payload: bytes, flip_at: float, flip_mask: int) -> bytes:
    """Flip one byte of the RTP payload area (the header stays readable)."""
    if len(payload) <= RTP_HEADER_SIZE:
        return payload
    pos = RTP_HEADER_SIZE + int(flip_at * (len(payload) - RTP_HEADER_SIZE))
    out = bytearray(payload)
    out[pos] ^= flip_mask
    return bytes(out)


def impair_datagrams(datagrams: Sequence[Datagram], spec: ImpairmentSpec
                     ) -> Tuple[List[Datagram], ChannelGroundTruth]:
    """
    Channel pass over RTP datagrams: timestamps become arrival times, dropped
    datagrams vanish and corrupted ones get one flipped payload byte. The
    corruption flag is not carried; the analyzer must find it by itself.
    """
    seqs = []
    for i, dg in enumerate(datagrams):
        try:
            seqs.append(parse_rtp(dg.payload).sequence_number)
        except PacketError as e:
            raise AnalysisError(f"datagram {i} on port {dg.dst_port} is not RTP: {e}") from e
    send_ns = [dg.ts_ns for dg in datagrams]
    fates, order, truth = _pass(seqs, send_ns, spec)
    offset_ns = seconds_to_ns(spec.clock_offset_s)

    out = []
    for i in order:
        dg = datagrams[i]
        payload = dg.payload
        if fates.corrupted[i]:
            payload = corrupt_payload(payload, float(fates.flip_at[i]), int(fates.flip_mask[i]))
        out.append(Datagram(
            ts_ns=send_ns[i] + int(fates.delay_ns[i]) + offset_ns,
            src_port=dg.src_port,
            dst_port=dg.dst_port,
            payload=payload,
            src_ip=dg.src_ip,
            dst_ip=dg.dst_ip,
        ))
    return out, truth


def impair_by_port(datagrams: Sequence[Datagram], spec: ImpairmentSpec
                   ) -> Tuple[List[Datagram], Dict[int, ChannelGroundTruth]]:
    """
    Impair each destination port's datagrams independently and merge the
    arrivals by time. Each port gets its own seed derived from spec.seed.
    """
    ports = sorted({dg.dst_port for dg in datagrams})
    seeds = np.random.SeedSequence(spec.seed).spawn(len(ports))
    merged: List[Datagram] = []
    truths: Dict[int, ChannelGroundTruth] = {}
    for port, seq_seed in zip(ports, seeds):
        port_spec = replace(spec, seed=int(seq_seed.generate_state(1, dtype=np.uint64)[0]))
        arrivals, truths[port] = impair_datagrams([dg for dg in datagrams if dg.dst_port == port], port_spec)
        merged.extend(arrivals)
    merged.sort(key=lambda dg: (dg.ts_ns, dg.dst_port))
    return merged, truths
