"""
Experiment Pipeline

Runs configured streams through the lab topology and analyzes each
observation point:

    generator --upstream--> tx_port (relay) --impairment--> rx_port (client)

The relay forwards what it received intact as a new RTP session with
consecutive sequence numbers, stamping its own send log with the arrival
time. Streams share one timeline; every port is analyzed on its own.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import yaml

from .capture_io import (
    Datagram,
    SendLog,
    SendLogEntry,
    arrivals_to_records,
    join_send_log,
    write_pcap,
)
from .channel import ChannelGroundTruth, ImpairmentSpec, impair_datagrams
from .config import ExperimentConfig, StreamConfig
from .errors import IoFailure
from .metrics import DEFAULT_LOSS_SAMPLE, DEFAULT_WINDOW, QosReport, analyze
from .packet_model import SEQ_MOD, parse_rtp
from .report import RankingTable, emit_stream_files, emit_summary, emit_timeseries
from .streamgen import BUILTIN_PROFILES, StreamProfile, generate, payload_intact

logger = logging.getLogger(__name__)

GROUND_TRUTH_FILE = "ground_truth.yaml"


# ============================================
# Capture analysis
# ============================================

def resolve_port_map(ports: Iterable[Union[int, Tuple[int, str]]], log: Optional[SendLog] = None) -> Dict[int, str]:
    """
    Port -> stream id for analysis.

    Ports may come with an explicit stream id. Otherwise a send log with a
    single stream names it, a built-in profile sending to that port names it,
    and failing both the port number itself is the id.
    """
    logged = set(log.streams()) if log is not None else set()
    by_port = {p.dst_port: name for name, p in BUILTIN_PROFILES.items()}
    out: Dict[int, str] = {}
    for item in ports:
        if isinstance(item, tuple):
            port, name = item
        else:
            port = item
            if len(logged) == 1:
                name = next(iter(logged))
            elif by_port.get(port) in logged or (not logged and port in by_port):
                name = by_port[port]
            else:
                name = str(port)
        out[port] = name
    return out


def analyze_capture(arrivals: Sequence[Datagram], port_map: Mapping[int, str], send_log: Optional[SendLog] = None,
                    duration_s: Optional[float] = None, window: int = DEFAULT_WINDOW, delay_sample: int = 0,
                    loss_sample: int = DEFAULT_LOSS_SAMPLE) -> Dict[int, QosReport]:
    """
    One QosReport per port from captured datagrams.

    Payload integrity tags decide corruption. Without a send log, delay and
    jitter are left out and loss relies on sequence monitoring alone.
    """
    reports: Dict[int, QosReport] = {}
    if send_log is not None:
        joined = join_send_log(arrivals, send_log, port_map, verify=payload_intact)
        logged = send_log.streams()
    else:
        records = arrivals_to_records(arrivals, port_map, verify=payload_intact)

    for port, stream_id in sorted(port_map.items()):
        pairs = None
        unknown = 0
        if send_log is not None:
            port_records = [r for r in joined.received if r.dst_port == port]
            unknown = sum(1 for r in joined.unknown if r.dst_port == port)
            pairs = [(e.send_ns, e.seq) for e in logged.get(stream_id, [])] or None
        else:
            port_records = [r for r in records if r.dst_port == port]
        reports[port] = analyze(
            port_records, pairs, duration_s=duration_s, window=window, delay_sample=delay_sample,
            loss_sample=loss_sample, stream_id=stream_id, port=port, unknown_count=unknown,
        )
    return reports


def write_reports(report: QosReport, directory: Path, rate_window_s: float = 1.0) -> List[Path]:
    """Per-stream files plus time series; time series are skipped without delays."""
    paths = emit_stream_files(report, directory)
    if report.delays is not None and report.delays.n:
        paths.extend(emit_timeseries(report, directory, rate_window_s))
    else:
        logger.info("%s: no delay samples, time series not written", report.stream_id)
    return paths


# ============================================
# Two-hop run
# ============================================

@dataclass
class HopResult:
    """One observation point."""

    port: int
    sent: List[Datagram]
    arrivals: List[Datagram]
    send_log: SendLog
    truth: ChannelGroundTruth
    report: QosReport


@dataclass
class StreamResult:
    stream: StreamConfig
    tx: HopResult
    rx: HopResult

    @property
    def label(self) -> str:
        return self.stream.label


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    streams: List[StreamResult] = field(default_factory=list)
    summary_path: Optional[Path] = None
    ranking: Optional[RankingTable] = None
    written: List[Path] = field(default_factory=list)


def _generated_datagrams(profile: StreamProfile) -> Tuple[List[Datagram], SendLog]:
    records, packets = generate(profile)
    datagrams = [
        Datagram(ts_ns=r.send_ns, src_port=profile.src_port, dst_port=profile.dst_port, payload=p.to_bytes())
        for r, p in zip(records, packets)
    ]
    return datagrams, SendLog.from_records(records)


def relay(arrivals: Sequence[Datagram], intact: Iterable[int], stream_id: str, src_port: int, dst_port: int,
          first_seq: int = 0) -> Tuple[List[Datagram], SendLog]:
    """
    Re-stream the intact arrivals (given by index) in arrival order.

    Each forwarded packet keeps its RTP payload, gets the next sequence
    number and is sent at the moment it arrived.
    """
    out: List[Datagram] = []
    entries: List[SendLogEntry] = []
    for n, i in enumerate(intact):
        dg = arrivals[i]
        seq = (first_seq + n) % SEQ_MOD
        payload = replace(parse_rtp(dg.payload), sequence_number=seq).to_bytes()
        out.append(Datagram(ts_ns=dg.ts_ns, src_port=src_port, dst_port=dst_port, payload=payload))
        entries.append(SendLogEntry(stream_id, seq, dg.ts_ns, len(payload)))
    return out, SendLog(entries)


def _hop(sent: List[Datagram], log: SendLog, spec: ImpairmentSpec, port: int, stream_id: str,
         cfg: ExperimentConfig, duration_s: float) -> HopResult:
    arrivals, truth = impair_datagrams(sent, spec)
    report = analyze_capture(
        arrivals, {port: stream_id}, log, duration_s=duration_s, window=cfg.window,
        delay_sample=cfg.delay_sample, loss_sample=cfg.loss_sample,
    )[port]
    return HopResult(port=port, sent=sent, arrivals=arrivals, send_log=log, truth=truth, report=report)


def run_stream(stream: StreamConfig, cfg: ExperimentConfig) -> StreamResult:
    """Generate one stream and measure it at both ports."""
    profile = stream.profile
    sent, log = _generated_datagrams(profile)
    upstream = stream.upstream or ImpairmentSpec(seed=0)
    tx = _hop(sent, log, upstream, stream.tx_port, profile.name, cfg, profile.duration_s)

    intact = [i for i, dg in enumerate(tx.arrivals) if payload_intact(parse_rtp(dg.payload).payload)]
    relayed, relay_log = relay(tx.arrivals, intact, profile.name, stream.tx_port, stream.rx_port, profile.first_seq)
    rx = _hop(relayed, relay_log, stream.impairment, stream.rx_port, profile.name, cfg, profile.duration_s)

    logger.info("%s %s: tx loss %.4f%%, rx loss %.4f%%", profile.name, stream.label,
                tx.report.loss_percent, rx.report.loss_percent)
    return StreamResult(stream=stream, tx=tx, rx=rx)


def _merge(datagrams: Iterable[List[Datagram]]) -> List[Datagram]:
    merged = [dg for group in datagrams for dg in group]
    merged.sort(key=lambda dg: (dg.ts_ns, dg.dst_port))
    return merged


def _dump_truth(result: StreamResult, path: Path) -> Path:
    document = {"tx": result.tx.truth.to_dict(), "rx": result.rx.truth.to_dict()}
    try:
        with open(path, "w") as f:
            yaml.safe_dump(document, f, sort_keys=False)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e
    return path


def run_experiment(cfg: ExperimentConfig, output_dir: Optional[Union[str, Path]] = None,
                   write_captures: bool = False) -> ExperimentResult:
    """
    Run every stream, then write per-port reports and the summary.

    Layout under the output directory:
        <tx>-<rx>/<tx>/...   reports at the relay ingress
        <tx>-<rx>/<rx>/...   reports at the client
        summary.yaml
    With write_captures, also tx.pcap / rx.pcap, the matching send logs and
    each stream's channel ground truth.
    """
    out = Path(output_dir or cfg.output_dir)
    result = ExperimentResult(config=cfg)

    for stream in cfg.streams:
        result.streams.append(run_stream(stream, cfg))

    for s in result.streams:
        base = out / s.label
        result.written += write_reports(s.tx.report, base / str(s.tx.port), cfg.rate_window_s)
        result.written += write_reports(s.rx.report, base / str(s.rx.port), cfg.rate_window_s)
        if write_captures:
            result.written.append(_dump_truth(s, base / GROUND_TRUTH_FILE))

    result.summary_path, result.ranking = emit_summary(
        {s.label: s.rx.report for s in result.streams},
        out,
        tx_reports={s.label: s.tx.report for s in result.streams},
        metadata={"name": cfg.name, "seed": cfg.seed},
    )
    result.written.append(result.summary_path)

    if write_captures:
        for hop in ("tx", "rx"):
            hops = [getattr(s, hop) for s in result.streams]
            pcap_path = out / f"{hop}.pcap"
            write_pcap(_merge(h.arrivals for h in hops), pcap_path)
            log_path = out / f"send_log_{hop}.csv"
            SendLog(sorted((e for h in hops for e in h.send_log.entries), key=lambda e: e.send_ns)).write(log_path)
            result.written += [pcap_path, log_path]

    logger.info("experiment %s: %d streams, %d files under %s", cfg.name, len(result.streams),
                len(result.written), out)
    return result
