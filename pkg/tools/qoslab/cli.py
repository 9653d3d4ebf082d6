"""
QoS Lab CLI Tool

Command-line interface for generating, impairing and analyzing IPTV streams.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 analysis error.
"""

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import yaml

from . import __version__
from .capture_io import CaptureConfig, CaptureSink, Datagram, SendLog, listen_udp, read_pcap, write_pcap
from .channel import ImpairmentSpec, impair_by_port
from .config import load_config
from .errors import ConfigError, IoFailure, PacketError, QosLabError
from .experiment import analyze_capture, resolve_port_map, run_experiment, write_reports
from .log import configure_logging
from .metrics import DEFAULT_LOSS_SAMPLE, DEFAULT_WINDOW, LossDetector
from .netem import format_impairment, parse_impairment
from .packet_model import PacketRecord, parse_rtp
from .report import emit_summary
from .streamgen import BUILTIN_PROFILES, builtin_profile, generate

logger = logging.getLogger(__name__)


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{self.prog}: error: {message}\n")


def create_parser() -> argparse.ArgumentParser:
    """Create the main CLI argument parser."""
    parser = _ArgumentParser(
        prog='qoslab',
        description='IPTV QoS measurement lab: generate, impair and analyze RTP streams',
    )
    parser.add_argument(
        '--version',
        action='version',
        version=f'%(prog)s {__version__}'
    )
    parser.add_argument(
        '-v', '--verbose',
        action='count',
        default=0,
        help='Increase log verbosity (-v info, -vv debug)'
    )

    subparsers = parser.add_subparsers(
        dest='command',
        help='Available commands',
        required=True
    )

    generate_parser = subparsers.add_parser(
        'generate',
        help='Generate a stream (or every stream of a config) as pcap + send log'
    )
    generate_parser.add_argument(
        'source',
        help=f'Built-in profile ({", ".join(BUILTIN_PROFILES)}), config file or built-in config name'
    )
    generate_parser.add_argument(
        '-o', '--output',
        type=Path,
        default=Path('.'),
        help='Output directory (default: current directory)'
    )
    generate_parser.add_argument(
        '--seed',
        type=int,
        help='Override the profile seed'
    )
    generate_parser.add_argument(
        '--duration',
        type=float,
        help='Override the stream duration in seconds'
    )
    generate_parser.add_argument(
        '--port',
        type=int,
        help='Override the destination port'
    )
    generate_parser.add_argument(
        '--carriage',
        choices=['opaque', 'mpegts'],
        help='Payload carriage (mpegts needs a matching packet size)'
    )
    generate_parser.add_argument(
        '--microseconds',
        action='store_true',
        help='Write a microsecond-resolution pcap instead of nanosecond'
    )

    impair_parser = subparsers.add_parser(
        'impair',
        help='Pass a pcap through the impairment channel'
    )
    impair_parser.add_argument(
        'input',
        type=Path,
        help='Input pcap'
    )
    impair_parser.add_argument(
        '-o', '--output',
        type=Path,
        required=True,
        help='Output pcap; ground truth goes next to it as <name>.truth.yaml'
    )
    spec_group = impair_parser.add_mutually_exclusive_group()
    spec_group.add_argument(
        '--netem',
        default='',
        help='Impairment expression, e.g. "delay 200ms uniform 5ms loss 0.4%%"'
    )
    spec_group.add_argument(
        '--spec',
        type=Path,
        help='YAML file with ImpairmentSpec fields'
    )
    impair_parser.add_argument(
        '--seed',
        type=int,
        help='Channel seed (overrides the expression)'
    )

    analyze_parser = subparsers.add_parser(
        'analyze',
        help='Measure QoS per port from a pcap or live UDP ports'
    )
    analyze_parser.add_argument(
        'input',
        type=Path,
        nargs='?',
        help='Capture file (omit with --live)'
    )
    analyze_parser.add_argument(
        '--ports',
        required=True,
        help='Comma-separated ports, optionally PORT=STREAM (e.g. 5000,5001=stream2-vod)'
    )
    analyze_parser.add_argument(
        '--send-log',
        type=Path,
        help='Send-log CSV; without it delay and jitter are omitted'
    )
    analyze_parser.add_argument(
        '-o', '--output',
        type=Path,
        default=Path('report'),
        help='Report directory (default: report)'
    )
    analyze_parser.add_argument(
        '--live',
        action='store_true',
        help='Capture from live UDP sockets instead of a file'
    )
    analyze_parser.add_argument(
        '--bind',
        default='0.0.0.0',
        help='Address to bind in live mode (default: 0.0.0.0)'
    )
    analyze_parser.add_argument(
        '--capture-seconds',
        type=float,
        default=10.0,
        help='Live capture length in seconds (default: 10)'
    )
    _add_analysis_flags(analyze_parser)
    analyze_parser.add_argument(
        '--duration',
        type=float,
        help='Transmission duration for the rate (default: arrival span)'
    )

    experiment_parser = subparsers.add_parser(
        'experiment',
        help='Run every stream of a config through both hops and write all reports'
    )
    experiment_parser.add_argument(
        'config',
        nargs='?',
        default='paper-iv',
        help='Config file or built-in config name (default: paper-iv)'
    )
    experiment_parser.add_argument(
        '-o', '--output',
        type=Path,
        help='Output directory (default: the config output_dir)'
    )
    experiment_parser.add_argument(
        '--seed',
        type=int,
        help='Override the experiment seed'
    )
    experiment_parser.add_argument(
        '--window',
        type=int,
        help='Override the loss-detection window'
    )
    experiment_parser.add_argument(
        '--pcap',
        action='store_true',
        help='Also write pcaps, send logs and channel ground truth'
    )

    return parser


def _add_analysis_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        '--window',
        type=int,
        default=DEFAULT_WINDOW,
        help=f'Loss-detection window in sequence numbers (default: {DEFAULT_WINDOW})'
    )
    parser.add_argument(
        '--delay-sample',
        type=int,
        default=0,
        help='First N sent packets used for delay and jitter (default: all)'
    )
    parser.add_argument(
        '--loss-sample',
        type=int,
        default=DEFAULT_LOSS_SAMPLE,
        help=f'First N received packets for the sample loss count (default: {DEFAULT_LOSS_SAMPLE})'
    )
    parser.add_argument(
        '--rate-window',
        type=float,
        default=1.0,
        help='Traffic-rate series window in seconds (default: 1.0)'
    )


def parse_ports(text: str) -> List[Union[int, Tuple[int, str]]]:
    """"5000,5001=stream2-vod" -> [5000, (5001, "stream2-vod")]."""
    out: List[Union[int, Tuple[int, str]]] = []
    for item in filter(None, (part.strip() for part in text.split(','))):
        port_text, _, name = item.partition('=')
        try:
            port = int(port_text)
        except ValueError:
            raise ConfigError(f"{port_text!r} is not a port number", field='--ports') from None
        if not 0 < port < 65536:
            raise ConfigError(f"{port} is out of range", field='--ports')
        out.append((port, name) if name else port)
    if not out:
        raise ConfigError("at least one port is required", field='--ports')
    return out


def _run(handler, args) -> int:
    try:
        return handler(args)
    except QosLabError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return IoFailure.exit_code


# ============================================
# generate
# ============================================

def cmd_generate(args) -> int:
    """Write <output>/stream.pcap and <output>/send_log.csv."""
    overrides = {}
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.duration is not None:
        overrides['duration_s'] = args.duration
    if args.port is not None:
        overrides['dst_port'] = args.port
    if args.carriage is not None:
        overrides['carriage'] = args.carriage

    if args.source in BUILTIN_PROFILES:
        profiles = [builtin_profile(args.source, **overrides)]
    else:
        if overrides:
            raise ConfigError("--seed/--duration/--port/--carriage apply to built-in profiles only", field='source')
        profiles = load_config(args.source).profiles

    datagrams: List[Datagram] = []
    records: List[PacketRecord] = []
    for profile in profiles:
        stream_records, packets = generate(profile)
        records += stream_records
        datagrams += [
            Datagram(ts_ns=r.send_ns, src_port=profile.src_port, dst_port=profile.dst_port, payload=p.to_bytes())
            for r, p in zip(stream_records, packets)
        ]
        print(f"✓ Generated {len(packets)} packets for {profile.name} -> port {profile.dst_port}")
    datagrams.sort(key=lambda dg: (dg.ts_ns, dg.dst_port))
    records.sort(key=lambda r: (r.send_ns, r.dst_port))

    args.output.mkdir(parents=True, exist_ok=True)
    pcap_path = args.output / 'stream.pcap'
    log_path = args.output / 'send_log.csv'
    write_pcap(datagrams, pcap_path, nanosecond=not args.microseconds)
    SendLog.from_records(records).write(log_path)
    print(f"✓ Wrote {pcap_path} and {log_path}")
    return 0


# ============================================
# impair
# ============================================

def _load_spec(args) -> ImpairmentSpec:
    if args.spec is not None:
        try:
            fields = yaml.safe_load(args.spec.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {args.spec}: {e}", field='--spec') from e
        if not isinstance(fields, dict):
            raise ConfigError("must hold a mapping of impairment fields", field='--spec')
        if args.seed is not None:
            fields['seed'] = args.seed
        try:
            return ImpairmentSpec(**fields)
        except TypeError as e:
            raise ConfigError(str(e), field='--spec') from e
        except ConfigError as e:
            raise e.at('--spec') from e
    try:
        spec = parse_impairment(args.netem)
    except ConfigError as e:
        raise ConfigError(e.detail, field='--netem') from e
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    return spec


def cmd_impair(args) -> int:
    """Impair every destination port of a pcap and save the ground truth."""
    spec = _load_spec(args)
    capture = read_pcap(args.input)
    arrivals, truths = impair_by_port(capture.datagrams, spec)

    args.output.parent.mkdir(parents=True, exist_ok=True)
    write_pcap(arrivals, args.output, nanosecond=capture.nanosecond, byte_order=capture.byte_order)
    truth_path = args.output.with_suffix('.truth.yaml')
    document = {
        'impairment': format_impairment(spec),
        'ports': {port: truth.to_dict() for port, truth in truths.items()},
    }
    with open(truth_path, 'w') as f:
        yaml.safe_dump(document, f, sort_keys=False)

    for port, truth in truths.items():
        print(f"  port {port}: {len(truth.dropped)} dropped, {len(truth.corrupted)} corrupted, "
              f"{len(truth.reordered)} reordered")
    print(f"✓ Impaired {len(capture)} datagrams -> {args.output} ({len(arrivals)} delivered)")
    print(f"✓ Ground truth -> {truth_path}")
    return 0


# ============================================
# analyze
# ============================================

def _live_arrivals(args, port_map: Dict[int, str]) -> List[Datagram]:
    """Capture for --capture-seconds, printing losses as they are detected."""
    detectors = {port: LossDetector(args.window) for port in port_map}

    def on_datagram(dg: Datagram) -> None:
        try:
            seq = parse_rtp(dg.payload).sequence_number
        except PacketError:
            return
        record = PacketRecord(stream_id=port_map[dg.dst_port], seq=seq, send_ns=None,
                              size_bytes=len(dg.payload), dst_port=dg.dst_port, recv_ns=dg.ts_ns)
        event = detectors[dg.dst_port].feed(record)
        if event is not None:
            print(f"✗ port {dg.dst_port}: {event.gap} lost after seq {event.after_seq} at {event.detected_at_ns} ns")

    cfg = CaptureConfig(mode='live', filter_ports=frozenset(port_map), interface_or_path=args.bind)
    sink = CaptureSink(on_datagram)
    with listen_udp(cfg, sink) as session:
        print(f"👀 Listening on {args.bind} ports {session.bound_ports} for {args.capture_seconds:g} s...")
        try:
            time.sleep(args.capture_seconds)
        except KeyboardInterrupt:
            print("\n🛑 Stopping capture...")
    return sink.snapshot()


def cmd_analyze(args) -> int:
    """Per-port reports, time series and summary under --output."""
    if args.live == (args.input is not None):
        raise ConfigError("give either a capture file or --live", field='input')
    for flag, value in (('--window', args.window), ('--loss-sample', args.loss_sample)):
        if value < 1:
            raise ConfigError(f"must be >= 1, got {value}", field=flag)
    if args.delay_sample < 0:
        raise ConfigError(f"must be >= 0, got {args.delay_sample}", field='--delay-sample')

    send_log = SendLog.read(args.send_log) if args.send_log else None
    port_map = resolve_port_map(parse_ports(args.ports), send_log)

    if args.live:
        arrivals = _live_arrivals(args, port_map)
    else:
        capture = read_pcap(args.input, ports=port_map)
        arrivals = capture.datagrams
        if capture.non_udp_skipped:
            logger.info("skipped %d non-UDP frames", capture.non_udp_skipped)

    reports = analyze_capture(
        arrivals, port_map, send_log, duration_s=args.duration, window=args.window,
        delay_sample=args.delay_sample, loss_sample=args.loss_sample,
    )
    for port, report in reports.items():
        write_reports(report, args.output / str(port), args.rate_window)
        delay = "n/a" if report.mean_delay_s is None else f"{report.mean_delay_s:.6f} s"
        print(f"✓ port {port} ({report.stream_id}): {report.received_count} received, "
              f"{report.lost_count} lost ({report.loss_percent:.3f}%), delay {delay}, "
              f"{report.traffic_rate_bps:.2f} bps")

    _, table = emit_summary({str(port): r for port, r in reports.items()}, args.output)
    print(table.render())
    print(f"✓ Reports written to {args.output}")
    return 0


# ============================================
# experiment
# ============================================

def cmd_experiment(args) -> int:
    """Run a config end to end."""
    overrides = {}
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.window is not None:
        overrides['window'] = args.window
    cfg = load_config(args.config, overrides)

    result = run_experiment(cfg, args.output, write_captures=args.pcap)
    for s in result.streams:
        print(f"✓ {s.stream.profile.name} {s.label}: "
              f"port {s.tx.port} loss {s.tx.report.loss_percent:.3f}%, "
              f"port {s.rx.port} loss {s.rx.report.loss_percent:.3f}%")
    print(result.ranking.render())
    print(f"✓ {len(result.written)} files written, summary at {result.summary_path}")
    return 0


COMMANDS = {
    'generate': cmd_generate,
    'impair': cmd_impair,
    'analyze': cmd_analyze,
    'experiment': cmd_experiment,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point."""
    parser = create_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    return _run(COMMANDS[args.command], args)


if __name__ == '__main__':
    sys.exit(main())
