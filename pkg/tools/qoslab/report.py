"""
Report Emission

Writes the per-stream result files (received packets, loss events,
cumulative loss), plot-ready time series, and the cross-stream summary
with its best/worst ranking table.

All timestamps on disk are integer nanoseconds.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from .errors import EmptySeries, IoFailure
from .metrics import QosReport, rate_series

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RECEIVED_FILE = "received.csv"
LOSS_EVENTS_FILE = "loss_events.csv"
LOSS_CUMULATIVE_FILE = "loss_cumulative.csv"
DELAY_FILE = "delay.csv"
JITTER_FILE = "jitter.csv"
RATE_FILE = "rate.csv"
SUMMARY_FILE = "summary.yaml"

BEST = "best"
WORST = "worst"
NEUTRAL = "neutral"

# (row, report attribute, hop, direction)
RANKING_ROWS: Tuple[Tuple[str, str, str, str], ...] = (
    ("rate_bps", "traffic_rate_bps", "rx", "max"),
    ("max_delay_s", "max_delay_s", "rx", "min"),
    ("avg_delay_s", "mean_delay_s", "rx", "min"),
    ("min_delay_s", "min_delay_s", "rx", "min"),
    ("max_jitter_s", "max_jitter_s", "rx", "min"),
    ("avg_jitter_s", "mean_abs_jitter_s", "rx", "min"),
    ("min_jitter_s", "min_jitter_s", "rx", "min"),
    ("loss_percent_tx", "loss_percent", "tx", "min"),
    ("loss_percent_rx", "loss_percent", "rx", "min"),
)


def _prepare(directory: PathLike) -> Path:
    path = Path(directory)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailure(f"cannot create report directory {path}: {e}") from e
    return path


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    try:
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e
    logger.debug("wrote %s (%d rows)", path, len(frame))
    return path


# ============================================
# Per-stream files
# ============================================

def emit_stream_files(report: QosReport, directory: PathLike) -> List[Path]:
    """
    Write received.csv, loss_events.csv and loss_cumulative.csv.

    The cumulative column is the running sum of gaps, so its last value is
    report.lost_count.
    """
    out = _prepare(directory)

    received = pd.DataFrame({
        "index": np.arange(1, len(report.arrivals) + 1, dtype=np.int64),
        "seq": np.array([r.seq for r in report.arrivals], dtype=np.int64),
        "recv_ts_ns": np.array([r.recv_ns for r in report.arrivals], dtype=np.int64),
    })
    detected = np.array([e.detected_at_ns for e in report.loss_events], dtype=np.int64)
    gaps = np.array([e.gap for e in report.loss_events], dtype=np.int64)
    events = pd.DataFrame({"detected_at_ns": detected, "gap": gaps})
    cumulative = pd.DataFrame({"detected_at_ns": detected, "cumulative_lost": np.cumsum(gaps)})

    return [
        _write_csv(received, out / RECEIVED_FILE),
        _write_csv(events, out / LOSS_EVENTS_FILE),
        _write_csv(cumulative, out / LOSS_CUMULATIVE_FILE),
    ]


def emit_timeseries(report: QosReport, directory: PathLike, window_s: float = 1.0) -> List[Path]:
    """Write delay.csv, jitter.csv and rate.csv for external plotting."""
    if report.delays is None or report.delays.n == 0:
        raise EmptySeries(f"{report.stream_id}: no delay samples to emit")
    out = _prepare(directory)

    delays = pd.DataFrame({
        "index": np.arange(1, report.delays.n + 1, dtype=np.int64),
        "seq": np.array(report.delays.seqs, dtype=np.int64),
        "delay_ns": report.delays.delays_ns,
    })
    jitter_ns = report.jitters.jitters_ns if report.jitters is not None else np.zeros(0, dtype=np.int64)
    jitters = pd.DataFrame({
        "index": np.arange(1, jitter_ns.size + 1, dtype=np.int64),
        "jitter_ns": jitter_ns,
    })
    rates = rate_series(report.arrivals, window_s)
    rate = pd.DataFrame({
        "window": np.arange(rates.size, dtype=np.int64),
        "start_s": np.arange(rates.size) * window_s,
        "rate_bps": rates,
    })

    return [
        _write_csv(delays, out / DELAY_FILE),
        _write_csv(jitters, out / JITTER_FILE),
        _write_csv(rate, out / RATE_FILE),
    ]


# ============================================
# Ranking table
# ============================================

@dataclass
class RankingTable:
    """
    Best/worst marks per QoS parameter across streams.

    best is the minimum for delay, jitter and loss rows and the maximum for
    the rate row. A value shared by several streams at the extreme is marked
    neutral, and a row whose values are all equal has no best or worst.
    """

    rows: List[str]
    cols: List[str]
    values: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)
    marks: Dict[str, Dict[str, str]] = field(default_factory=dict)

    @classmethod
    def build(cls, reports: Mapping[str, QosReport],
              tx_reports: Optional[Mapping[str, QosReport]] = None) -> "RankingTable":
        cols = list(reports)
        table = cls(rows=[], cols=cols)
        for row, attr, hop, direction in RANKING_ROWS:
            source = reports if hop == "rx" else tx_reports
            if source is None:
                continue
            values = {c: (getattr(source[c], attr) if c in source else None) for c in cols}
            table.rows.append(row)
            table.values[row] = values
            table.marks[row] = _mark_row(values, direction)
        return table

    def best(self, row: str) -> Optional[str]:
        return next((c for c, m in self.marks[row].items() if m == BEST), None)

    def worst(self, row: str) -> Optional[str]:
        return next((c for c, m in self.marks[row].items() if m == WORST), None)

    def to_dict(self) -> Dict[str, Any]:
        return {
            row: {c: {"value": self.values[row][c], "mark": self.marks[row][c]} for c in self.cols}
            for row in self.rows
        }

    def render(self) -> str:
        """Plain-text table; (+) marks the best cell and (-) the worst."""
        symbol = {BEST: " (+)", WORST: " (-)", NEUTRAL: ""}
        header = ["parameter"] + self.cols
        lines = [header]
        for row in self.rows:
            cells = [row]
            for c in self.cols:
                value = self.values[row][c]
                text = "-" if value is None else f"{value:.6g}"
                cells.append(text + symbol[self.marks[row][c]])
            lines.append(cells)
        widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
        return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip() for line in lines)


def _mark_row(values: Mapping[str, Optional[float]], direction: str) -> Dict[str, str]:
    marks = {c: NEUTRAL for c in values}
    present = {c: v for c, v in values.items() if v is not None}
    if len(set(present.values())) < 2:
        return marks
    lo, hi = min(present.values()), max(present.values())
    best, worst = (lo, hi) if direction == "min" else (hi, lo)
    best_cols = [c for c, v in present.items() if v == best]
    worst_cols = [c for c, v in present.items() if v == worst]
    if len(best_cols) == 1:
        marks[best_cols[0]] = BEST
    if len(worst_cols) == 1:
        marks[worst_cols[0]] = WORST
    return marks


# ============================================
# Summary
# ============================================

def emit_summary(reports: Mapping[str, QosReport], directory: PathLike,
                 tx_reports: Optional[Mapping[str, QosReport]] = None,
                 metadata: Optional[Mapping[str, Any]] = None) -> Tuple[Path, RankingTable]:
    """
    Write summary.yaml with every report field per port pair and the ranking.

    Args:
        reports: Port-pair label (e.g. "5000-1240") -> report at the receiving port
        directory: Output directory
        tx_reports: Same labels -> report at the transmitting port, if observed
        metadata: Extra top-level keys (experiment name, seed)
    """
    if not reports:
        raise EmptySeries("no reports to summarize")
    out = _prepare(directory)
    table = RankingTable.build(reports, tx_reports)

    streams: Dict[str, Dict[str, Any]] = {}
    for label, report in reports.items():
        entry = {"rx": report.to_dict()}
        if tx_reports and label in tx_reports:
            entry["tx"] = tx_reports[label].to_dict()
        streams[label] = entry

    document = dict(metadata or {})
    document["streams"] = streams
    document["ranking"] = table.to_dict()

    path = out / SUMMARY_FILE
    try:
        with open(path, "w") as f:
            yaml.safe_dump(document, f, sort_keys=False, default_flow_style=False)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e
    logger.info("summary written to %s", path)
    return path, table


def load_summary(path: PathLike) -> Tuple[Dict[str, QosReport], Dict[str, QosReport]]:
    """Read summary.yaml back into (rx reports, tx reports) keyed by port pair."""
    try:
        with open(path) as f:
            document = yaml.safe_load(f)
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    rx: Dict[str, QosReport] = {}
    tx: Dict[str, QosReport] = {}
    for label, entry in document.get("streams", {}).items():
        rx[label] = QosReport.from_dict(entry["rx"])
        if "tx" in entry:
            tx[label] = QosReport.from_dict(entry["tx"])
    return rx, tx
