"""
QoS Lab Errors

Exception hierarchy shared by every qoslab module. Each family carries the
process exit code the CLI returns when the error escapes a command.
"""

from typing import Optional


class QosLabError(Exception):
    """Base class for all qoslab errors."""

    exit_code = 3


# ============================================
# Configuration (exit 1)
# ============================================

class ConfigError(QosLabError):
    """Invalid configuration; `field` names the offending flag or config path."""

    exit_code = 1

    def __init__(self, message: str, field: Optional[str] = None):
        self.detail = message
        if field and field not in message:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field

    def at(self, path: str) -> "ConfigError":
        """The same error re-anchored under a config path such as streams[1]."""
        field = f"{path}.{self.field}" if self.field else path
        return ConfigError(self.detail, field=field)


class InvalidProfile(ConfigError):
    """Stream profile with a non-positive or inconsistent field."""


class InvalidSpec(ConfigError):
    """Impairment spec with an out-of-range value."""


class ImpairmentSyntaxError(ConfigError):
    """Netem expression that does not parse."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None,
                 field: Optional[str] = None):
        super().__init__(message, field=field)
        self.line = line
        self.column = column


# ============================================
# Capture and file I/O (exit 2)
# ============================================

class CaptureError(QosLabError):
    exit_code = 2


class IoFailure(CaptureError):
    """Reading or writing a file failed."""


class BadMagic(CaptureError):
    """File does not start with a classic pcap magic number."""


class TruncatedRecord(CaptureError):
    """Pcap record header or body cut short."""


class BindFailure(CaptureError):
    """A live capture port could not be bound."""

    def __init__(self, port: int, reason: str):
        super().__init__(f"cannot bind UDP port {port}: {reason}")
        self.port = port


# ============================================
# Analysis (exit 3)
# ============================================

class AnalysisError(QosLabError):
    exit_code = 3


class EmptyStream(AnalysisError):
    """No received records to compute a rate over."""


class EmptySeries(AnalysisError):
    """Too few samples for a delay or jitter statistic."""


class MissingTimestamp(AnalysisError):
    """A received record has no send timestamp."""


class NoPackets(AnalysisError):
    """PER requested with zero received packets."""


# ============================================
# Packet parsing (exit 3)
# ============================================

class PacketError(QosLabError):
    exit_code = 3


class InvalidPacket(PacketError):
    """A packet field is outside its bit width."""


class TruncatedHeader(PacketError):
    """Buffer shorter than the fixed RTP header."""


class UnsupportedVersion(PacketError):
    """RTP version bits other than 2."""


class MissingStart(PacketError):
    """First TS packet of a PES lacks payload_unit_start."""


class ContinuityBreak(PacketError):
    """Continuity counter skipped inside a packetized run."""

    def __init__(self, position: int, expected: int, found: int):
        super().__init__(
            f"continuity counter break at TS packet {position}: expected {expected}, found {found}"
        )
        self.position = position
        self.expected = expected
        self.found = found
