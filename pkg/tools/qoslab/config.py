"""
Experiment Configuration

Loads YAML experiment files, validates them against
schema/experiment.schema.json and turns them into frozen config objects.
Names that are not file paths resolve to the built-in configs/ directory.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import yaml
from jsonschema import Draft202012Validator

from .channel import ImpairmentSpec
from .errors import ConfigError, IoFailure
from .metrics import DEFAULT_LOSS_SAMPLE, DEFAULT_WINDOW
from .netem import parse_impairment
from .streamgen import StreamProfile, builtin_profile

logger = logging.getLogger(__name__)

ROOT = Path(__file__).resolve().parents[2]
SCHEMA_PATH = ROOT / "schema" / "experiment.schema.json"
CONFIG_DIR = ROOT / "configs"


@dataclass(frozen=True)
class StreamConfig:
    """One stream and its two hops: generator -> tx_port (upstream), relay -> rx_port (impairment)."""

    profile: StreamProfile
    tx_port: int
    rx_port: int
    impairment: ImpairmentSpec
    upstream: Optional[ImpairmentSpec] = None

    @property
    def label(self) -> str:
        return f"{self.tx_port}-{self.rx_port}"


@dataclass(frozen=True)
class ExperimentConfig:
    streams: Tuple[StreamConfig, ...]
    name: str = "experiment"
    seed: int = 0
    duration_s: Optional[float] = None
    output_dir: str = "out"
    window: int = DEFAULT_WINDOW
    delay_sample: int = 0
    loss_sample: int = DEFAULT_LOSS_SAMPLE
    rate_window_s: float = 1.0

    def __post_init__(self):
        if not self.streams:
            raise ConfigError("at least one stream is required", field="streams")
        seen_ports: Dict[int, int] = {}
        seen_names: Dict[str, int] = {}
        for i, stream in enumerate(self.streams):
            for port in (stream.tx_port, stream.rx_port):
                if port in seen_ports:
                    raise ConfigError(
                        f"port {port} already used by streams[{seen_ports[port]}]", field=f"streams[{i}].ports"
                    )
                seen_ports[port] = i
            if stream.profile.name in seen_names:
                raise ConfigError(
                    f"stream name {stream.profile.name!r} already used by streams[{seen_names[stream.profile.name]}]",
                    field=f"streams[{i}].profile.name",
                )
            seen_names[stream.profile.name] = i

    @property
    def profiles(self) -> List[StreamProfile]:
        return [s.profile for s in self.streams]

    @property
    def impairments(self) -> Dict[str, ImpairmentSpec]:
        return {s.profile.name: s.impairment for s in self.streams}

    @property
    def port_map(self) -> Dict[str, Tuple[int, int]]:
        return {s.profile.name: (s.tx_port, s.rx_port) for s in self.streams}


# ============================================
# Loading
# ============================================

def _format_path(parts) -> str:
    out = ""
    for part in parts:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def _schema_validator() -> Draft202012Validator:
    schema = json.loads(SCHEMA_PATH.read_text())
    return Draft202012Validator(schema)


def validate_document(data: Any) -> None:
    """Raise ConfigError naming the first offending field, if any."""
    errors = sorted(_schema_validator().iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, field=_format_path(err.absolute_path))


def resolve_config_path(source: Union[str, Path]) -> Path:
    """A file path as given, or a built-in config by name (e.g. "paper-iv")."""
    path = Path(source)
    if path.is_file():
        return path
    builtin = CONFIG_DIR / f"{source}.yaml"
    if builtin.is_file():
        return builtin
    available = ", ".join(sorted(p.stem for p in CONFIG_DIR.glob("*.yaml"))) if CONFIG_DIR.is_dir() else ""
    raise ConfigError(f"no config file or built-in named {str(source)!r} (built-ins: {available})", field="config")


def load_config(source: Union[str, Path], overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Load, validate and resolve an experiment config file or built-in name.

    overrides replace top-level keys (seed, window, ...) before validation.
    """
    path = resolve_config_path(source)
    try:
        text = path.read_text()
    except OSError as e:
        raise IoFailure(f"cannot read config {path}: {e}") from e
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"invalid YAML in {path}{where}: {getattr(e, 'problem', e)}", field="config") from e
    if data is None:
        data = {}
    if overrides and isinstance(data, dict):
        data = {**data, **overrides}
    logger.info("loaded config %s", path)
    return config_from_dict(data)


def config_from_dict(data: Mapping[str, Any]) -> ExperimentConfig:
    validate_document(data)
    seed = data.get("seed", 0)
    duration_s = data.get("duration_s")
    children = np.random.SeedSequence(seed).spawn(len(data["streams"]))

    streams = []
    for i, (entry, child) in enumerate(zip(data["streams"], children)):
        profile_seed, upstream_seed, access_seed = (int(x) for x in child.generate_state(3))
        path = f"streams[{i}]"
        tx_port, rx_port = entry["ports"]
        try:
            profile = _build_profile(entry["profile"], i, profile_seed, tx_port, duration_s)
        except ConfigError as e:
            raise e.at(path) from e
        upstream = None
        if "upstream" in entry:
            upstream = _build_impairment(entry["upstream"], upstream_seed, f"{path}.upstream")
        impairment = _build_impairment(entry.get("impairment", {}), access_seed, f"{path}.impairment")
        streams.append(StreamConfig(profile, tx_port, rx_port, impairment, upstream))

    kwargs = {k: data[k] for k in ("name", "output_dir", "window", "delay_sample", "loss_sample", "rate_window_s")
              if k in data}
    return ExperimentConfig(streams=tuple(streams), seed=seed, duration_s=duration_s, **kwargs)


def _build_profile(spec: Union[str, Mapping[str, Any]], index: int, seed: int, tx_port: int,
                   duration_s: Optional[float]) -> StreamProfile:
    """Profile from a preset name or mapping; the seed is derived unless given."""
    defaults: Dict[str, Any] = {"seed": seed, "dst_port": tx_port}
    if duration_s is not None:
        defaults["duration_s"] = duration_s

    if isinstance(spec, str):
        return builtin_profile(spec, **defaults)

    fields = dict(spec)
    preset = fields.pop("preset", None)
    merged = {**defaults, **fields}
    if preset is not None:
        return builtin_profile(preset, **merged)
    merged.setdefault("name", f"stream{index + 1}")
    for required in ("packet_payload_bytes", "packets_per_minute"):
        if required not in merged:
            raise ConfigError("is required without a preset", field=required)
    return StreamProfile(**merged)


def _build_impairment(spec: Union[str, Mapping[str, Any]], seed: int, path: str) -> ImpairmentSpec:
    if isinstance(spec, str):
        try:
            return parse_impairment(spec, seed=seed)
        except ConfigError as e:
            raise ConfigError(e.detail, field=path) from e

    fields = dict(spec)
    jitter = fields.pop("jitter", None)
    if jitter is not None:
        fields["jitter_model"] = jitter["model"]
        fields["jitter_s"] = jitter.get("value", 0.0)
    fields.setdefault("seed", seed)
    try:
        return ImpairmentSpec(**fields)
    except ConfigError as e:
        raise e.at(path) from e
