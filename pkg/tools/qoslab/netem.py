"""
Netem Expression Parser

Parses one-line impairment expressions into ImpairmentSpec using a Lark
grammar (netem.lark), and renders specs back into canonical expressions.
"""

from decimal import Decimal
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from lark import Lark, Transformer, UnexpectedInput
from lark.exceptions import VisitError

from .channel import ImpairmentSpec
from .errors import ImpairmentSyntaxError, InvalidSpec

_UNITS = {"ns": Decimal(1), "us": Decimal(10) ** 3, "ms": Decimal(10) ** 6, "s": Decimal(10) ** 9}


def _duration_ns(text: str) -> int:
    text = str(text)
    for suffix in ("ns", "us", "ms", "s"):
        if text.endswith(suffix):
            return int(Decimal(text[:-len(suffix)]) * _UNITS[suffix])
    raise ImpairmentSyntaxError(f"duration {text!r} lacks a unit")


def _probability(text: str) -> float:
    text = str(text)
    if text.endswith("%"):
        return float(Decimal(text[:-1]) / 100)
    return float(text)


class NetemTransformer(Transformer):
    """Turns the parse tree into (field, value) pairs."""

    def start(self, clauses: List[List[Tuple[str, Any]]]) -> Dict[str, Any]:
        fields: Dict[str, Any] = {}
        seen = set()
        for clause in clauses:
            keyword = clause[0][0]
            if keyword in seen:
                raise InvalidSpec(f"clause '{keyword}' given more than once", field="netem")
            seen.add(keyword)
            for name, value in clause[1:]:
                fields[name] = value
        return fields

    def delay(self, children):
        out = [("delay", None), ("base_delay_s", _duration_ns(children[0]) / 1e9)]
        if len(children) > 1:
            out.extend(children[1])
        return out

    def uniform_jitter(self, children):
        return [("jitter_model", "uniform"), ("jitter_s", _duration_ns(children[0]) / 1e9)]

    def normal_jitter(self, children):
        return [("jitter_model", "normal"), ("jitter_s", _duration_ns(children[0]) / 1e9)]

    def loss(self, children):
        return [("loss", None), ("loss_prob", _probability(children[0]))]

    def reorder(self, children):
        out = [("reorder", None), ("reorder_prob", _probability(children[0]))]
        if len(children) > 1:
            out.append(("reorder_extra_delay_s", _duration_ns(children[1]) / 1e9))
        return out

    def corrupt(self, children):
        return [("corrupt", None), ("corrupt_prob", _probability(children[0]))]

    def offset(self, children):
        text = str(children[0])
        sign = -1 if text.startswith("-") else 1
        return [("offset", None), ("clock_offset_s", sign * _duration_ns(text.lstrip("+-")) / 1e9)]

    def seed(self, children):
        return [("seed", None), ("seed", int(children[0]))]

    def none(self, children):
        return [("none", None)]


class NetemParser:
    """Lark LALR parser for impairment expressions."""

    def __init__(self, grammar_path: Optional[str] = None):
        self.grammar_path = grammar_path or str(Path(__file__).parent / "netem.lark")
        self._parser: Optional[Lark] = None

    @property
    def parser(self) -> Lark:
        if self._parser is None:
            with open(self.grammar_path, "r") as f:
                self._parser = Lark(f.read(), parser="lalr", start="start")
        return self._parser

    def parse(self, text: str, seed: Optional[int] = None) -> ImpairmentSpec:
        """
        Parse an expression into an ImpairmentSpec.

        Args:
            text: Expression such as "delay 200ms uniform 5ms loss 0.4%"
            seed: Seed used when the expression has no seed clause

        Raises:
            ImpairmentSyntaxError: The expression does not parse
            InvalidSpec: A clause repeats or a value is out of range
        """
        try:
            tree = self.parser.parse(text)
        except UnexpectedInput as e:
            raise ImpairmentSyntaxError(
                f"cannot parse impairment {text!r} at column {e.column}", line=e.line, column=e.column,
                field="netem",
            ) from None
        try:
            fields = NetemTransformer().transform(tree)
        except VisitError as e:
            raise e.orig_exc from None
        if seed is not None:
            fields.setdefault("seed", seed)
        return ImpairmentSpec(**fields)


_default_parser = NetemParser()


def parse_impairment(text: str, seed: Optional[int] = None) -> ImpairmentSpec:
    """Convenience wrapper around a shared NetemParser."""
    return _default_parser.parse(text, seed=seed)


def _format_duration(seconds: float) -> str:
    ns = int(round(seconds * 1e9))
    for unit, scale in (("s", 10 ** 9), ("ms", 10 ** 6), ("us", 10 ** 3)):
        if ns and ns % scale == 0:
            return f"{ns // scale}{unit}"
    return f"{ns}ns"


def format_impairment(spec: ImpairmentSpec) -> str:
    """Canonical expression for a spec; parse_impairment inverts it."""
    parts = []
    if spec.base_delay_s or spec.jitter_model != "none":
        parts.append(f"delay {_format_duration(spec.base_delay_s)}")
        if spec.jitter_model != "none":
            parts.append(f"{spec.jitter_model} {_format_duration(spec.jitter_s)}")
    if spec.loss_prob:
        parts.append(f"loss {spec.loss_prob!r}")
    if spec.reorder_prob:
        parts.append(f"reorder {spec.reorder_prob!r} {_format_duration(spec.reorder_extra_delay_s)}")
    if spec.corrupt_prob:
        parts.append(f"corrupt {spec.corrupt_prob!r}")
    if spec.clock_offset_s:
        sign = "-" if spec.clock_offset_s < 0 else ""
        parts.append(f"offset {sign}{_format_duration(abs(spec.clock_offset_s))}")
    parts.append(f"seed {spec.seed}")
    return " ".join(parts)
