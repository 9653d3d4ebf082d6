"""
Netem Expression Tests

Parsing of tc-netem style impairment expressions into ImpairmentSpec.
"""

import pytest

from tools.qoslab.channel import ImpairmentSpec
from tools.qoslab.errors import ImpairmentSyntaxError, InvalidSpec
from tools.qoslab.netem import NetemParser, format_impairment, parse_impairment


@pytest.fixture
def parser():
    return NetemParser()


class TestParse:
    def test_empty_is_identity(self, parser):
        assert parser.parse("").is_identity
        assert parser.parse("none").is_identity

    def test_full_expression(self, parser):
        spec = parser.parse("delay 200ms uniform 5ms loss 0.4% reorder 1% 50ms corrupt 0.1% offset -4s seed 7")
        assert spec == ImpairmentSpec(
            base_delay_s=0.2, jitter_model="uniform", jitter_s=0.005, loss_prob=0.004,
            reorder_prob=0.01, reorder_extra_delay_s=0.05, corrupt_prob=0.001,
            clock_offset_s=-4.0, seed=7,
        )

    def test_clause_order_is_free(self, parser):
        a = parser.parse("loss 1% delay 10ms")
        b = parser.parse("delay 10ms loss 1%")
        assert a == b

    def test_normal_jitter(self, parser):
        spec = parser.parse("delay 100ms normal 2ms")
        assert spec.jitter_model == "normal"
        assert spec.jitter_s == pytest.approx(0.002)

    def test_bare_jitter_is_uniform(self, parser):
        spec = parser.parse("delay 100ms 3ms")
        assert spec.jitter_model == "uniform"
        assert spec.jitter_s == pytest.approx(0.003)

    @pytest.mark.parametrize("text,expected", [
        ("delay 1s", 1.0),
        ("delay 250us", 0.00025),
        ("delay 1500ns", 0.0000015),
        ("delay 2.5ms", 0.0025),
    ])
    def test_duration_units(self, parser, text, expected):
        assert parser.parse(text).base_delay_s == pytest.approx(expected)

    def test_bare_fraction_probability(self, parser):
        assert parser.parse("loss 0.003").loss_prob == pytest.approx(0.003)

    def test_default_seed_used_without_clause(self, parser):
        assert parser.parse("loss 1%", seed=42).seed == 42
        assert parser.parse("loss 1% seed 3", seed=42).seed == 3

    def test_positive_offset(self, parser):
        assert parser.parse("offset +4001ms").clock_offset_s == pytest.approx(4.001)


class TestErrors:
    def test_syntax_error_has_position(self, parser):
        with pytest.raises(ImpairmentSyntaxError) as info:
            parser.parse("delay 200ms loss")
        assert info.value.column is not None
        assert info.value.exit_code == 1

    def test_unknown_keyword(self, parser):
        with pytest.raises(ImpairmentSyntaxError):
            parser.parse("duplicate 1%")

    def test_duration_needs_unit(self, parser):
        with pytest.raises(ImpairmentSyntaxError):
            parser.parse("delay 200")

    def test_duplicate_clause(self, parser):
        with pytest.raises(InvalidSpec):
            parser.parse("loss 1% loss 2%")

    def test_out_of_range_probability(self, parser):
        with pytest.raises(InvalidSpec) as info:
            parser.parse("loss 150%")
        assert info.value.field == "loss_prob"


class TestFormat:
    @pytest.mark.parametrize("spec", [
        ImpairmentSpec(),
        ImpairmentSpec(base_delay_s=0.2, jitter_model="normal", jitter_s=0.004, loss_prob=0.003, seed=9),
        ImpairmentSpec(reorder_prob=0.02, reorder_extra_delay_s=0.03, corrupt_prob=0.001),
        ImpairmentSpec(clock_offset_s=-4.001, seed=1),
    ])
    def test_parse_inverts_format(self, spec):
        assert parse_impairment(format_impairment(spec)) == spec

    def test_canonical_text(self):
        text = format_impairment(ImpairmentSpec(base_delay_s=0.2, jitter_model="uniform", jitter_s=0.005, seed=7))
        assert text == "delay 200ms uniform 5ms seed 7"
