"""
CLI Tests

Runs the qoslab subcommands end to end on short streams in temporary
directories.
"""

import subprocess
import sys
from pathlib import Path

import pandas as pd
import pytest
import yaml

from tools.qoslab import __version__, cli
from tools.qoslab.capture_io import SendLog, read_pcap
from tools.qoslab.errors import ConfigError
from tools.qoslab.report import DELAY_FILE, RECEIVED_FILE, SUMMARY_FILE, load_summary

ROOT = Path(__file__).resolve().parents[2]


@pytest.fixture
def camera_dir(tmp_path):
    out = tmp_path / "gen"
    assert cli.main(["generate", "stream1-camera", "--duration", "2", "-o", str(out)]) == 0
    return out


def short_config(tmp_path, duration_s=3.0):
    doc = {
        "name": "short",
        "seed": 5,
        "duration_s": duration_s,
        "window": 3000,
        "streams": [
            {"profile": "stream1-camera", "ports": [5000, 1240],
             "upstream": "delay 2ms loss 2%",
             "impairment": {"base_delay_s": 0.2, "jitter": {"model": "uniform", "value": 0.001},
                            "loss_prob": 0.02}},
            {"profile": "stream2-vod", "ports": [5001, 1241],
             "impairment": "delay 200ms uniform 1ms loss 1%"},
        ],
    }
    path = tmp_path / "short.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


class TestParsePorts:
    def test_plain_and_named(self):
        assert cli.parse_ports("5000, 5001=stream2-vod") == [5000, (5001, "stream2-vod")]

    @pytest.mark.parametrize("text", ["", "abc", "70000", "0"])
    def test_invalid(self, text):
        with pytest.raises(ConfigError) as info:
            cli.parse_ports(text)
        assert info.value.field == "--ports"


class TestParser:
    def test_usage_error_exits_1(self):
        with pytest.raises(SystemExit) as info:
            cli.main(["analyze", "capture.pcap"])
        assert info.value.code == 1

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as info:
            cli.main(["transcode"])
        assert info.value.code == 1

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as info:
            cli.main(["--version"])
        assert info.value.code == 0
        assert __version__ in capsys.readouterr().out


class TestGenerate:
    def test_writes_pcap_and_send_log(self, camera_dir):
        capture = read_pcap(camera_dir / "stream.pcap")
        log = SendLog.read(camera_dir / "send_log.csv")
        assert len(capture) == len(log) == 134
        assert capture.nanosecond
        assert {d.dst_port for d in capture} == {5000}

    def test_microsecond_pcap(self, tmp_path):
        out = tmp_path / "us"
        assert cli.main(["generate", "stream2-vod", "--duration", "1", "--microseconds", "-o", str(out)]) == 0
        assert not read_pcap(out / "stream.pcap").nanosecond

    def test_config_source_generates_every_stream(self, tmp_path):
        out = tmp_path / "all"
        assert cli.main(["generate", str(short_config(tmp_path, 1.0)), "-o", str(out)]) == 0
        assert {d.dst_port for d in read_pcap(out / "stream.pcap")} == {5000, 5001}

    def test_overrides_need_builtin(self, tmp_path, capsys):
        code = cli.main(["generate", str(short_config(tmp_path)), "--seed", "3", "-o", str(tmp_path / "x")])
        assert code == 1
        assert "Error:" in capsys.readouterr().err

    def test_unknown_source(self, tmp_path):
        assert cli.main(["generate", "stream9", "-o", str(tmp_path)]) == 1


class TestImpair:
    def test_impair_writes_truth(self, camera_dir, tmp_path):
        out = tmp_path / "impaired.pcap"
        code = cli.main(["impair", str(camera_dir / "stream.pcap"), "-o", str(out),
                         "--netem", "delay 200ms loss 10%", "--seed", "4"])
        assert code == 0
        truth = yaml.safe_load(out.with_suffix(".truth.yaml").read_text())
        assert truth["impairment"] == "delay 200ms loss 0.1 seed 4"
        dropped = truth["ports"][5000]["dropped_seqs"]
        assert len(read_pcap(out)) == 134 - len(dropped)

    def test_spec_file(self, camera_dir, tmp_path):
        spec = tmp_path / "spec.yaml"
        spec.write_text(yaml.safe_dump({"base_delay_s": 0.1, "corrupt_prob": 0.5, "seed": 2}))
        out = tmp_path / "corrupted.pcap"
        assert cli.main(["impair", str(camera_dir / "stream.pcap"), "-o", str(out), "--spec", str(spec)]) == 0
        assert len(read_pcap(out)) == 134

    def test_bad_expression_exits_1(self, camera_dir, tmp_path, capsys):
        code = cli.main(["impair", str(camera_dir / "stream.pcap"), "-o", str(tmp_path / "o.pcap"),
                         "--netem", "delay fast"])
        assert code == 1
        assert "--netem" in capsys.readouterr().err

    def test_missing_input_exits_2(self, tmp_path):
        assert cli.main(["impair", str(tmp_path / "none.pcap"), "-o", str(tmp_path / "o.pcap")]) == 2

    def test_bad_magic_exits_2(self, tmp_path):
        bogus = tmp_path / "bogus.pcap"
        bogus.write_bytes(b"not a capture file at all")
        assert cli.main(["impair", str(bogus), "-o", str(tmp_path / "o.pcap")]) == 2


class TestAnalyze:
    @pytest.fixture
    def impaired(self, camera_dir, tmp_path):
        out = tmp_path / "impaired.pcap"
        assert cli.main(["impair", str(camera_dir / "stream.pcap"), "-o", str(out),
                         "--netem", "delay 200ms uniform 2ms loss 5% seed 1"]) == 0
        return out

    def test_with_send_log(self, impaired, camera_dir, tmp_path):
        report_dir = tmp_path / "report"
        code = cli.main(["analyze", str(impaired), "--ports", "5000", "--send-log",
                         str(camera_dir / "send_log.csv"), "-o", str(report_dir)])
        assert code == 0
        truth = yaml.safe_load(impaired.with_suffix(".truth.yaml").read_text())
        rx, _ = load_summary(report_dir / SUMMARY_FILE)
        report = rx["5000"]
        assert report.stream_id == "stream1-camera"
        assert report.lost_count == len(truth["ports"][5000]["dropped_seqs"])
        assert report.mean_delay_s == pytest.approx(0.2, abs=0.002)
        assert (report_dir / "5000" / DELAY_FILE).exists()

    def test_without_send_log_omits_delay(self, impaired, tmp_path, capsys):
        report_dir = tmp_path / "report"
        assert cli.main(["analyze", str(impaired), "--ports", "5000", "-o", str(report_dir)]) == 0
        rx, _ = load_summary(report_dir / SUMMARY_FILE)
        assert rx["5000"].mean_delay_s is None
        assert not (report_dir / "5000" / DELAY_FILE).exists()
        received = pd.read_csv(report_dir / "5000" / RECEIVED_FILE)
        assert len(received) == rx["5000"].received_count
        assert "delay n/a" in capsys.readouterr().out

    def test_port_without_traffic_exits_3(self, impaired, tmp_path):
        assert cli.main(["analyze", str(impaired), "--ports", "6000", "-o", str(tmp_path / "r")]) == 3

    def test_input_and_live_conflict(self, impaired, tmp_path):
        assert cli.main(["analyze", str(impaired), "--live", "--ports", "5000"]) == 1
        assert cli.main(["analyze", "--ports", "5000"]) == 1

    def test_window_must_be_positive(self, impaired):
        assert cli.main(["analyze", str(impaired), "--ports", "5000", "--window", "0"]) == 1

    def test_delay_sample_must_not_be_negative(self, impaired):
        assert cli.main(["analyze", str(impaired), "--ports", "5000", "--delay-sample=-1"]) == 1


class TestExperiment:
    def test_runs_config(self, tmp_path):
        out = tmp_path / "exp"
        assert cli.main(["experiment", str(short_config(tmp_path)), "-o", str(out), "--pcap"]) == 0
        rx, tx = load_summary(out / SUMMARY_FILE)
        assert set(rx) == set(tx) == {"5000-1240", "5001-1241"}
        assert tx["5001-1241"].lost_count == 0
        assert rx["5000-1240"].mean_delay_s == pytest.approx(0.2, abs=0.002)
        for path in ("5000-1240/5000/received.csv", "5000-1240/1240/delay.csv",
                     "5000-1240/ground_truth.yaml", "tx.pcap", "rx.pcap", "send_log_rx.csv"):
            assert (out / path).exists(), path

    def test_relay_sequence_is_contiguous(self, tmp_path):
        out = tmp_path / "exp"
        assert cli.main(["experiment", str(short_config(tmp_path)), "-o", str(out), "--pcap"]) == 0
        relay_log = SendLog.read(out / "send_log_rx.csv").streams()["stream1-camera"]
        assert [e.seq for e in relay_log] == list(range(len(relay_log)))

    def test_missing_config_exits_1(self, tmp_path):
        assert cli.main(["experiment", str(tmp_path / "missing.yaml")]) == 1


def test_module_entry_point():
    result = subprocess.run(
        [sys.executable, "-m", "tools.qoslab.cli", "--version"],
        cwd=ROOT, capture_output=True, text=True,
    )
    assert result.returncode == 0
    assert __version__ in result.stdout
