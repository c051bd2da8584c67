import json

import pytest

from teleosim.cli import EXIT_CONFIG, EXIT_OK, main


def test_run_writes_log_and_prints_metrics(tmp_path, capsys):
    out = tmp_path / "log.jsonl"
    rc = main(
        ["run", "--duration", "0.5", "--no-cameras", "--out", str(out)]
    )
    assert rc == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["duration"] == pytest.approx(0.5)
    assert out.exists()


def test_metrics_subcommand(tmp_path, capsys):
    out = tmp_path / "log.jsonl"
    main(["run", "--duration", "0.3", "--no-cameras", "--out", str(out)])
    capsys.readouterr()
    rc = main(["metrics", str(out)])
    assert rc == EXIT_OK
    m = json.loads(capsys.readouterr().out)
    assert "uplink_mbps" in m and "tracking_rms_m" in m


def test_replay_prints_records(tmp_path, capsys):
    out = tmp_path / "log.jsonl"
    main(["run", "--duration", "0.2", "--no-cameras", "--out", str(out)])
    capsys.readouterr()
    rc = main(["replay", str(out)])
    assert rc == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) >= 10
    assert all(json.loads(ln) for ln in lines)


def test_missing_log_is_config_error(capsys):
    assert main(["metrics", "/nonexistent/log.jsonl"]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_bad_script_path_is_config_error(capsys):
    rc = main(["run", "--script", "/nonexistent/script.jsonl", "--duration", "0.1"])
    assert rc == EXIT_CONFIG


def test_codec_bench(capsys):
    rc = main(["codec-bench", "--frames", "3"])
    assert rc == EXIT_OK
    r = json.loads(capsys.readouterr().out)
    assert r["frames"] == 3 and r["encode_fps"] > 0 and r["ratio"] > 1.0


def test_channel_bench(capsys):
    rc = main(["channel-bench", "--profile", "wifi", "--packets", "5000"])
    assert rc == EXIT_OK
    r = json.loads(capsys.readouterr().out)
    assert r["rtt_min_ms"] < r["rtt_mean_ms"] < r["rtt_max_ms"]


def test_channel_bench_unknown_profile(capsys):
    assert main(["channel-bench", "--profile", "tin-cans"]) == EXIT_CONFIG
