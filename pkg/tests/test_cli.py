from __future__ import annotations

import io
import json
import types

import numpy as np
import pytest

from slidingasr import bench, cli
from slidingasr.config import count_params, preset_config, save_config
from slidingasr.frontend import write_wav
from slidingasr.weights import save_weights

PAPER_TOTALS_M = {"tiny": 33.57, "small": 123.36, "medium": 244.93}


@pytest.fixture(scope="module")
def micro_file(tmp_path_factory, micro_weights):
    path = tmp_path_factory.mktemp("w") / "micro.msv2"
    save_weights(micro_weights, path)
    return path


@pytest.fixture(scope="module")
def speech_wav(tmp_path_factory):
    path = tmp_path_factory.mktemp("a") / "speech.wav"
    write_wav(path, bench.speech_like(1.5, seed=4, silence_after_s=0.6))
    return path


def _run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize("size", ["tiny", "small", "medium"])
def test_param_count_presets(capsys, size):
    code, out, _ = _run(capsys, "param-count", size)
    assert code == 0
    got = json.loads(out)["params"]["total"]
    assert got == count_params(preset_config(size)).total
    assert abs(got / 1e6 - PAPER_TOTALS_M[size]) / PAPER_TOTALS_M[size] < 0.05


def test_param_count_csv_and_config_path(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    save_config(preset_config("tiny"), cfg)
    code, out, _ = _run(capsys, "param-count", str(cfg), "--format", "csv")
    assert code == 0
    header, row = out.strip().splitlines()
    assert "total" in header.split(",")
    assert str(count_params(preset_config("tiny")).total) in row.split(",")


def test_param_count_bad_name(capsys):
    code, _, err = _run(capsys, "param-count", "huge")
    assert code == 2 and "huge" in err


def test_missing_audio_exit_3(capsys, micro_file, tmp_path):
    code, _, err = _run(capsys, "transcribe", str(tmp_path / "nope.wav"), "--weights", str(micro_file))
    assert code == 3 and "no such file" in err


def test_non_wav_exit_3(capsys, micro_file, tmp_path):
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"not a wav at all")
    code, _, err = _run(capsys, "transcribe", str(bad), "--weights", str(micro_file))
    assert code == 3


def test_bad_weights_exit_4(capsys, speech_wav, tmp_path):
    bad = tmp_path / "bad.msv2"
    bad.write_bytes(b"garbage" * 10)
    assert _run(capsys, "transcribe", str(speech_wav), "--weights", str(bad))[0] == 4
    assert _run(capsys, "transcribe", str(speech_wav), "--weights", str(tmp_path / "none"))[0] == 4


def test_transcribe_modes_agree(capsys, speech_wav, micro_file):
    base = ["transcribe", str(speech_wav), "--weights", str(micro_file), "--max-tokens", "6"]
    code_s, out_s, _ = _run(capsys, *base, "--mode", "streaming", "--chunk-ms", "40")
    code_f, out_f, _ = _run(capsys, *base, "--mode", "full")
    assert code_s == code_f == 0
    s, f = json.loads(out_s), json.loads(out_f)
    assert s["tokens"] == f["tokens"] and s["text"] == f["text"]
    assert len(s["tokens"]) >= 1


def test_random_seed_deterministic(capsys, speech_wav):
    argv = ["transcribe", str(speech_wav), "--random-seed", "3", "--max-tokens", "3", "--mode", "full"]
    a = json.loads(_run(capsys, *argv)[1])["tokens"]
    b = json.loads(_run(capsys, *argv)[1])["tokens"]
    assert a == b


def test_stream_stdin_jsonl(capsys, monkeypatch, micro_file, speech_wav, tmp_path):
    monkeypatch.setattr("sys.stdin", types.SimpleNamespace(buffer=io.BytesIO(speech_wav.read_bytes())))
    report = tmp_path / "r.json"
    code, out, _ = _run(capsys, "stream", "-", "--weights", str(micro_file), "--max-tokens", "4",
                        "--cadence-ms", "200", "--report", str(report))
    assert code == 0
    events = [json.loads(line) for line in out.strip().splitlines()]
    assert events and events[-1]["kind"] == "final"
    assert {"kind", "text", "audio_time_ms", "wall_time_ms", "segment"} <= set(events[0])
    reports = json.loads(report.read_text())
    assert len(reports) == sum(e["kind"] == "final" for e in events)


def test_stream_truncated_raw_exit_3(capsys, monkeypatch, micro_file):
    monkeypatch.setattr("sys.stdin", types.SimpleNamespace(buffer=io.BytesIO(b"\x00" * 10)))
    assert _run(capsys, "stream", "-", "--raw", "--weights", str(micro_file))[0] == 3


def test_cost_model_csv_and_plot(capsys, tmp_path):
    out_csv, png = tmp_path / "cm.csv", tmp_path / "cm.png"
    code, _, _ = _run(capsys, "cost-model", "--out", str(out_csv), "--plot", str(png))
    assert code == 0
    lines = out_csv.read_text().strip().splitlines()
    assert lines[0].split(",")[0] == "N_s" and lines[0].endswith("threshold")
    assert len(lines) == 1 + 60
    assert png.stat().st_size > 1000 and png.read_bytes()[:4] == b"\x89PNG"


def test_cost_model_json_crossing(capsys):
    code, out, _ = _run(capsys, "cost-model", "--format", "json", "--tops", "0.5")
    doc = json.loads(out)
    assert code == 0
    assert doc["threshold_crossing_s"]["0.5 TOPS"] == pytest.approx(4.11466, abs=1e-4)
    assert doc["ttft_sliding_ms"] == pytest.approx(120.147456, abs=1e-6)


def test_cost_model_bad_grid_exit_2(capsys):
    assert _run(capsys, "cost-model", "--n-step", "0")[0] == 2


def test_bench_ttft_csv_and_plot(capsys, micro_file, tmp_path):
    png = tmp_path / "ttft.png"
    code, out, _ = _run(capsys, "bench-ttft", "--weights", str(micro_file), "--durations", "1,2",
                        "--repetitions", "1", "--plot", str(png))
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == ",".join(bench.TTFT_HEADER) and len(lines) == 3
    assert png.exists()
    assert _run(capsys, "bench-ttft", "--weights", str(micro_file), "--durations", "0.5")[0] == 2


def test_bench_latency(capsys, micro_file):
    code, out, _ = _run(capsys, "bench-latency", "--synthetic", "1", "--weights", str(micro_file),
                        "--max-tokens", "3")
    assert code == 0
    doc = json.loads(out)
    assert doc["segments"] == 1 and doc["latency_ms"] > 0 and doc["compute_load_pct"] > 0


def test_bench_latency_silence_exit_3(capsys, micro_file, tmp_path):
    wav = tmp_path / "quiet.wav"
    write_wav(wav, np.zeros(16000, np.float32))
    assert _run(capsys, "bench-latency", "--audio", str(wav), "--weights", str(micro_file))[0] == 3


def test_threads_env(capsys, monkeypatch):
    monkeypatch.setenv("MSV2_THREADS", "1")
    assert _run(capsys, "param-count", "tiny")[0] == 0
    monkeypatch.setenv("MSV2_THREADS", "zero")
    code, _, err = _run(capsys, "param-count", "tiny")
    assert code == 2 and "MSV2_THREADS" in err


def test_module_entry_point():
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "slidingasr", "param-count", "tiny", "--format", "csv"],
                       capture_output=True, text=True, check=True)
    assert r.stdout.startswith("pre")
