"""CLI subcommands: exit codes, artifacts, and the long-running service."""

from __future__ import annotations

import json
import signal
import socket
import subprocess
import sys
import time
import urllib.request
from pathlib import Path

import pytest

from qnetsim.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def http_get(url: str, token: str = "operator-token", timeout: float = 2.0):
    req = urllib.request.Request(url, headers={"Authorization": f"Bearer {token}"})
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return json.loads(resp.read())


def http_post(url: str, body: dict, token: str = "operator-token"):
    req = urllib.request.Request(
        url, data=json.dumps(body).encode(), method="POST",
        headers={"Authorization": f"Bearer {token}", "Content-Type": "application/json"})
    with urllib.request.urlopen(req, timeout=5.0) as resp:
        return json.loads(resp.read())


class TestValidate:
    def test_shipped_topology_is_valid(self, capsys):
        assert main(["validate", str(CONFIGS / "topology-metro4.yaml")]) == 0
        assert "13 nodes" in capsys.readouterr().out

    def test_mangled_field_nonzero_with_diagnostic(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text((CONFIGS / "topology-metro4.yaml").read_text()
                       .replace("length_km", "lenght_km"))
        assert main(["validate", str(bad)]) == 1
        assert "lenght_km" in capsys.readouterr().err

    def test_diagnostic_is_line_anchored(self, tmp_path, capsys):
        text = (CONFIGS / "topology-metro4.yaml").read_text()
        bad_text = text.replace("b: {node: q-fnal-1, port: fib}",
                                "b: {node: ghost, port: fib}")
        bad = tmp_path / "bad.yaml"
        bad.write_text(bad_text)
        assert main(["validate", str(bad)]) == 1
        err = capsys.readouterr().err
        expected_line = next(i for i, l in enumerate(bad_text.splitlines(), start=1)
                             if "node: ghost" in l)
        assert f"bad.yaml:{expected_line}:" in err

    def test_missing_file_distinct_io_exit(self, capsys):
        assert main(["validate", "/no/such/file.yaml"]) == 3


class TestRun:
    def test_coexist_sweep_series_car_monotone(self, tmp_path, capsys):
        code = main(["run", str(CONFIGS / "scenario-coexist-sweep.yaml"),
                     "--out", str(tmp_path)])
        assert code == 0
        lines = (tmp_path / "series.csv").read_text().strip().splitlines()
        header = lines[0].split(",")
        car_col = header.index("car")
        cars = [float(row.split(",")[car_col]) for row in lines[1:]]
        assert len(cars) >= 10
        assert all(a > b for a, b in zip(cars, cars[1:]))

    def test_teleport_preset_fidelity_above_ninety(self, tmp_path, capsys):
        code = main(["run", str(CONFIGS / "scenario-teleport.yaml"),
                     "--out", str(tmp_path)])
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["summary"]["teleport"]["fidelity_avg"] > 0.90
        out = capsys.readouterr().out
        assert "teleport estimate" in out

    def test_repeated_seed_identical_outputs(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["run", str(CONFIGS / "scenario-basic.yaml"), "--seed", "5",
              "--out", str(out1)])
        main(["run", str(CONFIGS / "scenario-basic.yaml"), "--seed", "5",
              "--out", str(out2)])
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()
        assert (out1 / "series.csv").read_bytes() == (out2 / "series.csv").read_bytes()

    def test_missing_scenario_io_exit(self):
        assert main(["run", "/no/such/scenario.yaml"]) == 3

    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["run", "x", "--frobnicate"])
        assert exc.value.code == 2


class TestReport:
    def test_summarizes_saved_report(self, tmp_path, capsys):
        main(["run", str(CONFIGS / "scenario-basic.yaml"), "--out", str(tmp_path)])
        capsys.readouterr()
        assert main(["report", str(tmp_path / "report.json")]) == 0
        out = capsys.readouterr().out
        assert "req-basic: Completed" in out

    def test_series_extraction_round_trips(self, tmp_path, capsys):
        main(["run", str(CONFIGS / "scenario-basic.yaml"), "--out", str(tmp_path)])
        extracted = tmp_path / "extracted.csv"
        assert main(["report", str(tmp_path / "report.json"),
                     "--series", str(extracted)]) == 0
        direct = (tmp_path / "series.csv").read_text()
        assert extracted.read_text().splitlines()[0] == direct.splitlines()[0]


def serve_command(port: int, db: Path, pace: float = 0.0) -> list[str]:
    return [sys.executable, "-m", "qnetsim.cli", "serve",
            str(CONFIGS / "topology-metro4.yaml"),
            "--tokens", str(CONFIGS / "tokens.yaml"),
            "--addr", f"127.0.0.1:{port}", "--db", str(db),
            "--profile", "qlan2_coexist", "--pace", str(pace)]


def wait_healthy(port: int, timeout: float = 15.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        try:
            with urllib.request.urlopen(f"http://127.0.0.1:{port}/v1/healthz",
                                        timeout=1.0) as resp:
                if resp.status == 200:
                    return
        except OSError:
            time.sleep(0.1)
    raise TimeoutError("service never became healthy")


@pytest.mark.slow
class TestServe:
    def test_start_and_health_probe(self, tmp_path):
        port = free_port()
        proc = subprocess.Popen(serve_command(port, tmp_path / "s.db"),
                                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        try:
            wait_healthy(port)
            topo = http_get(f"http://127.0.0.1:{port}/v1/topology")
            assert topo["version"] >= 1
        finally:
            proc.send_signal(signal.SIGINT)
            proc.wait(timeout=10)

    def test_port_in_use_fails_with_diagnostic(self, tmp_path, capsys):
        with socket.socket() as blocker:
            blocker.bind(("127.0.0.1", 0))
            blocker.listen(1)
            port = blocker.getsockname()[1]
            code = main(["serve", str(CONFIGS / "topology-metro4.yaml"),
                         "--tokens", str(CONFIGS / "tokens.yaml"),
                         "--addr", f"127.0.0.1:{port}",
                         "--db", str(tmp_path / "p.db")])
        assert code == 1

    def test_bad_token_file_refused(self, tmp_path, capsys):
        bad = tmp_path / "tokens.yaml"
        bad.write_text("tokens:\n  t: {subject: x, scopes: [bogus]}\n")
        code = main(["serve", str(CONFIGS / "topology-metro4.yaml"),
                     "--tokens", str(bad), "--db", str(tmp_path / "x.db")])
        assert code == 1
        assert "startup refused" in capsys.readouterr().err

    def test_kill_mid_request_resumes_as_failed(self, tmp_path):
        port = free_port()
        db = tmp_path / "crash.db"
        proc = subprocess.Popen(serve_command(port, db, pace=0.5),
                                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        try:
            wait_healthy(port)
            rid = http_post(f"http://127.0.0.1:{port}/v1/requests",
                            {"qnode_a": "q-fnal-1", "qnode_b": "q-fnal-2",
                             "rate": 5, "duration": 120})["request_id"]
            time.sleep(1.0)  # let it reach a live state, then die hard
        finally:
            proc.kill()
            proc.wait(timeout=10)

        port2 = free_port()
        proc2 = subprocess.Popen(serve_command(port2, db),
                                 stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        try:
            wait_healthy(port2)
            doc = http_get(f"http://127.0.0.1:{port2}/v1/requests/{rid}")
            assert doc["state"] == "Failed"
            assert doc["failure_reason"] == "interrupted"
        finally:
            proc2.send_signal(signal.SIGINT)
            proc2.wait(timeout=10)
