"""Command-line contract: exit codes, reports, transcript verification."""

from __future__ import annotations

import json
import signal
import socket
import subprocess
import sys
import time
from pathlib import Path

import httpx
import pytest
from click.testing import CliRunner
from conftest import REPO_ROOT

from forgeflow.cli import main
from forgeflow.scenario import load_scenario

runner = CliRunner()


@pytest.fixture(autouse=True)
def in_repo_root(monkeypatch) -> None:
    monkeypatch.chdir(REPO_ROOT)


def invoke(*args: str):
    return runner.invoke(main, list(args), catch_exceptions=False)


# ----------------------------------------------------------------------- run


def test_run_passing_scenario_exits_zero() -> None:
    result = invoke("run", "--scenario", "scenarios/textcls.yaml")
    assert result.exit_code == 0
    assert "PASS textcls: completed" in result.output


def test_run_writes_log_and_report(tmp_path) -> None:
    result = invoke("run", "--scenario", "scenarios/vg.yaml", "--out", str(tmp_path))
    assert result.exit_code == 0
    log = tmp_path / "vg.events.jsonl"
    report = json.loads((tmp_path / "vg.report.json").read_text(encoding="utf-8"))
    assert report["state"] == "completed"
    assert report["problems"] == []
    assert report["event_count"] == len(log.read_bytes().splitlines())


def test_run_mismatched_expectations_exit_one(tmp_path) -> None:
    source = (REPO_ROOT / "scenarios/textcls.yaml").read_text(encoding="utf-8")
    tampered = tmp_path / "tampered.yaml"
    tampered.write_text(source.replace("accuracy: 0.92", "accuracy: 0.99"), encoding="utf-8")
    result = invoke("run", "--scenario", str(tampered))
    assert result.exit_code == 1
    assert "FAIL textcls" in result.output
    assert "0.99" in result.output


def test_run_missing_scenario_exits_two() -> None:
    result = invoke("run", "--scenario", "scenarios/absent.yaml")
    assert result.exit_code == 2
    assert "error" in result.output


def test_run_wrong_transcript_is_a_fixture_error() -> None:
    result = invoke(
        "run",
        "--scenario", "scenarios/textcls.yaml",
        "--backend", "scripted:scenarios/scripts/vg.jsonl",
    )
    assert result.exit_code == 2
    assert "ScriptMismatch" in result.output


def test_run_record_backend_writes_a_transcript(tmp_path) -> None:
    out = tmp_path / "rerecorded.jsonl"
    result = invoke(
        "run", "--scenario", "scenarios/vg.yaml", "--backend", f"record:{out}"
    )
    assert result.exit_code == 0
    assert out.read_bytes() == (REPO_ROOT / "scenarios/scripts/vg.jsonl").read_bytes()


def test_run_unknown_backend_flag_is_a_usage_error() -> None:
    result = invoke("run", "--scenario", "scenarios/vg.yaml", "--backend", "psychic")
    assert result.exit_code == 2
    assert "unknown backend" in result.output


def test_run_loads_extra_tool_packs(tmp_path) -> None:
    # an extra pack with a fresh id loads cleanly alongside the scenario's own
    pack = {
        "tools": [
            {
                "tool_id": "spare_echo",
                "kind": "search",
                "exec": {"fixture": "echo", "config": {}},
                "timeout_ms": 1000,
                "input_schema": str(REPO_ROOT / "tools/schemas/any.json"),
                "output_schema": str(REPO_ROOT / "tools/schemas/any.json"),
            }
        ]
    }
    extra = tmp_path / "extra.json"
    extra.write_text(json.dumps(pack), encoding="utf-8")
    result = invoke("run", "--scenario", "scenarios/vg.yaml", "--tools", str(extra))
    assert result.exit_code == 0


def test_run_duplicate_tool_ids_across_packs_exit_two(tmp_path) -> None:
    result = invoke(
        "run", "--scenario", "scenarios/vg.yaml", "--tools", "tools/common.json"
    )
    assert result.exit_code == 2
    assert "DuplicateId" in result.output


# -------------------------------------------------------------------- replay


def make_log(tmp_path: Path, name: str = "vg") -> Path:
    result = invoke("run", "--scenario", f"scenarios/{name}.yaml", "--out", str(tmp_path))
    assert result.exit_code == 0
    return tmp_path / f"{name}.events.jsonl"


def test_replay_verifies_a_faithful_log(tmp_path) -> None:
    log = make_log(tmp_path)
    result = invoke("replay", "--scenario", "scenarios/vg.yaml", "--log", str(log))
    assert result.exit_code == 0
    assert "byte-identical" in result.output


def test_replay_locates_the_first_divergence(tmp_path) -> None:
    log = make_log(tmp_path)
    lines = log.read_bytes().splitlines(keepends=True)
    lines[3] = lines[3].replace(b'"timestamp"', b'"timestamp_"', 1)
    log.write_bytes(b"".join(lines))
    result = invoke("replay", "--scenario", "scenarios/vg.yaml", "--log", str(log))
    assert result.exit_code == 1
    assert "divergence at seq 3" in result.output


def test_replay_reports_truncation_as_divergence(tmp_path) -> None:
    log = make_log(tmp_path)
    lines = log.read_bytes().splitlines(keepends=True)
    log.write_bytes(b"".join(lines[:5]))
    result = invoke("replay", "--scenario", "scenarios/vg.yaml", "--log", str(log))
    assert result.exit_code == 1
    assert "log holds 5 events" in result.output


def test_replay_empty_log_is_trivially_verified(tmp_path) -> None:
    empty = tmp_path / "empty.jsonl"
    empty.write_text("", encoding="utf-8")
    result = invoke("replay", "--scenario", "scenarios/vg.yaml", "--log", str(empty))
    assert result.exit_code == 0
    assert "verified-empty" in result.output


def test_replay_missing_log_exits_two(tmp_path) -> None:
    result = invoke(
        "replay", "--scenario", "scenarios/vg.yaml", "--log", str(tmp_path / "nope.jsonl")
    )
    assert result.exit_code == 2


# --------------------------------------------------------------------- serve


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def wait_for_health(base: str, deadline: float = 15.0) -> None:
    start = time.monotonic()
    while time.monotonic() - start < deadline:
        try:
            if httpx.get(f"{base}/health", timeout=1.0).status_code == 200:
                return
        except httpx.HTTPError:
            time.sleep(0.1)
    raise AssertionError("service did not come up")


def test_serve_occupied_port_fails_loudly() -> None:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        sock.listen(1)
        port = sock.getsockname()[1]
        proc = subprocess.run(
            [sys.executable, "-m", "forgeflow.cli", "serve", "--port", str(port)],
            capture_output=True,
            text=True,
            timeout=30,
            cwd=REPO_ROOT,
        )
    assert proc.returncode != 0
    assert "address already in use" in (proc.stderr + proc.stdout).lower()


def test_serve_end_to_end_with_graceful_shutdown(tmp_path) -> None:
    port = free_port()
    base = f"http://127.0.0.1:{port}"
    proc = subprocess.Popen(
        [
            sys.executable, "-m", "forgeflow.cli", "serve",
            "--port", str(port), "--out", str(tmp_path / "logs"),
        ],
        cwd=REPO_ROOT,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
    )
    try:
        wait_for_health(base)
        created = httpx.post(
            f"{base}/v1/sessions", json={"scenario": "infeasible-vqa"}, timeout=5
        ).json()
        sid = created["session_id"]
        requirement = load_scenario(REPO_ROOT / "scenarios/infeasible-vqa.yaml").requirement

        # follow the stream live while the session advances
        with httpx.stream(
            "GET", f"{base}/v1/sessions/{sid}/events", timeout=10
        ) as stream:
            httpx.post(
                f"{base}/v1/sessions/{sid}/messages", json={"text": requirement}, timeout=10
            )
            approval_id = None
            for line in stream.iter_lines():
                if '"approval_requested"' in line:
                    approval_id = json.loads(line.partition("data: ")[2])["body"][
                        "approval_id"
                    ]
                    break
            assert approval_id is not None

        resolved = httpx.post(
            f"{base}/v1/sessions/{sid}/approvals/{approval_id}",
            json={"approved": False},
            timeout=10,
        ).json()
        assert resolved["state"] == "cannot_fulfill"
    finally:
        proc.send_signal(signal.SIGTERM)
        try:
            proc.wait(timeout=15)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait(timeout=5)

    # the shutdown hook left a parseable, dense, terminal-capped log behind
    dump = tmp_path / "logs" / f"{sid}.events.jsonl"
    events = [json.loads(line) for line in dump.read_text(encoding="utf-8").splitlines()]
    assert [e["seq"] for e in events] == list(range(len(events)))
    assert events[-1]["kind"] == "terminal"
    assert events[-1]["body"]["outcome"] == "cannot_fulfill"


def test_module_entry_point_prints_version() -> None:
    proc = subprocess.run(
        [sys.executable, "-m", "forgeflow.cli", "--version"],
        capture_output=True,
        text=True,
        timeout=30,
        cwd=REPO_ROOT,
    )
    assert proc.returncode == 0
    assert "forgeflow" in proc.stdout
