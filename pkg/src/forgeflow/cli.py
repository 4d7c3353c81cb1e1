"""Headless entry points: run scenarios, verify transcripts, serve the API.

Exit codes are a contract: 0 means the scenario met its expectations
(or the transcript verified), 1 means a mismatch, 2 means the fixtures
themselves were unusable. Scripts may branch on them.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__
from .gateway import Backend, Script, ScriptedBackend
from .scenario import (
    OracleBackend,
    Scenario,
    check_expectations,
    load_scenario,
    run_scenario,
)

EXIT_PASS = 0
EXIT_MISMATCH = 1
EXIT_FIXTURE = 2


def _pick_backend(
    spec: str | None, scenario: Scenario, root: Path
) -> tuple[Backend | None, Path | None]:
    """Map a --backend flag onto (backend, record_to).

    None keeps the scenario's own script; `record:` replays the scenario's
    oracle replies through a recorder, which is how transcripts are
    (re)generated without network access.
    """
    if spec is None or spec == "scripted":
        return None, None
    if spec == "live":
        from .gateway import LiveBackend

        return LiveBackend.from_env(), None
    if spec.startswith("scripted:"):
        return ScriptedBackend(Script.load(root / spec.removeprefix("scripted:"))), None
    if spec.startswith("record:"):
        return OracleBackend(scenario), root / spec.removeprefix("record:")
    raise click.UsageError(
        f"unknown backend {spec!r}: use live, scripted:<path>, or record:<path>"
    )


@click.group()
@click.version_option(version=__version__, prog_name="forgeflow")
def main() -> None:
    """Deterministic kernel for a four-agent model-development crew."""


@main.command()
@click.option(
    "--scenario", "scenario_path", required=True, type=click.Path(path_type=Path),
    help="Scenario YAML to execute.",
)
@click.option(
    "--backend", "backend_spec", default=None,
    help="live | scripted:<transcript> | record:<transcript>; default: the scenario's script.",
)
@click.option(
    "--tools", "extra_packs", multiple=True, type=click.Path(path_type=Path),
    help="Extra tool packs to load on top of the scenario's own.",
)
@click.option(
    "--out", "out_dir", default=None, type=click.Path(path_type=Path),
    help="Directory for the event log and the expectation report.",
)
def run(
    scenario_path: Path,
    backend_spec: str | None,
    extra_packs: tuple[Path, ...],
    out_dir: Path | None,
) -> None:
    """Run one scenario to its terminal and grade it against expectations."""
    root = Path.cwd()
    try:
        scenario = load_scenario(scenario_path)
        if extra_packs:
            scenario.config.setdefault("packs", []).extend(str(p) for p in extra_packs)
        backend, record_to = _pick_backend(backend_spec, scenario, root)
        session = run_scenario(
            scenario, root, backend=backend, record_to=record_to
        )
    except click.UsageError:
        raise
    except Exception as exc:
        click.echo(f"error ({type(exc).__name__}): {exc}", err=True)
        sys.exit(EXIT_FIXTURE)

    problems = check_expectations(session, scenario.expect)
    report = {
        "scenario": scenario.name,
        "state": session.state.value,
        "event_count": len(session.events),
        "problems": problems,
    }
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{scenario.name}.events.jsonl").write_bytes(session.events.to_jsonl())
        (out_dir / f"{scenario.name}.report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    if problems:
        click.echo(f"FAIL {scenario.name}: {session.state.value}")
        for problem in problems:
            click.echo(f"  - {problem}")
        sys.exit(EXIT_MISMATCH)
    click.echo(
        f"PASS {scenario.name}: {session.state.value}, {len(session.events)} events"
    )
    sys.exit(EXIT_PASS)


@main.command()
@click.option(
    "--scenario", "scenario_path", required=True, type=click.Path(path_type=Path),
    help="Scenario YAML the log claims to come from.",
)
@click.option(
    "--log", "log_path", required=True, type=click.Path(path_type=Path),
    help="Event log (JSON lines) to verify.",
)
def replay(scenario_path: Path, log_path: Path) -> None:
    """Re-derive a scenario's event log and compare it byte-for-byte."""
    root = Path.cwd()
    try:
        recorded = log_path.read_bytes()
        scenario = load_scenario(scenario_path)
        if recorded.strip() == b"":
            click.echo("verified-empty: log holds no events")
            sys.exit(EXIT_PASS)
        session = run_scenario(scenario, root)
    except Exception as exc:
        click.echo(f"error ({type(exc).__name__}): {exc}", err=True)
        sys.exit(EXIT_FIXTURE)

    derived = session.events.to_jsonl()
    if recorded == derived:
        click.echo(f"verified: {len(session.events)} events, byte-identical")
        sys.exit(EXIT_PASS)
    old_lines = recorded.splitlines()
    new_lines = derived.splitlines()
    for seq, (old, new) in enumerate(zip(old_lines, new_lines)):
        if old != new:
            click.echo(f"divergence at seq {seq}:")
            click.echo(f"  log:      {old.decode('utf-8', 'replace')}")
            click.echo(f"  expected: {new.decode('utf-8', 'replace')}")
            sys.exit(EXIT_MISMATCH)
    click.echo(
        f"divergence at seq {min(len(old_lines), len(new_lines))}: "
        f"log holds {len(old_lines)} events, expected {len(new_lines)}"
    )
    sys.exit(EXIT_MISMATCH)


@main.command()
@click.option("--port", default=8731, show_default=True, help="TCP port to listen on.")
@click.option("--host", default="127.0.0.1", show_default=True, help="Bind address.")
@click.option(
    "--root", "root_dir", default=".", type=click.Path(path_type=Path), show_default=True,
    help="Fixture tree holding scenarios/, tools/, datasets/.",
)
@click.option(
    "--out", "out_dir", default=None, type=click.Path(path_type=Path),
    help="Directory where event logs are flushed on shutdown.",
)
def serve(port: int, host: str, root_dir: Path, out_dir: Path | None) -> None:
    """Serve the session API until interrupted."""
    import uvicorn

    from .service import create_app

    app = create_app(root_dir, out_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
