"""Regenerate the committed scenario gateway transcripts.

Each scenario is run once against its oracle replies with a recording
backend in front, producing the digest-keyed script that replays use.
Rerunning is idempotent: same prompts, same digests, same bytes.
"""

from __future__ import annotations

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from forgeflow.scenario import load_scenario, record_script  # noqa: E402

SCENARIOS = ("textcls", "vg", "refuse-ethics", "infeasible-vqa")

if __name__ == "__main__":
    for name in SCENARIOS:
        scenario = load_scenario(ROOT / "scenarios" / f"{name}.yaml")
        out = record_script(scenario, ROOT)
        lines = out.read_text(encoding="utf-8").count("\n")
        print(f"{name}: {lines} gateway calls -> {out.relative_to(ROOT)}")
