"""Regenerate scenarios/golden/noisy_alarms.jsonl.

Each suite scenario is run with its ``noise`` block removed, so the default
sensor noise applies, and seed 42.  Alarm lines are tagged with the scenario
name.  ``--check`` compares against the committed file instead of writing.
"""

import argparse
import json
import sys
from pathlib import Path

from tana.pipeline import dumps, run_scenario
from tana.simulation import load_scenario

ROOT = Path(__file__).resolve().parents[1] / "scenarios"
GOLDEN = ROOT / "golden" / "noisy_alarms.jsonl"
SEED = 42


def golden_lines() -> list[str]:
    out = []
    for path in sorted((ROOT / "suite").glob("*.json")):
        doc = json.loads(path.read_text())
        doc.pop("noise", None)
        doc["seed"] = SEED
        scenario = load_scenario(doc)
        for alarm in run_scenario(scenario).alarms:
            out.append(dumps({"scenario": scenario.name, **alarm.to_json()}))
    return out


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--check", action="store_true")
    args = ap.parse_args()
    text = "".join(line + "\n" for line in golden_lines())
    if args.check:
        same = GOLDEN.exists() and GOLDEN.read_text() == text
        print("golden file matches" if same else "golden file differs", file=sys.stderr)
        return 0 if same else 1
    GOLDEN.parent.mkdir(parents=True, exist_ok=True)
    GOLDEN.write_text(text)
    print(f"wrote {len(text.splitlines())} alarm lines to {GOLDEN}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
