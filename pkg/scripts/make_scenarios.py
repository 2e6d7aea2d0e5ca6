"""Write the bundled scenario files.

scenarios/suite/  six noiseless case-study scenarios (three falls, three music-only)
scenarios/fall1.json  the first fall scenario with default sensor noise
"""

import copy
import json
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1] / "scenarios"

BASE = {
    "name": "",
    "seed": 42,
    "duration_ticks": 6000,
    "tick_quantum_us": 1000,
    "floorplan": {
        "rooms": [
            {"id": "kitchen", "x_min": 0, "x_max": 4, "y_min": 0, "y_max": 3, "z_min": 0, "z_max": 3},
            {"id": "living", "x_min": 4, "x_max": 8, "y_min": 0, "y_max": 3, "z_min": 0, "z_max": 3},
            {"id": "hallway", "x_min": 0, "x_max": 8, "y_min": 3, "y_max": 4.5, "z_min": 0, "z_max": 3},
        ],
        "adjacency": [["kitchen", "living"], ["kitchen", "hallway"], ["living", "hallway"]],
    },
    "sensors": [
        {"sensor_id": "wrist-1", "kind": "accelerometer", "scale": 0.001, "native_unit": "g",
         "placement": {"entity": "resident-1", "attachment": "wrist"},
         "period_ticks": 10, "phase_ticks": 0, "min_period_ticks": 5, "max_period_ticks": 1000},
        {"sensor_id": "mic-array-1", "kind": "microphone-array", "scale": 0.01,
         "mic_positions": [[0.0, 0.0, 0.5], [0.0, 0.0, 1.0], [0.0, 0.0, 1.5]],
         "placement": {"xyz": [0.0, 0.0, 0.5]},
         "period_ticks": 10, "phase_ticks": 0, "min_period_ticks": 5, "max_period_ticks": 1000},
        {"sensor_id": "thermo-1", "kind": "thermometer", "scale": 0.01, "ambient_c": 21.5,
         "placement": {"xyz": [3.9, 2.9, 2.0]},
         "period_ticks": 1000, "phase_ticks": 0, "min_period_ticks": 100, "max_period_ticks": 60000},
    ],
    "events": [],
    "noise": {"accel_sigma_g": 0.0, "tdoa_jitter_us": 0.0},
}

FALLS = [
    (2000, [2.0, 1.0, 0.2], []),
    (2500, [1.2, 2.2, 0.1], []),
    (3000, [3.2, 0.6, 0.3], [{"kind": "footstep", "t_start_ticks": 1000,
                              "position": [2.5, 1.5, 0.0], "loudness_db": 45}]),
]
MUSIC = [
    (2000, [3.0, 2.0, 1.8], []),
    (1500, [1.5, 2.5, 1.8], [{"kind": "footstep", "t_start_ticks": 4000,
                              "position": [1.0, 1.0, 0.0], "loudness_db": 45}]),
    (2500, [3.5, 1.0, 1.8], []),
]


def suite() -> dict[str, dict]:
    out = {}
    for i, (t0, pos, extra) in enumerate(FALLS, 1):
        doc = copy.deepcopy(BASE)
        doc["name"] = f"fall{i}"
        doc["events"] = [{"kind": "fall", "t_start_ticks": t0, "position": pos,
                          "loudness_db": 85, "entity_id": "resident-1"}, *extra]
        out[doc["name"]] = doc
    for i, (t0, pos, extra) in enumerate(MUSIC, 1):
        doc = copy.deepcopy(BASE)
        doc["name"] = f"music{i}"
        doc["events"] = [{"kind": "music", "t_start_ticks": t0, "position": pos,
                          "loudness_db": 85, "duration_ms": 2000}, *extra]
        out[doc["name"]] = doc
    return out


def main() -> None:
    (ROOT / "suite").mkdir(parents=True, exist_ok=True)
    docs = suite()
    for name, doc in docs.items():
        (ROOT / "suite" / f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n")
    noisy = copy.deepcopy(docs["fall1"])
    del noisy["noise"]
    (ROOT / "fall1.json").write_text(json.dumps(noisy, indent=2) + "\n")


if __name__ == "__main__":
    main()
