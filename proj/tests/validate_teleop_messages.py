"""Checks captured websocket frames against the shipped schemas."""
import json
import sys
from pathlib import Path

import jsonschema


def main(schema_dir: Path, capture: Path) -> int:
    outbound = json.loads((schema_dir / "teleop_outbound.schema.json").read_text())
    inbound = json.loads((schema_dir / "teleop_inbound.schema.json").read_text())
    jsonschema.Draft202012Validator.check_schema(outbound)
    jsonschema.Draft202012Validator.check_schema(inbound)
    out_v = jsonschema.Draft202012Validator(outbound)
    in_v = jsonschema.Draft202012Validator(inbound)

    lines = [l for l in capture.read_text().splitlines() if l.strip()]
    if not lines:
        print("no captured messages")
        return 1
    bad = 0
    seen = set()
    for n, line in enumerate(lines, 1):
        msg = json.loads(line)
        seen.add(msg.get("type"))
        errors = list(out_v.iter_errors(msg))
        if errors:
            bad += 1
            if bad <= 5:
                print(f"message {n}: {errors[0].message}")
    missing = {"tick", "plan", "stats", "footholds", "event", "error"} - seen
    if missing:
        print("never saw:", sorted(missing))
    print(f"{len(lines)} outbound messages, {bad} invalid")

    good_in = [
        {"type": "set_velocity", "velocity": [0.3, 0.0]},
        {"type": "set_yaw_rate", "yaw_rate": 0.1},
        {"type": "pause"}, {"type": "resume"}, {"type": "reset"},
        {"type": "set_terrain", "name": "stairs"},
    ]
    bad_in = [{"type": "set_velocity", "velocity": [1]}, {"type": "fly"}, {"velocity": [0, 0]}]
    in_ok = all(in_v.is_valid(m) for m in good_in) and not any(in_v.is_valid(m) for m in bad_in)
    if not in_ok:
        print("inbound schema disagrees with the server's message set")
    return 0 if bad == 0 and not missing and in_ok else 1


if __name__ == "__main__":
    sys.exit(main(Path(sys.argv[1]), Path(sys.argv[2])))
