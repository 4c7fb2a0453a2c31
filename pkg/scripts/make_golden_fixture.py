#!/usr/bin/env python3
"""Regenerate the golden regression fixture under tests/data/golden/.

The fixture is a small deterministic bundle plus the loss report frozen at
generation time. The regression test reads both back and insists the loss
is bit-identical, so any change to mask selection, attention, or reduction
order shows up as a diff here before it shows up in a training run.

Run from the repo root:  python3 scripts/make_golden_fixture.py
"""

import json
import sys
from pathlib import Path

from pgdistill import DistillConfig, SynthSpec, generate_bundle, total_loss, write_bundle

GOLDEN = Path(__file__).resolve().parent.parent / "tests" / "data" / "golden"
SPEC = SynthSpec(
    seed=20260819,
    image_width=96,
    image_height=96,
    num_objects=2,
    quality_concentration=6.0,
)


def main():
    bundle = generate_bundle(SPEC)
    write_bundle(GOLDEN / "bundle", bundle)
    report = total_loss(bundle, DistillConfig())
    (GOLDEN / "expected_loss.json").write_text(report.to_json())
    (GOLDEN / "spec.json").write_text(json.dumps(SPEC.to_dict(), indent=2) + "\n")
    print(f"fixture written to {GOLDEN}")
    print(report.to_json())
    return 0


if __name__ == "__main__":
    sys.exit(main())
