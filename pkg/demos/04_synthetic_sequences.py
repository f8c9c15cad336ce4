"""Synthetic tracking sequences with known ground truth.

Draws one sequence from each suite, prints its event log, and writes the
first and middle frames as PPM images next to a boxes file.

    python demos/04_synthetic_sequences.py [out_dir]
"""

import sys
from pathlib import Path

from memtrack.data import save_sequence
from memtrack.experiments import make_suite

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_sequences")
for kind in ("occlusion", "clutter", "static"):
    seq = make_suite(kind, 1, seed=0, length=40)[0]
    b = seq.gt_boxes[0]
    print(seq.name, "frames:", len(seq), f"first box: x={b.x:.1f} y={b.y:.1f} w={b.w:.1f} h={b.h:.1f}")
    for ev in seq.event_log["events"]:
        print("   ", ev)
    path = save_sequence(seq, out / seq.name)
    print("    written to", path)
