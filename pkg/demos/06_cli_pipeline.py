"""The command-line pipeline end to end: gen, train, track, eval.

Runs each subcommand in a scratch directory with a tiny model so the whole
thing finishes in well under a minute, then prints the report aggregate.

    python demos/06_cli_pipeline.py
"""

import json
import tempfile
from pathlib import Path

from memtrack.cli import main

work = Path(tempfile.mkdtemp(prefix="memtrack_demo_"))
(work / "suite.cfg").write_text("kind = clutter\ncount = 2\nlength = 20\n")
(work / "train.cfg").write_text(
    "patch_size = 65\nwidths = [8, 8, 16, 16]\nreduced_channels = 8\nhead_depth = 1\n"
    "epochs = 1\nsteps_per_epoch = 20\nbatch_size = 2\nwarmup_steps = 5\nseed = 0\n"
)

steps = [
    ["gen", "--spec", str(work / "suite.cfg"), "--seed", "3", "--out", str(work / "data")],
    ["train", "--config", str(work / "train.cfg"), "--data", str(work / "data"), "--out", str(work / "model.npz")],
    ["track", "--ckpt", str(work / "model.npz"), "--seq", str(work / "data"), "--out", str(work / "results")],
    ["eval", "--results", str(work / "results"), "--gt", str(work / "data"), "--out", str(work / "report.json")],
]
for argv in steps:
    print("memtrack", " ".join(argv))
    code = main(argv)
    assert code == 0, code

report = json.loads((work / "report.json").read_text())
print(json.dumps(report["aggregate"], indent=2))
print("files in", work)
