"""Train a small tracker for a few minutes and follow targets with it.

Trains on a mixed synthetic suite at a 129 px search patch, then tracks a
handful of fresh occlusion sequences with one memory frame and with six,
printing average overlap for each.

    python demos/05_train_and_track.py [steps]
"""

import sys
import time

from memtrack.experiments import desk_model_config, evaluate_suite, make_suite, train_desk_model
from memtrack.tracker import TrackerConfig
from memtrack.train import TrainConfig

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
start = time.perf_counter()
model_cfg = desk_model_config(patch_size=129)
train_cfg = TrainConfig(epochs=1, steps_per_epoch=steps, batch_size=4, warmup_steps=min(50, steps // 4), log_every=50)
model, history = train_desk_model(model_cfg, train_cfg, progress=lambda r: print(f"step {r['step']:5d} loss {r['loss']:.3f}"))
print(f"trained {steps} steps in {time.perf_counter() - start:.0f}s")

suite = make_suite("occlusion", 5, seed=1, length=60)
for n in (1, 6):
    ev = evaluate_suite(model, suite, TrackerConfig(memory_size=n))
    agg = ev["aggregate"]
    print(f"N={n}: AO {agg['AO']:.3f}  SR@0.5 {agg['SR@0.5']:.3f}  median frame {1000 * ev['median_frame_time']:.1f} ms")
