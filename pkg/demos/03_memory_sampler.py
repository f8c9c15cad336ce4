"""Which past frames feed the memory at frame t.

The first frame (ground truth) and the previous frame are always present;
the history in between is cut into N-2 segments and one frame is taken from
each. Early on, every earlier frame is used.

    python demos/03_memory_sampler.py
"""

from memtrack.memory import SamplerConfig, select_memory_indices

for t in (2, 4, 6, 7, 12, 50, 400):
    print(f"t={t:4d}  N=6  ->", select_memory_indices(t, SamplerConfig(N=6, delta=0.5)))

print()
for delta in (0.0, 0.5, 0.99):
    print(f"t=100 delta={delta:<4}  ->", select_memory_indices(100, SamplerConfig(N=6, delta=delta)))

# the selection can be shorter than N when two picks coincide
print()
print("t=8 N=6 delta=0 ->", select_memory_indices(8, SamplerConfig(N=6, delta=0.0)))
