"""The memory read: every query pixel attends over every memory pixel.

Shows the three properties the head relies on: weight columns sum to one,
shuffling memory rows changes nothing, and a memory row that dominates the
logits is copied through exactly.

    python demos/02_memory_read.py
"""

import numpy as np

from memtrack.features import FeatureMap
from memtrack.reader import read, similarity, stack_memory
from memtrack.tensor import Tensor, precision

rng = np.random.default_rng(1)
C, H, W, T = 8, 4, 4, 3

with precision(np.float64):
    frames = [FeatureMap(Tensor(rng.standard_normal((C, H, W))), source_frame_index=i + 1) for i in range(T)]
    query = FeatureMap(Tensor(rng.standard_normal((C, H, W))))
    memory = stack_memory(frames)
    weights = similarity(memory, query).data
    print("weights", weights.shape, "column sums within", np.abs(weights.sum(axis=0) - 1).max())

    out = read(memory, query).data.data
    perm = rng.permutation(T * H * W)
    shuffled = stack_memory(frames)
    shuffled.data = Tensor(memory.data.data[perm])
    moved = np.abs(read(shuffled, query).data.data - out).max()
    print("query half passes through:", np.array_equal(out[:C], query.data.data))
    print("row shuffle changes the readout by", moved)

    # a memory row pointing along a unit query, with a logit margin far past
    # the softmax temperature, takes all of that query pixel's weight
    q = rng.standard_normal(C)
    q /= np.linalg.norm(q)
    rows = rng.standard_normal((T * H * W, C)) * 0.1
    rows[5] = q * 40 * np.sqrt(C)
    single = FeatureMap(Tensor(rows.T.reshape(C, T * H, W)))
    readout = read(stack_memory([single]), FeatureMap(Tensor(q.reshape(C, 1, 1)))).data.data[C:, 0, 0]
    print("dominant row recovered within", np.abs(readout - rows[5]).max())
