"""Online tracking loop.

Frame 1 is initialized from its annotation. For every later frame ``t`` the
session picks memory frames, embeds any that are not cached (label maps come
from the annotation for frame 1 and from the tracker's own boxes otherwise),
crops a search patch around the previous box, reads the memory and decodes
the head outputs.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .boxes import BBox
from .data import CONTEXT, SequenceRecord, crop_patch, make_label_map
from .head import DecodeConfig, cosine_window, decode
from .memory import GROUND_TRUTH, PREDICTED, MemoryBank, SamplerConfig, select_memory_indices
from .model import TrackerNet
from .reader import read_blocked
from .tensor import Tensor, no_grad


@dataclass
class TrackerConfig:
    memory_size: int | None = 6  # None: every past frame; 1: first frame only
    delta: float = 0.5
    literal_sampling: bool = False
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    context: float = CONTEXT
    cache_cap: int = 64
    min_size: float = 4.0
    tile: int = 512
    use_label_map: bool = True  # False feeds all-zero label maps, which silences g

    def selector(self) -> Callable[[int], list[int]]:
        n = self.memory_size
        if n is None:
            return lambda t: list(range(1, t))
        if n == 1:
            return lambda t: [1]
        cfg = SamplerConfig(n, self.delta, self.literal_sampling)
        return lambda t: select_memory_indices(t, cfg)


class TrackerSession:
    def __init__(
        self,
        model: TrackerNet,
        cfg: TrackerConfig | None = None,
        selector: Callable[[int], list[int]] | None = None,
        trace: list | None = None,
    ):
        self.model = model
        self.cfg = cfg or TrackerConfig()
        self.selector = selector or self.cfg.selector()
        self.trace = trace
        self.bank = MemoryBank(self.cfg.memory_size or 0, self.cfg.cache_cap)
        self.window = cosine_window(model.grid.size)
        self.frames: list[np.ndarray] = []
        self.boxes: list[BBox] = []
        self.t = 0
        self.timings: list[dict] = []

    @property
    def previous_box(self) -> BBox:
        return self.boxes[-1]

    def initialize(self, frame: np.ndarray, box: BBox) -> None:
        self.frames = [frame]
        self.boxes = [box]
        self.t = 1
        self.bank.add(1, self._embed_memory(1), GROUND_TRUTH)

    def _embed_memory(self, index: int) -> np.ndarray:
        frame, box = self.frames[index - 1], self.boxes[index - 1]
        patch, tf = crop_patch(frame, box, self.model.grid.image_size, self.cfg.context)
        label = make_label_map(box, tf)
        if not self.cfg.use_label_map:
            label = np.zeros_like(label)
        with no_grad():
            fm = self.model.embed_memory(patch, label, frame_index=index, geometry=tf)
        c, h, w = fm.shape
        return fm.data.data.reshape(c, h * w).T.copy()

    def _memory(self, selection: Sequence[int]) -> np.ndarray:
        self.bank.touch(selection)
        rows = []
        for i in selection:
            feat = self.bank.get(i)
            if feat is None:
                feat = self._embed_memory(i)
                self.bank.add(i, feat, GROUND_TRUTH if i == 1 else PREDICTED)
            rows.append(feat)
        return rows[0] if len(rows) == 1 else np.concatenate(rows, axis=0)

    def track(self, frame: np.ndarray) -> tuple[BBox, float]:
        t = self.t + 1
        start = time.perf_counter()
        selection = self.selector(t)
        if self.trace is not None:
            self.trace.append(f"{t}: {list(selection)}")
        self.frames.append(frame)
        memory = self._memory(selection)
        t_mem = time.perf_counter()

        prev = self.previous_box
        patch, tf = crop_patch(frame, prev, self.model.grid.image_size, self.cfg.context)
        with no_grad():
            query = self.model.embed_query(patch, frame_index=t, geometry=tf).data.data
            t_q = time.perf_counter()
            synth = read_blocked(memory, query, self.cfg.tile)
            t_read = time.perf_counter()
            outputs = self.model.head(Tensor(synth, dtype=synth.dtype))
        box_p, score = decode(outputs, self.model.grid, tf.box_to_patch(prev), self.window, self.cfg.decode)
        box = self._restrict(tf.box_to_image(box_p) if score > 0 else prev, frame.shape[1:])
        self.boxes.append(box)
        self.t = t
        end = time.perf_counter()
        self.timings.append(
            {"t": t, "memory": t_mem - start, "query": t_q - t_mem, "read": t_read - t_q, "total": end - start}
        )
        return box, score

    def _restrict(self, box: BBox, shape) -> BBox:
        h_img, w_img = shape
        lo = self.cfg.min_size
        w = min(max(box.w, lo), w_img)
        h = min(max(box.h, lo), h_img)
        cx = min(max(box.cx, 0.0), float(w_img))
        cy = min(max(box.cy, 0.0), float(h_img))
        return BBox.from_center(cx, cy, w, h)


def track_sequence(
    model: TrackerNet,
    seq: SequenceRecord,
    cfg: TrackerConfig | None = None,
    selector: Callable[[int], list[int]] | None = None,
    trace: list | None = None,
    session_out: list | None = None,
) -> list[tuple[BBox, float]]:
    """Boxes and scores for every frame; frame 1 is the annotation with score 1."""
    session = TrackerSession(model, cfg, selector, trace)
    session.initialize(seq.frames[0], seq.gt_boxes[0])
    results = [(seq.gt_boxes[0], 1.0)]
    for frame in seq.frames[1:]:
        results.append(session.track(frame))
    if session_out is not None:
        session_out.append(session)
    return results


def write_results(path, results: Sequence[tuple[BBox, float]]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["frame_idx", "x", "y", "w", "h", "score"])
        for i, (box, score) in enumerate(results, start=1):
            out.writerow([i, *(repr(float(v)) for v in box.as_tuple()), repr(float(score))])


def read_results(path) -> list[tuple[BBox, float]]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            box = BBox(float(row["x"]), float(row["y"]), float(row["w"]), float(row["h"]))
            rows.append((int(row["frame_idx"]), box, float(row["score"])))
    rows.sort(key=lambda r: r[0])
    return [(b, s) for _, b, s in rows]
