"""Inference-time memory frame selection and the embedding cache.

Frame indices here are 1-based: frame 1 is the annotated first frame and
frame ``t`` is the one being localized.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Any, Iterable

from .tensor import InvalidArgumentError

GROUND_TRUTH = "ground-truth"
PREDICTED = "predicted"


@dataclass(frozen=True)
class SamplerConfig:
    N: int = 6
    delta: float = 0.5
    literal: bool = False  # index the segments i = 1..N-2 exactly as printed, then clamp

    def __post_init__(self):
        if self.N < 2:
            raise InvalidArgumentError(f"memory size N must be >= 2, got {self.N}")
        if not 0 <= self.delta < 1:
            raise InvalidArgumentError(f"segment offset must lie in [0, 1), got {self.delta}")


def select_memory_indices(t: int, cfg: SamplerConfig | None = None) -> list[int]:
    """Memory frames for frame ``t``: first, previous, and one per segment in between.

    For ``t <= N`` every earlier frame is used. Otherwise the history
    ``[1, t-1]`` is split into ``N-2`` segments of length
    ``L = (t-1) // (N-2)`` and frame ``floor(L * (i - 1 + delta))`` is taken
    from segment ``i``; results are clamped to ``[1, t-1]`` and merged with
    ``{1, t-1}``. The ``literal`` mode uses ``floor(L * (i + delta))``, which
    overshoots ``t-1`` for the last segments before clamping.
    """
    cfg = cfg or SamplerConfig()
    if t < 2:
        raise InvalidArgumentError(f"frame index t must be >= 2, got {t}")
    if t <= cfg.N:
        return list(range(1, t))
    chosen = {1, t - 1}
    segments = cfg.N - 2
    if segments:
        length = (t - 1) // segments
        shift = 0 if cfg.literal else -1
        for i in range(1, segments + 1):
            tau = int(length * (i + shift + cfg.delta))
            chosen.add(min(max(tau, 1), t - 1))
    return sorted(chosen)


class MemoryBank:
    """Cache of memory embeddings keyed by 1-based frame index.

    Every new frame is stored; once more than ``cache_cap`` entries exist the
    least-recently-selected one is dropped. Frame 1 is selected on every step
    and therefore never evicted. A cache miss returns ``None`` and the caller
    re-embeds.
    """

    def __init__(self, capacity: int = 6, cache_cap: int = 64):
        if cache_cap < 2:
            raise InvalidArgumentError(f"cache_cap must be >= 2, got {cache_cap}")
        self.capacity = capacity
        self.cache_cap = cache_cap
        self._entries: OrderedDict[int, tuple[Any, str]] = OrderedDict()
        self.misses = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, frame_index: int) -> bool:
        return frame_index in self._entries

    @property
    def frame_indices(self) -> list[int]:
        return sorted(self._entries)

    def entries(self) -> list[tuple[Any, int, str]]:
        return [(self._entries[i][0], i, self._entries[i][1]) for i in self.frame_indices]

    def add(self, frame_index: int, feature, source: str = PREDICTED) -> None:
        self._entries[frame_index] = (feature, source)
        self._entries.move_to_end(frame_index)
        self._evict()

    def touch(self, indices: Iterable[int]) -> None:
        for i in indices:
            if i in self._entries:
                self._entries.move_to_end(i)

    def get(self, frame_index: int):
        entry = self._entries.get(frame_index)
        if entry is None:
            self.misses += 1
            return None
        return entry[0]

    def _evict(self) -> None:
        while len(self._entries) > self.cache_cap:
            victim = next(i for i in self._entries if i != 1)
            del self._entries[victim]


def update_bank(bank: MemoryBank, new_feature, t: int, cfg: SamplerConfig | None = None) -> list[int]:
    """Store frame ``t-1``'s embedding and mark the selection for frame ``t`` as used.

    Returns the selection so callers can fetch (or rebuild) the entries.
    """
    source = GROUND_TRUTH if t - 1 == 1 else PREDICTED
    bank.add(t - 1, new_feature, source)
    selection = select_memory_indices(t, cfg)
    bank.touch(selection)
    return selection
