"""Crop geometry, label maps, training-frame sampling and synthetic sequences."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .boxes import BBox
from .head import GridGeometry, Targets, encode_targets
from .tensor import InvalidArgumentError

PATCH_SIZE = 289
CONTEXT = 4.0
MAX_SHIFT = 0.2
SCALE_RANGE = 0.3


# ---------------------------------------------------------------------------
# crop geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CropTransform:
    """Square window of side ``side`` centered at ``(cx, cy)``, resampled to ``out_size``."""

    cx: float
    cy: float
    side: float
    out_size: int = PATCH_SIZE

    def __post_init__(self):
        if not self.side > 0:
            raise InvalidArgumentError(f"crop side must be positive, got {self.side}")

    @property
    def scale(self) -> float:
        return self.out_size / self.side

    def to_patch(self, x, y):
        s = self.scale
        return (np.asarray(x) - self.cx) * s + self.out_size / 2, (np.asarray(y) - self.cy) * s + self.out_size / 2

    def to_image(self, u, v):
        s = self.scale
        return (np.asarray(u) - self.out_size / 2) / s + self.cx, (np.asarray(v) - self.out_size / 2) / s + self.cy

    def box_to_patch(self, box: BBox) -> BBox:
        x, y = self.to_patch(box.x, box.y)
        return BBox(float(x), float(y), box.w * self.scale, box.h * self.scale)

    def box_to_image(self, box: BBox) -> BBox:
        x, y = self.to_image(box.x, box.y)
        return BBox(float(x), float(y), box.w / self.scale, box.h / self.scale)


@dataclass(frozen=True)
class AugmentParams:
    """Shift is a fraction of the crop side; ``scale`` multiplies the side."""

    shift_x: float = 0.0
    shift_y: float = 0.0
    scale: float = 1.0

    @classmethod
    def sample(cls, rng: np.random.Generator, max_shift: float = MAX_SHIFT, r: float = SCALE_RANGE) -> "AugmentParams":
        sx, sy = rng.uniform(-max_shift, max_shift, 2)
        # log-uniform so 1/(1+r) and 1+r are equally likely
        scale = math.exp(rng.uniform(-math.log1p(r), math.log1p(r)))
        return cls(float(sx), float(sy), scale)


def context_side(box: BBox, context: float = CONTEXT) -> float:
    """Crop side ``context * sqrt(w * h)``."""
    return context * math.sqrt(box.w * box.h)


def crop_patch(
    frame: np.ndarray,
    target: BBox,
    out_size: int = PATCH_SIZE,
    context: float = CONTEXT,
    augment: AugmentParams | None = None,
) -> tuple[np.ndarray, CropTransform]:
    """Bilinear crop of a 3xHxW frame around ``target``; outside area takes the channel mean."""
    side = context_side(target, context)
    cx, cy = target.cx, target.cy
    if augment is not None:
        side *= augment.scale
        cx += augment.shift_x * side
        cy += augment.shift_y * side
    tf = CropTransform(cx, cy, side, out_size)
    centers = np.arange(out_size) + 0.5
    xs, ys = tf.to_image(centers, centers)
    # map_coordinates indexes pixel centers at integer positions
    rows, cols = np.meshgrid(ys - 0.5, xs - 0.5, indexing="ij")
    coords = np.stack([rows, cols])
    patch = np.empty((frame.shape[0], out_size, out_size), dtype=np.float32)
    means = frame.reshape(frame.shape[0], -1).mean(axis=1)
    for c in range(frame.shape[0]):
        patch[c] = ndimage.map_coordinates(frame[c], coords, order=1, mode="constant", cval=float(means[c]))
    return patch, tf


class EmptyLabelMapWarning(UserWarning):
    pass


def make_label_map(box: BBox, transform: CropTransform) -> np.ndarray:
    """1 where a patch pixel's center maps inside ``box`` (half-open ``[x, x+w)``), else 0."""
    centers = np.arange(transform.out_size) + 0.5
    xs, ys = transform.to_image(centers, centers)
    inside_x = (xs >= box.x) & (xs < box.x1)
    inside_y = (ys >= box.y) & (ys < box.y1)
    m = (inside_y[:, None] & inside_x[None, :]).astype(np.float32)[None]
    if not m.any():
        warnings.warn(f"box {box} does not cover any patch pixel", EmptyLabelMapWarning, stacklevel=2)
    return m


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------


@dataclass
class SequenceRecord:
    frames: list  # 3 x H x W float32 in [0, 1], quantized to 1/255
    gt_boxes: list  # BBox per frame
    event_log: dict = field(default_factory=dict)
    name: str = "seq"

    def __post_init__(self):
        if len(self.frames) != len(self.gt_boxes):
            raise InvalidArgumentError(f"{len(self.frames)} frames but {len(self.gt_boxes)} boxes")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def image_size(self) -> tuple[int, int]:
        return self.frames[0].shape[1], self.frames[0].shape[2]


def sample_training_frames(seq, T: int, max_gap: int = 100, rng: np.random.Generator | None = None) -> list[int]:
    """T sorted 0-based indices with ``max - min <= max_gap``; the last is the query.

    A one-frame source yields T copies of index 0 (augmentation makes them differ).
    Sources shorter than T are sampled with replacement.
    """
    if T < 2:
        raise InvalidArgumentError(f"training needs T >= 2 frames, got {T}")
    n = seq if isinstance(seq, int) else len(seq)
    if n < 1:
        raise InvalidArgumentError("empty sequence")
    rng = rng if rng is not None else np.random.default_rng()
    if n == 1:
        return [0] * T
    lo = int(rng.integers(0, max(n - max_gap, 1)))
    hi = min(lo + max_gap, n - 1)
    pool = hi - lo + 1
    picks = rng.choice(pool, size=T, replace=pool < T) + lo
    return sorted(int(i) for i in picks)


@dataclass
class TrainingSample:
    memory_patches: list
    label_maps: list
    query_patch: np.ndarray
    query_box: BBox  # patch coordinates
    targets: Targets


def make_training_sample(
    seq: SequenceRecord,
    rng: np.random.Generator,
    grid: GridGeometry,
    T: int = 3,
    max_gap: int = 100,
    context: float = CONTEXT,
    augment: bool = True,
    max_shift: float = MAX_SHIFT,
) -> TrainingSample:
    """Crop T frames around their own ground truth, each with its own augmentation."""
    idx = sample_training_frames(seq, T, max_gap, rng)
    patches, maps = [], []
    query_box = None
    for k, i in enumerate(idx):
        aug = AugmentParams.sample(rng, max_shift) if augment else None
        box = seq.gt_boxes[i]
        patch, tf = crop_patch(seq.frames[i], box, grid.image_size, context, aug)
        if k < T - 1:
            patches.append(patch)
            maps.append(make_label_map(box, tf))
        else:
            query_patch = patch
            query_box = tf.box_to_patch(box)
    return TrainingSample(patches, maps, query_patch, query_box, encode_targets(query_box, grid))


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------


@dataclass
class SequenceSpec:
    """Recipe for one synthetic sequence.

    ``occluders`` holds ``(start, end, fraction)`` spans (0-based, end
    exclusive) during which a band covering ``fraction`` of the target's
    width is drawn over it. ``deformation`` is the amplitude of the log
    aspect-ratio oscillation; ``color_drift`` moves the target color towards a
    second random color by the last frame. ``clutter`` distractors wander
    independently; ``followers`` circle the target at one to two target
    sizes, so position alone cannot tell them apart from it.
    """

    length: int = 60
    image_size: tuple[int, int] = (128, 128)  # H, W
    target_size: tuple[float, float] = (20.0, 20.0)  # w, h
    shape: str = "rect"
    motion: str = "random_walk"
    velocity: tuple[float, float] = (1.0, 0.5)
    speed: float = 1.5
    start: tuple[float, float] | None = None
    occluders: list = field(default_factory=list)
    deformation: float = 0.0
    deformation_period: float = 40.0
    color_drift: float = 0.0
    clutter: int = 0
    followers: int = 0  # distractors that stay within about two target sizes of the target
    texture: float = 0.35
    noise: float = 0.02
    name: str = "seq"

    def validate(self) -> None:
        h, w = self.image_size
        tw, th = self.target_size
        grow = math.exp(self.deformation / 2)
        if tw * grow >= w or th * grow >= h:
            raise InvalidArgumentError(f"target {self.target_size} does not fit in image {self.image_size}")
        if self.length < 1:
            raise InvalidArgumentError("length must be >= 1")
        if self.clutter < 0 or self.followers < 0:
            raise InvalidArgumentError("distractor counts must be >= 0")
        if self.shape not in ("rect", "ellipse"):
            raise InvalidArgumentError(f"unknown shape {self.shape!r}")
        if self.motion not in ("linear", "random_walk", "static"):
            raise InvalidArgumentError(f"unknown motion {self.motion!r}")


@dataclass
class _Sprite:
    color0: np.ndarray
    color1: np.ndarray
    texture: np.ndarray  # 3 x 8 x 8 in [-1, 1]
    shape: str
    w: float
    h: float


def _sprite(rng, shape, w, h) -> _Sprite:
    return _Sprite(
        color0=rng.uniform(0.05, 0.95, 3),
        color1=rng.uniform(0.05, 0.95, 3),
        texture=rng.uniform(-1, 1, (3, 8, 8)),
        shape=shape,
        w=w,
        h=h,
    )


def _render_sprite(img, sprite: _Sprite, box: BBox, color, amp):
    """Paint ``sprite`` into ``img`` over ``box``; returns the H x W coverage mask."""
    H, W = img.shape[1:]
    x0, x1 = max(int(math.floor(box.x)), 0), min(int(math.ceil(box.x1)), W)
    y0, y1 = max(int(math.floor(box.y)), 0), min(int(math.ceil(box.y1)), H)
    mask = np.zeros((H, W), dtype=bool)
    if x0 >= x1 or y0 >= y1:
        return mask
    px = np.arange(x0, x1) + 0.5
    py = np.arange(y0, y1) + 0.5
    u = (px - box.x) / box.w
    v = (py - box.y) / box.h
    inside = ((u >= 0) & (u < 1))[None, :] & ((v >= 0) & (v < 1))[:, None]
    if sprite.shape == "ellipse":
        inside &= ((u[None, :] - 0.5) ** 2 + (v[:, None] - 0.5) ** 2) < 0.25
    tu = np.clip((u * 8).astype(int), 0, 7)
    tv = np.clip((v * 8).astype(int), 0, 7)
    tex = sprite.texture[:, tv[:, None], tu[None, :]]
    patch = np.clip(color[:, None, None] * (1 + amp * tex), 0, 1)
    region = img[:, y0:y1, x0:x1]
    region[:, inside] = patch[:, inside]
    mask[y0:y1, x0:x1] = inside
    return mask


def _random_walk(rng, n, start, speed, size, bounds, momentum=0.85):
    W, H = bounds
    w, h = size
    pos = np.array(start, dtype=np.float64)
    vel = rng.normal(0, speed, 2)
    out = []
    for _ in range(n):
        out.append(pos.copy())
        vel = momentum * vel + (1 - momentum) * rng.normal(0, speed * 2, 2)
        norm = np.hypot(*vel)
        if norm > 2 * speed:
            vel *= 2 * speed / norm
        pos = pos + vel
        for k, (lim, half) in enumerate(((W, w / 2 + 1), (H, h / 2 + 1))):
            if pos[k] < half:
                pos[k], vel[k] = 2 * half - pos[k], abs(vel[k])
            elif pos[k] > lim - half:
                pos[k], vel[k] = 2 * (lim - half) - pos[k], -abs(vel[k])
    return np.array(out)


def synth_sequence(spec: SequenceSpec, seed: int) -> SequenceRecord:
    """Render a sequence deterministically from ``(spec, seed)``."""
    spec.validate()
    rng = np.random.default_rng(seed)
    H, W = spec.image_size
    n = spec.length
    tw, th = spec.target_size
    bg = ndimage.gaussian_filter(rng.uniform(0, 1, (3, H, W)), sigma=(0, 5, 5))
    bg = 0.25 + 0.5 * (bg - bg.min()) / max(bg.max() - bg.min(), 1e-9)

    target = _sprite(rng, spec.shape, tw, th)
    phase = rng.uniform(0, 2 * math.pi)
    aspect = np.exp(spec.deformation * np.sin(2 * math.pi * np.arange(n) / spec.deformation_period + phase))
    ws, hs = tw * np.sqrt(aspect), th / np.sqrt(aspect)
    max_half = (tw * math.exp(spec.deformation / 2) / 2, th * math.exp(spec.deformation / 2) / 2)

    if spec.motion == "linear":
        v = np.asarray(spec.velocity, dtype=np.float64)
        start = np.asarray(spec.start if spec.start else (W / 2, H / 2), dtype=np.float64)
        if spec.start is None:
            start = start - v * (n - 1) / 2
        centers = start[None, :] + v[None, :] * np.arange(n)[:, None]
    elif spec.motion == "static":
        start = spec.start if spec.start else (W / 2, H / 2)
        centers = np.tile(np.asarray(start, dtype=np.float64), (n, 1))
    else:
        start = spec.start or (
            rng.uniform(max_half[0] + 2, W - max_half[0] - 2),
            rng.uniform(max_half[1] + 2, H - max_half[1] - 2),
        )
        centers = _random_walk(rng, n, start, spec.speed, (2 * max_half[0], 2 * max_half[1]), (W, H))

    distractors = []
    for _ in range(spec.clutter):
        s = rng.uniform(0.8, 1.25)
        spr = _sprite(rng, rng.choice(["rect", "ellipse"]), tw * s, th * s)
        st = (rng.uniform(spr.w / 2 + 2, W - spr.w / 2 - 2), rng.uniform(spr.h / 2 + 2, H - spr.h / 2 - 2))
        distractors.append((spr, _random_walk(rng, n, st, spec.speed, (spr.w, spr.h), (W, H))))

    occluder = _sprite(rng, "rect", tw, th)
    occluder.color0 = occluder.color1 = np.full(3, rng.uniform(0.3, 0.7))
    occ_frac = np.zeros(n)
    for start_f, end_f, frac in spec.occluders:
        occ_frac[int(start_f) : int(end_f)] = float(frac)
    occ_side = rng.integers(0, 2, n)

    side = math.sqrt(tw * th)
    for _ in range(spec.followers):
        s = rng.uniform(0.8, 1.25)
        spr = _sprite(rng, rng.choice(["rect", "ellipse"]), tw * s, th * s)
        angle = rng.uniform(0, 2 * math.pi) + np.cumsum(rng.normal(0, 0.08, n))
        radius = side * (1.5 + 0.5 * np.sin(rng.uniform(0, 2 * math.pi) + np.arange(n) / rng.uniform(6, 12)))
        path = centers + radius[:, None] * np.column_stack([np.cos(angle), np.sin(angle)])
        path[:, 0] = np.clip(path[:, 0], spr.w / 2, W - spr.w / 2)
        path[:, 1] = np.clip(path[:, 1], spr.h / 2, H - spr.h / 2)
        distractors.append((spr, path))

    frames, boxes, per_frame = [], [], []
    for k in range(n):
        img = bg.copy()
        for spr, path in distractors:
            _render_sprite(img, spr, BBox.from_center(*path[k], spr.w, spr.h), spr.color0, spec.texture)
        box = BBox.from_center(centers[k, 0], centers[k, 1], ws[k], hs[k])
        alpha = spec.color_drift * (k / max(n - 1, 1))
        color = (1 - alpha) * target.color0 + alpha * target.color1
        tmask = _render_sprite(img, target, box, color, spec.texture)
        occluded = 0.0
        if occ_frac[k] > 0:
            bw = box.w * occ_frac[k]
            ox = box.x if occ_side[k] == 0 else box.x1 - bw
            omask = _render_sprite(img, occluder, BBox(ox, box.y - 1, bw, box.h + 2), occluder.color0, 0.2)
            occluded = float((tmask & omask).sum() / max(tmask.sum(), 1))
        if spec.noise:
            img = img + rng.normal(0, spec.noise, img.shape)
        frames.append((np.round(np.clip(img, 0, 1) * 255) / 255).astype(np.float32))
        boxes.append(box)
        rec = {"frame": k, "occlusion": occluded, "aspect": float(ws[k] / hs[k])}
        if spec.followers:
            rec["followers"] = [[float(p[k, 0]), float(p[k, 1])] for _, p in distractors[spec.clutter :]]
        per_frame.append(rec)

    events = []
    for start_f, end_f, frac in spec.occluders:
        events.append({"type": "occlusion", "start": int(start_f), "end": int(end_f), "fraction": float(frac)})
    if spec.deformation:
        events.append({"type": "deformation", "start": 0, "end": n, "amplitude": spec.deformation})
    if spec.color_drift:
        events.append({"type": "color_drift", "start": 0, "end": n, "amount": spec.color_drift})
    log = {"seed": seed, "spec": _spec_dict(spec), "events": events, "frames": per_frame}
    return SequenceRecord(frames, boxes, log, spec.name)


def _spec_dict(spec: SequenceSpec) -> dict:
    d = asdict(spec)
    d["occluders"] = [list(o) for o in spec.occluders]
    return d


# ---------------------------------------------------------------------------
# on-disk format
# ---------------------------------------------------------------------------


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6 from a 3xHxW float image in [0, 1]."""
    arr = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM supported")
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return (raw.reshape(h, w, 3).transpose(2, 0, 1) / 255).astype(np.float32)


def save_sequence(seq: SequenceRecord, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames, start=1):
        write_ppm(d / f"{i:05d}.ppm", frame)
    write_boxes(d / "groundtruth.txt", seq.gt_boxes)
    (d / "events.json").write_text(json.dumps({"name": seq.name, **seq.event_log}, indent=1))
    return d


def load_sequence(directory) -> SequenceRecord:
    d = Path(directory)
    frames = [read_ppm(p) for p in sorted(d.glob("*.ppm"))]
    boxes = read_boxes(d / "groundtruth.txt")
    log = {}
    if (d / "events.json").exists():
        log = json.loads((d / "events.json").read_text())
    name = log.pop("name", d.name)
    return SequenceRecord(frames, boxes, log, name)


def write_boxes(path, boxes: Sequence[BBox]) -> None:
    with open(path, "w") as fh:
        for b in boxes:
            fh.write(",".join(repr(float(v)) for v in b.as_tuple()) + "\n")


def read_boxes(path) -> list[BBox]:
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            out.append(BBox(*(float(v) for v in line.replace("\t", ",").split(","))))
    return out


def is_sequence_dir(path) -> bool:
    return (Path(path) / "groundtruth.txt").exists()


def load_suite(directory) -> list[SequenceRecord]:
    """A sequence directory, or a directory of sequence directories."""
    d = Path(directory)
    if is_sequence_dir(d):
        return [load_sequence(d)]
    return [load_sequence(p) for p in sorted(d.iterdir()) if is_sequence_dir(p)]
