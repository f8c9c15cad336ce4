"""Losses, SGD with momentum, warmup + cosine schedule, and training loops."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .data import MAX_SHIFT, SequenceRecord, TrainingSample, make_training_sample
from .head import HeadOutputs, Targets
from .model import TrackerNet
from .tensor import Tensor, log, log_sigmoid, minimum, mul, sigmoid, sum_all

logger = logging.getLogger(__name__)

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 2
    steps_per_epoch: int = 2000
    batch_size: int = 8
    base_lr: float = 2e-3
    peak_lr: float = 1e-2
    final_lr: float = 1e-5
    warmup_steps: int = 200
    momentum: float = 0.9
    weight_decay: float = 1e-4
    T: int = 3
    max_gap: int = 100
    lambda_ctr: float = 1.0
    lambda_reg: float = 3.0
    clip_grad: float = 10.0  # global-norm clip, 0 disables
    freeze_backbone: bool = False
    freeze_head: bool = False
    augment: bool = True
    max_shift: float = MAX_SHIFT  # augmentation shift, fraction of the crop side
    seed: int = 0
    log_every: int = 50
    checkpoint_every: int = 0

    def __post_init__(self):
        if not (self.peak_lr >= self.base_lr >= self.final_lr >= 0):
            raise ValueError("need peak_lr >= base_lr >= final_lr >= 0")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def focal_loss(logits: Tensor, labels: np.ndarray, alpha=FOCAL_ALPHA, gamma=FOCAL_GAMMA) -> Tensor:
    """Summed sigmoid focal loss (not normalized)."""
    y = Tensor(labels, dtype=logits.dtype)
    p = sigmoid(logits)
    q = 1.0 - p
    pos_mod, neg_mod = q, p
    for _ in range(int(gamma) - 1):
        pos_mod, neg_mod = mul(pos_mod, q), mul(neg_mod, p)
    pos = mul(mul(pos_mod, log_sigmoid(logits)), y)
    neg = mul(mul(neg_mod, log_sigmoid(-logits)), 1.0 - y)
    return -(alpha * sum_all(pos) + (1 - alpha) * sum_all(neg))


def _entropy(y: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(y > 0, y * np.log(y), 0) + np.where(y < 1, (1 - y) * np.log1p(-y), 0))
    return h


def centerness_loss(logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Summed binary cross-entropy minus the label entropy, over ``mask`` cells.

    Subtracting the entropy leaves gradients untouched and makes a perfect
    prediction cost exactly zero even for fractional labels.
    """
    y = Tensor(labels, dtype=logits.dtype)
    m = Tensor(mask, dtype=logits.dtype)
    bce = -(mul(y, log_sigmoid(logits)) + mul(1.0 - y, log_sigmoid(-logits)))
    h = Tensor(_entropy(labels) * mask, dtype=logits.dtype)
    return sum_all(mul(bce, m)) - sum_all(h)


def iou_loss(reg: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Summed ``-log((inter + 1) / (union + 1))`` over ``mask`` cells; zero for exact boxes."""
    dt = reg.dtype
    tgt = [Tensor(target[i : i + 1], dtype=dt) for i in range(4)]
    pred = [reg[i : i + 1] for i in range(4)]
    l, t, r, b = pred
    lt, tt, rt, bt = tgt
    iw = minimum(l, lt) + minimum(r, rt)
    ih = minimum(t, tt) + minimum(b, bt)
    inter = mul(iw, ih)
    area_p = mul(l + r, t + b)
    area_t = (target[0:1] + target[2:3]) * (target[1:2] + target[3:4])
    union = area_p + Tensor(area_t, dtype=dt) - inter
    per_cell = log(union + 1.0) - log(inter + 1.0)
    return sum_all(mul(per_cell, Tensor(mask, dtype=dt)))


@dataclass
class LossBreakdown:
    total: Tensor
    cls: float
    ctr: float
    reg: float
    num_positive: int
    no_positives: bool = False


def compute_loss(outputs: HeadOutputs, targets: Targets, lambda_ctr=1.0, lambda_reg=3.0) -> LossBreakdown:
    npos = targets.num_positive
    norm = 1.0 / max(npos, 1)
    l_cls = mul(focal_loss(outputs.cls, targets.cls), norm)
    if npos == 0:
        return LossBreakdown(l_cls, l_cls.item(), 0.0, 0.0, 0, no_positives=True)
    pos = targets.cls
    l_ctr = mul(centerness_loss(outputs.ctr, targets.ctr, pos), norm)
    l_reg = mul(iou_loss(outputs.reg, targets.reg, pos), norm)
    total = l_cls + lambda_ctr * l_ctr + lambda_reg * l_reg
    return LossBreakdown(total, l_cls.item(), l_ctr.item(), l_reg.item(), npos)


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------


@dataclass
class WarmupCosine:
    """Linear ``base -> peak`` over ``warmup`` steps, then cosine ``peak -> final`` at step ``total - 1``."""

    base: float
    peak: float
    final: float
    warmup: int
    total: int

    def __call__(self, step: int) -> float:
        if step < self.warmup:
            return self.base + (self.peak - self.base) * step / self.warmup
        span = self.total - 1 - self.warmup
        if span <= 0:
            return self.peak if step == self.warmup else self.final
        frac = min(max((step - self.warmup) / span, 0.0), 1.0)
        return self.final + 0.5 * (self.peak - self.final) * (1 + math.cos(math.pi * frac))

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "WarmupCosine":
        return cls(cfg.base_lr, cfg.peak_lr, cfg.final_lr, cfg.warmup_steps, cfg.total_steps)


class SGD:
    """Momentum SGD with decoupled weight decay: ``p -= lr * (v + wd * p)``, ``v = mu * v + g``."""

    def __init__(self, params: Sequence[Tensor], momentum: float = 0.9, weight_decay: float = 1e-4):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            if self.momentum:
                v *= self.momentum
                v += p.grad
                update = v
            else:
                update = p.grad
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= p.data.dtype.type(lr) * update

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params if p.grad is not None))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return total


def trainable_parameters(model: TrackerNet, cfg: TrainConfig) -> list[Tensor]:
    params = []
    for name, p in model.named_parameters():
        if cfg.freeze_backbone and name.startswith(("phi_m.", "phi_q.")):
            continue
        if cfg.freeze_head and name.startswith("head."):
            continue
        params.append(p)
    return params


def sample_loss(model: TrackerNet, sample: TrainingSample, cfg: TrainConfig) -> LossBreakdown:
    outputs = model(sample.memory_patches, sample.label_maps, sample.query_patch)
    return compute_loss(outputs, sample.targets, cfg.lambda_ctr, cfg.lambda_reg)


def train_step(
    model: TrackerNet,
    batch: Sequence[TrainingSample],
    opt: SGD,
    step: int,
    schedule: Callable[[int], float],
    cfg: TrainConfig,
    batch_seed=None,
) -> dict:
    """One optimizer update over ``batch``; gradients are averaged over samples."""
    opt.zero_grad()
    model.zero_grad()
    totals = {"loss": 0.0, "loss_cls": 0.0, "loss_ctr": 0.0, "loss_reg": 0.0}
    for sample in batch:
        parts = sample_loss(model, sample, cfg)
        value = parts.total.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(f"non-finite loss {value} at step {step} (batch seed {batch_seed})")
        mul(parts.total, 1.0 / len(batch)).backward()
        totals["loss"] += value / len(batch)
        totals["loss_cls"] += parts.cls / len(batch)
        totals["loss_ctr"] += parts.ctr / len(batch)
        totals["loss_reg"] += parts.reg / len(batch)
    grad_norm = clip_grad_norm(opt.params, cfg.clip_grad)
    if not math.isfinite(grad_norm):
        raise TrainingDivergedError(f"non-finite gradient at step {step} (batch seed {batch_seed})")
    lr = schedule(step)
    opt.step(lr)
    return {"step": step, "lr": lr, **totals}


class SampleStream:
    """Deterministic training samples: batch ``k`` depends only on ``(seed, k)``."""

    def __init__(self, suite: Sequence[SequenceRecord], cfg: TrainConfig, grid, context: float = 4.0):
        self.suite = list(suite)
        self.cfg = cfg
        self.grid = grid
        self.context = context

    def batch(self, step: int) -> list[TrainingSample]:
        rng = np.random.default_rng([self.cfg.seed, step])
        out = []
        while len(out) < self.cfg.batch_size:
            seq = self.suite[int(rng.integers(len(self.suite)))]
            s = make_training_sample(
                seq, rng, self.grid, self.cfg.T, self.cfg.max_gap, self.context, self.cfg.augment, self.cfg.max_shift
            )
            out.append(s)
        return out


def train(
    model: TrackerNet,
    suite: Sequence[SequenceRecord],
    cfg: TrainConfig,
    log_path=None,
    checkpoint_path=None,
    progress: Callable[[dict], None] | None = None,
) -> list[dict]:
    stream = SampleStream(suite, cfg, model.grid)
    opt = SGD(trainable_parameters(model, cfg), cfg.momentum, cfg.weight_decay)
    schedule = WarmupCosine.from_config(cfg)
    history = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        for step in range(cfg.total_steps):
            rec = train_step(model, stream.batch(step), opt, step, schedule, cfg, batch_seed=(cfg.seed, step))
            history.append(rec)
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
            if progress and (step % max(cfg.log_every, 1) == 0 or step == cfg.total_steps - 1):
                progress(rec)
            if checkpoint_path and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                model.save(checkpoint_path, {"step": step + 1})
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_path:
        model.save(checkpoint_path, {"step": cfg.total_steps, "train": _cfg_dict(cfg)})
    return history


def _cfg_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def overfit_harness(
    model: TrackerNet,
    sample: TrainingSample,
    max_steps: int = 300,
    lr: float = 2e-2,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
    warmup: int = 20,
    cfg: TrainConfig | None = None,
) -> list[float]:
    """Repeatedly fit one fixed sample; returns the loss before each update."""
    cfg = cfg or TrainConfig()
    opt = SGD(model.parameters(), momentum, weight_decay)
    schedule = WarmupCosine(lr * 0.1, lr, lr * 0.01, warmup, max_steps)
    losses = []
    for step in range(max_steps):
        rec = train_step(model, [sample], opt, step, schedule, cfg)
        losses.append(rec["loss"])
    return losses
