"""Overlap and center-error metrics.

* AO: mean IoU.
* SR@tau: fraction of frames with IoU > tau.
* success AUC: mean of SR over the 101 thresholds 0, 0.01, ..., 1.
* precision: fraction of frames with center error <= 20 px.
* normalized precision: fraction with center error / sqrt(gt_w * gt_h) <= 0.2.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .boxes import BBox, iou_array

SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 101)
PRECISION_PX = 20.0
NORM_PRECISION = 0.2

METRIC_NOTES = {
    "success_auc": "mean fraction(IoU > tau) over 101 thresholds tau = 0, 0.01, ..., 1",
    "precision": f"fraction(center error <= {PRECISION_PX:g} px)",
    "norm_precision": f"fraction(center error / sqrt(gt_w * gt_h) <= {NORM_PRECISION:g})",
    "AO": "mean IoU",
    "SR@0.5": "fraction(IoU > 0.5)",
    "SR@0.75": "fraction(IoU > 0.75)",
}


def _as_array(boxes) -> np.ndarray:
    if len(boxes) and isinstance(boxes[0], BBox):
        return np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    return np.asarray(boxes, dtype=np.float64).reshape(-1, 4)


def center_errors(preds, gts) -> tuple[np.ndarray, np.ndarray]:
    p, g = _as_array(preds), _as_array(gts)
    d = np.hypot(p[:, 0] + p[:, 2] / 2 - g[:, 0] - g[:, 2] / 2, p[:, 1] + p[:, 3] / 2 - g[:, 1] - g[:, 3] / 2)
    return d, d / np.sqrt(g[:, 2] * g[:, 3])


def metrics_from_ious(ious: np.ndarray) -> dict[str, float]:
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        raise ValueError("metrics need at least one frame")
    sr = (ious[None, :] > SUCCESS_THRESHOLDS[:, None]).mean(axis=1)
    return {
        "success_auc": float(sr.mean()),
        "AO": float(ious.mean()),
        "SR@0.5": float((ious > 0.5).mean()),
        "SR@0.75": float((ious > 0.75).mean()),
    }


def metrics(preds: Sequence, gts: Sequence) -> dict[str, float]:
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground-truth boxes")
    if len(preds) == 0:
        raise ValueError("metrics need at least one frame")
    p, g = _as_array(preds), _as_array(gts)
    out = metrics_from_ious(iou_array(p, g))
    dist, ndist = center_errors(p, g)
    out["precision"] = float((dist <= PRECISION_PX).mean())
    out["norm_precision"] = float((ndist <= NORM_PRECISION).mean())
    return out


def aggregate(rows: Sequence[dict], keys: Sequence[str] | None = None) -> dict[str, float]:
    """Unweighted mean of each metric over per-sequence rows."""
    if not rows:
        raise ValueError("nothing to aggregate")
    keys = keys or [k for k in rows[0] if isinstance(rows[0][k], (int, float)) and k != "frames"]
    return {k: float(np.mean([r[k] for r in rows])) for k in keys}
