"""Greedy detection matching, precision-recall curves and (m)AP."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BBox, Detection, MatchConfig, iou_matrix, postprocess


@dataclass(frozen=True)
class PRCurve:
    scores: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    n_gt: int

    def rows(self):
        return [(float(s), float(p), float(r))
                for s, p, r in zip(self.scores, self.precision, self.recall)]


def match_indices(preds: list[Detection], gts: list[BBox], iou_threshold: float) -> np.ndarray:
    """Index of the ground truth each prediction claims, or -1.

    Predictions are taken in the given order; each claims the unmatched
    ground truth it overlaps most, if that IoU reaches the threshold.
    """
    assigned = np.full(len(preds), -1, dtype=int)
    if not preds or not gts:
        return assigned
    ious = iou_matrix([p.box for p in preds], gts)
    taken = np.zeros(len(gts), dtype=bool)
    for i in range(len(preds)):
        cand = np.where(taken, -1.0, ious[i])
        j = int(np.argmax(cand))
        if cand[j] >= iou_threshold:
            taken[j] = True
            assigned[i] = j
    return assigned


def match_greedy(preds: list[Detection], gts: list[BBox], iou_threshold: float) -> np.ndarray:
    """TP flags for ``preds`` taken in the given order."""
    return match_indices(preds, gts, iou_threshold) >= 0


def _ranked(per_image):
    """Merge all images' detections in descending score order.

    Ties break on (image index, detection index) so the merge does not
    depend on how images were grouped or evaluated.
    """
    flat = []
    for img_idx, (preds, _) in enumerate(per_image):
        for det_idx, d in enumerate(preds):
            flat.append((-d.score, img_idx, det_idx, d))
    flat.sort(key=lambda t: t[:3])
    return flat


def pr_curve(per_image, cfg: MatchConfig = MatchConfig()) -> PRCurve:
    """Pooled precision-recall curve over several ``(preds, gts)`` images."""
    flat = _ranked(per_image)
    tp = np.zeros(len(flat), dtype=bool)
    for img_idx, (_, gts) in enumerate(per_image):
        pos = [k for k, t in enumerate(flat) if t[1] == img_idx]
        if pos:
            tp[pos] = match_greedy([flat[k][3] for k in pos], gts, cfg.iou_threshold)
    n_gt = sum(len(g) for _, g in per_image)
    scores = np.array([-t[0] for t in flat])
    # one curve point per distinct score, so tied detections count together
    # and the pooled result does not depend on the order of the images
    last = np.r_[scores[1:] != scores[:-1], True] if len(flat) else np.zeros(0, dtype=bool)
    ctp = np.cumsum(tp)[last]
    ranks = np.arange(1, len(flat) + 1)[last]
    precision = ctp / ranks
    recall = ctp / n_gt if n_gt else np.zeros(len(ctp))
    return PRCurve(scores[last], precision, recall, n_gt)


def ap_from_curve(curve: PRCurve) -> float:
    """All-points interpolated area under the precision envelope."""
    if curve.n_gt == 0:
        return 1.0 if len(curve.scores) == 0 else 0.0
    if len(curve.scores) == 0:
        return 0.0
    r = np.concatenate(([0.0], curve.recall))
    p = np.concatenate(([0.0], curve.precision))
    envelope = np.maximum.accumulate(p[::-1])[::-1]
    return float(np.sum((r[1:] - r[:-1]) * envelope[1:]))


def average_precision(preds: list[Detection], gts: list[BBox], cfg: MatchConfig = MatchConfig()) -> float:
    return ap_from_curve(pr_curve([(preds, gts)], cfg))


def mean_average_precision(per_image, cfg: MatchConfig = MatchConfig(), per_image_mean: bool = False) -> float:
    """Pooled AP over all images, or the mean of per-image APs."""
    if per_image_mean:
        if not per_image:
            return 0.0
        return float(np.mean([average_precision(p, g, cfg) for p, g in per_image]))
    return ap_from_curve(pr_curve(per_image, cfg))


def map_over_thresholds(per_image, thresholds, cfg: MatchConfig = MatchConfig(), nms_iou: float = 0.5,
                        per_image_mean: bool = False) -> list[tuple[float, float]]:
    """mAP after post-processing at each posterior threshold."""
    thresholds = list(thresholds)
    if thresholds != sorted(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    out = []
    for t in thresholds:
        kept = [(postprocess(p, t, cfg, nms_iou), g) for p, g in per_image]
        out.append((float(t), mean_average_precision(kept, cfg, per_image_mean)))
    return out
