"""Boxes, scored detections, IoU and greedy non-maximum suppression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, half-open ``[x_min, x_max) x [y_min, y_max)``."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self}")

    @classmethod
    def from_xywh(cls, x, y, w, h) -> "BBox":
        return cls(float(x), float(y), float(x) + float(w), float(y) + float(h))

    @classmethod
    def around(cls, center, radius) -> "BBox":
        cx, cy = center
        return cls(cx - radius, cy - radius, cx + radius, cy + radius)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def to_json(self) -> dict:
        return {"x": self.x_min, "y": self.y_min, "w": self.width, "h": self.height}


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")

    def to_json(self) -> dict:
        return {**self.box.to_json(), "score": self.score}


@dataclass(frozen=True)
class MatchConfig:
    iou_threshold: float = 0.5
    max_detections: int = 500

    def __post_init__(self):
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValueError("iou_threshold must lie in (0, 1]")
        if self.max_detections < 0:
            raise ValueError("max_detections must be non-negative")


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a: list[BBox], b: list[BBox]) -> np.ndarray:
    if not a or not b:
        return np.zeros((len(a), len(b)))
    A = np.array([[t.x_min, t.y_min, t.x_max, t.y_max] for t in a])
    B = np.array([[t.x_min, t.y_min, t.x_max, t.y_max] for t in b])
    iw = np.minimum(A[:, None, 2], B[None, :, 2]) - np.maximum(A[:, None, 0], B[None, :, 0])
    ih = np.minimum(A[:, None, 3], B[None, :, 3]) - np.maximum(A[:, None, 1], B[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (A[:, 2] - A[:, 0]) * (A[:, 3] - A[:, 1])
    area_b = (B[:, 2] - B[:, 0]) * (B[:, 3] - B[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def sort_by_score(dets: list[Detection]) -> list[Detection]:
    # stable: equal scores keep input order
    return sorted(dets, key=lambda d: -d.score)


def nms(dets: list[Detection], nms_iou: float) -> list[Detection]:
    """Greedy NMS; a box is dropped when IoU with a kept box exceeds ``nms_iou``."""
    ordered = sort_by_score(dets)
    if not ordered:
        return []
    ious = iou_matrix([d.box for d in ordered], [d.box for d in ordered])
    suppressed = np.zeros(len(ordered), dtype=bool)
    kept = []
    for i, det in enumerate(ordered):
        if suppressed[i]:
            continue
        kept.append(det)
        suppressed |= ious[i] > nms_iou
    return kept


def postprocess(dets: list[Detection], score_threshold: float,
                cfg: MatchConfig = MatchConfig(), nms_iou: float = 0.5) -> list[Detection]:
    """Threshold (score >= threshold), NMS, then cap at ``cfg.max_detections``."""
    passing = [d for d in dets if d.score >= score_threshold]
    return nms(passing, nms_iou)[: cfg.max_detections]


def detections_to_json(dets: list[Detection]) -> list[dict]:
    return [d.to_json() for d in dets]


def boxes_to_json(boxes: list[BBox], labels=None) -> list[dict]:
    out = []
    for i, b in enumerate(boxes):
        item = b.to_json()
        if labels is not None:
            item["label"] = labels[i]
        out.append(item)
    return out


def detections_from_json(items: list[dict]) -> list[Detection]:
    return [Detection(BBox.from_xywh(d["x"], d["y"], d["w"], d["h"]), float(d["score"])) for d in items]


def boxes_from_json(items: list[dict]) -> list[BBox]:
    return [BBox.from_xywh(d["x"], d["y"], d["w"], d["h"]) for d in items]

