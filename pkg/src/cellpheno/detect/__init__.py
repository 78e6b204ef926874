"""Detection geometry, post-processing, evaluation and a reference blob detector."""

from .evaluate import (PRCurve, ap_from_curve, average_precision, map_over_thresholds, match_greedy, match_indices,
                       mean_average_precision, pr_curve)
from .focal import FocalParams, binary_cross_entropy, focal_loss, softmax_focal
from .geometry import (BBox, Detection, MatchConfig, boxes_from_json, boxes_to_json, detections_from_json,
                       detections_to_json, iou, iou_matrix, nms, postprocess)
from .maps import DensityParams, DogParams, density_map, dog_detect, dog_response, local_maxima

__all__ = [
    "BBox", "Detection", "MatchConfig", "FocalParams", "DensityParams", "DogParams", "PRCurve",
    "iou", "iou_matrix", "nms", "postprocess", "match_greedy", "match_indices", "pr_curve", "ap_from_curve",
    "average_precision", "mean_average_precision", "map_over_thresholds", "focal_loss",
    "binary_cross_entropy", "softmax_focal", "density_map", "local_maxima", "dog_detect", "dog_response",
    "boxes_from_json", "boxes_to_json", "detections_from_json", "detections_to_json",
]
