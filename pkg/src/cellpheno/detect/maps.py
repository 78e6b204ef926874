"""Density-map targets, local maxima and a difference-of-Gaussians nuclei detector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..stain import DEFAULT_STAIN, StainMatrix, hematoxylin_channel
from .geometry import BBox, Detection, MatchConfig, postprocess


@dataclass(frozen=True)
class DensityParams:
    sigma: float = 4.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def radius(self) -> float:
        return 4.0 * self.sigma


def density_map(centers, dp: DensityParams, width: int, height: int) -> np.ndarray:
    """Sum of unit-mass Gaussians, one per ``(x, y)`` centre.

    Pixel ``(col, row)`` is sampled at position ``(col, row)``. Each Gaussian
    is truncated to a ``4 sigma`` disk and normalised to sum 1 over it; mass
    falling outside the image is lost.
    """
    plane = np.zeros((height, width))
    r = int(np.ceil(dp.radius))
    for cx, cy in centers:
        if not (0 <= cx <= width - 1 and 0 <= cy <= height - 1):
            raise ValueError(f"center ({cx}, {cy}) outside {width}x{height}")
        px, py = int(np.rint(cx)), int(np.rint(cy))
        xs = np.arange(px - r, px + r + 1)
        ys = np.arange(py - r, py + r + 1)
        dx = xs - cx
        dy = ys - cy
        d2 = dy[:, None] ** 2 + dx[None, :] ** 2
        k = np.where(d2 <= dp.radius ** 2, np.exp(-d2 / (2.0 * dp.sigma ** 2)), 0.0)
        k /= k.sum()
        ok_x = (xs >= 0) & (xs < width)
        ok_y = (ys >= 0) & (ys < height)
        plane[np.ix_(ys[ok_y], xs[ok_x])] += k[np.ix_(ok_y, ok_x)]
    return plane


def local_maxima(plane: np.ndarray, min_distance: int = 1, threshold: float = 0.0) -> list[tuple[int, int]]:
    """Pixels ``(x, y)`` strictly above every other pixel within ``min_distance``.

    Only maxima with value ``>= threshold`` are returned, strongest first.
    """
    if min_distance < 1:
        raise ValueError("min_distance must be >= 1")
    plane = np.asarray(plane, dtype=np.float64)
    d = int(min_distance)
    yy, xx = np.mgrid[-d:d + 1, -d:d + 1]
    footprint = (xx ** 2 + yy ** 2) <= d * d
    footprint[d, d] = False
    neighbour_max = ndimage.maximum_filter(plane, footprint=footprint, mode="constant", cval=-np.inf)
    rows, cols = np.nonzero((plane > neighbour_max) & (plane >= threshold))
    values = plane[rows, cols]
    order = np.lexsort((cols, rows, -values))
    return [(int(cols[i]), int(rows[i])) for i in order]


def dog_kernel_positive_mass(sigma_small: float, sigma_large: float) -> float:
    """Largest DoG response attainable on an input bounded to [0, 1].

    Equals the integral of the positive lobe of ``G_small - G_large``.
    """
    s2, l2 = sigma_small ** 2, sigma_large ** 2
    r2 = 2.0 * np.log(l2 / s2) * s2 * l2 / (l2 - s2)
    return float(np.exp(-r2 / (2 * l2)) - np.exp(-r2 / (2 * s2)))


@dataclass(frozen=True)
class DogParams:
    sigma_small: float = 3.0
    sigma_large: float = 5.0
    box_radius: float = 12.0
    threshold: float = 0.1
    min_distance: int = 6
    nms_iou: float = 0.5
    # haematoxylin contrast (concentration units) below which no stretching happens
    min_h_range: float = 0.25

    def __post_init__(self):
        if not (0 < self.sigma_small < self.sigma_large):
            raise ValueError("need 0 < sigma_small < sigma_large")


def dog_response(image: np.ndarray, params: DogParams = DogParams(), m: StainMatrix = DEFAULT_STAIN) -> np.ndarray:
    """DoG of the haematoxylin plane divided by its attainable maximum."""
    h = hematoxylin_channel(image, m, params.min_h_range)
    dog = (ndimage.gaussian_filter(h, params.sigma_small, mode="reflect")
           - ndimage.gaussian_filter(h, params.sigma_large, mode="reflect"))
    return dog / dog_kernel_positive_mass(params.sigma_small, params.sigma_large)


def dog_detect(image: np.ndarray, params: DogParams = DogParams(), m: StainMatrix = DEFAULT_STAIN,
               cfg: MatchConfig = MatchConfig()) -> list[Detection]:
    """Blob detections centred on DoG maxima of the haematoxylin plane."""
    resp = dog_response(image, params, m)
    dets = []
    for x, y in local_maxima(resp, params.min_distance, params.threshold):
        score = float(min(1.0, resp[y, x]))
        dets.append(Detection(BBox.around((x + 0.5, y + 0.5), params.box_radius), score))
    return postprocess(dets, params.threshold, cfg, params.nms_iou)
