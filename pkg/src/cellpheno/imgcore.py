"""Raster images, tiling, patch extraction, artifact scoring and geometric augmentation.

Images are ``numpy.ndarray`` of shape ``(height, width, 3)`` and dtype ``uint8``.
Point coordinates are continuous ``(x, y)``: pixel ``(col, row)`` covers
``[col, col + 1) x [row, row + 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

# Rec. 601 luma weights.
_LUMA = np.array([0.299, 0.587, 0.114])
_LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def as_image(arr) -> np.ndarray:
    """Validate and return an RGB uint8 raster."""
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) RGB array, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("image is empty")
    if arr.dtype != np.uint8:
        raise TypeError(f"expected uint8 pixels, got {arr.dtype}")
    return arr


def load_png(path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.array(im.convert("RGB"), dtype=np.uint8)


def save_png(path, image: np.ndarray) -> None:
    image = as_image(image)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(image, mode="RGB").save(path, format="PNG", compress_level=1)  # noisy tiles: speed over size


def resize_bilinear(image: np.ndarray, size: int) -> np.ndarray:
    """Resize to ``size x size`` with bilinear filtering."""
    image = as_image(image)
    if image.shape[:2] == (size, size):
        return image
    out = PILImage.fromarray(image, mode="RGB").resize((size, size), PILImage.BILINEAR)
    return np.asarray(out, dtype=np.uint8)


@dataclass(frozen=True)
class TileGrid:
    tile_width: int = 1600
    tile_height: int = 1200

    def __post_init__(self):
        if self.tile_width <= 0 or self.tile_height <= 0:
            raise ValueError("tile dimensions must be positive")


@dataclass(frozen=True)
class TileOffset:
    x: int
    y: int
    width: int
    height: int

    def to_json(self) -> dict:
        return {"x": self.x, "y": self.y, "width": self.width, "height": self.height}


def split_tiles(image: np.ndarray, grid: TileGrid = TileGrid()) -> list[tuple[TileOffset, np.ndarray]]:
    """Cut ``image`` into a row-major grid of disjoint full-size tiles.

    Partial tiles at the right and bottom edges are dropped.
    """
    image = as_image(image)
    h, w = image.shape[:2]
    tw, th = grid.tile_width, grid.tile_height
    if tw > w or th > h:
        raise ValueError(f"tile {tw}x{th} is larger than image {w}x{h}")
    tiles = []
    for row in range(h // th):
        for col in range(w // tw):
            x, y = col * tw, row * th
            tiles.append((TileOffset(x, y, tw, th), image[y:y + th, x:x + tw].copy()))
    return tiles


@dataclass(frozen=True)
class Patch:
    side: int
    center: tuple[float, float]
    pixels: np.ndarray
    # fraction of the patch area that came from padding
    padded_fraction: float = 0.0


def extract_patch(image: np.ndarray, center, side: int = 200) -> Patch:
    """Crop a ``side x side`` window centred on ``center = (x, y)``.

    Parts of the window outside the image are reflect-padded.
    """
    image = as_image(image)
    h, w = image.shape[:2]
    cx, cy = float(center[0]), float(center[1])
    if not (0 <= cx < w and 0 <= cy < h):
        raise ValueError(f"center ({cx}, {cy}) lies outside the {w}x{h} image")
    if side <= 0:
        raise ValueError("side must be positive")
    x0 = int(np.floor(cx)) - side // 2
    y0 = int(np.floor(cy)) - side // 2
    x1, y1 = x0 + side, y0 + side
    pad_l, pad_t = max(0, -x0), max(0, -y0)
    pad_r, pad_b = max(0, x1 - w), max(0, y1 - h)
    crop = image[max(0, y0):min(h, y1), max(0, x0):min(w, x1)]
    if pad_l or pad_t or pad_r or pad_b:
        crop = np.pad(crop, ((pad_t, pad_b), (pad_l, pad_r), (0, 0)), mode="reflect")
    inside = (side - pad_l - pad_r) * (side - pad_t - pad_b)
    return Patch(side=side, center=(cx, cy), pixels=np.ascontiguousarray(crop),
                 padded_fraction=1.0 - inside / float(side * side))


def luma(image: np.ndarray) -> np.ndarray:
    return as_image(image).astype(np.float64) @ _LUMA


def artifact_score(tile: np.ndarray, background_luma: float = 220.0) -> tuple[float, float]:
    """Return ``(blur_score, tissue_fraction)`` for a tile.

    ``blur_score`` is the variance of the 3x3 Laplacian of the luma plane
    (0-255 scale); ``tissue_fraction`` is the share of pixels darker than
    ``background_luma``.
    """
    y = luma(tile)
    lap = ndimage.convolve(y, _LAPLACIAN, mode="reflect")
    return float(lap.var()), float(np.mean(y < background_luma))


@dataclass(frozen=True)
class ArtifactFilter:
    min_blur_score: float = 50.0
    min_tissue_fraction: float = 0.05
    background_luma: float = 220.0

    def reasons(self, tile: np.ndarray) -> list[str]:
        blur, tissue = artifact_score(tile, self.background_luma)
        out = []
        if blur < self.min_blur_score:
            out.append("blurred")
        if tissue < self.min_tissue_fraction:
            out.append("background")
        return out


def filter_tiles(tiles, flt: ArtifactFilter = ArtifactFilter(), exclude=()):
    """Split ``(key, tile)`` pairs into kept and rejected lists.

    ``exclude`` holds keys rejected manually regardless of their scores.
    Rejected entries carry a list of reasons.
    """
    exclude = set(exclude)
    kept, rejected = [], []
    for key, tile in tiles:
        reasons = ["excluded"] if key in exclude else flt.reasons(tile)
        if reasons:
            rejected.append((key, reasons))
        else:
            kept.append((key, tile))
    return kept, rejected


@dataclass(frozen=True)
class GeometricSpec:
    hflip: bool = False
    vflip: bool = False
    rot90_k: int = 0
    shear_factor: float = 0.0


def random_geometric_spec(rng: np.random.Generator, max_shear: float = 0.2) -> GeometricSpec:
    return GeometricSpec(
        hflip=bool(rng.integers(2)),
        vflip=bool(rng.integers(2)),
        rot90_k=int(rng.integers(4)),
        shear_factor=float(rng.uniform(-max_shear, max_shear)),
    )


def augment_geometric(image: np.ndarray, spec: GeometricSpec, max_shear: float = 0.2) -> np.ndarray:
    """Apply flips, a quarter-turn rotation and a horizontal shear.

    The shear is taken about the image centre and the uncovered area is
    filled by reflection, so the output keeps the input dimensions. For
    non-square images a rotation by an odd ``rot90_k`` swaps height and width.
    """
    image = as_image(image)
    if abs(spec.shear_factor) > max_shear:
        raise ValueError(f"|shear_factor| must be <= {max_shear}")
    out = image
    if spec.hflip:
        out = out[:, ::-1]
    if spec.vflip:
        out = out[::-1, :]
    if spec.rot90_k % 4:
        out = np.rot90(out, spec.rot90_k % 4)
    if spec.shear_factor:
        s = spec.shear_factor
        cy = (out.shape[0] - 1) / 2.0
        # input col = col + s * (row - cy)
        matrix = np.array([[1.0, 0.0], [s, 1.0]])
        offset = np.array([0.0, -s * cy])
        channels = [
            ndimage.affine_transform(out[..., c].astype(np.float64), matrix, offset=offset,
                                     order=1, mode="reflect")
            for c in range(3)
        ]
        out = np.clip(np.rint(np.stack(channels, axis=-1)), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(out)
