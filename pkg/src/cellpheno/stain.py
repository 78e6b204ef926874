"""Optical density, H&E-DAB colour deconvolution and stain-scaling augmentation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .imgcore import as_image

# Ruifrok & Johnston H&E-DAB optical density vectors (rows: H, E, DAB).
RUIFROK_HED = np.array([
    [0.650, 0.704, 0.286],
    [0.072, 0.990, 0.105],
    [0.268, 0.570, 0.776],
])


@dataclass(frozen=True, eq=False)
class StainMatrix:
    """Unit-norm stain OD vectors as rows of a 3x3 matrix."""

    rows: np.ndarray = field(default_factory=lambda: RUIFROK_HED)

    def __post_init__(self):
        m = np.asarray(self.rows, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"stain matrix must be 3x3, got {m.shape}")
        norms = np.linalg.norm(m, axis=1)
        if np.any(norms == 0):
            raise ValueError("stain vectors must be non-zero")
        if not np.allclose(norms, 1.0, rtol=0.0, atol=1e-12):  # keep JSON round trips bit-exact
            m = m / norms[:, None]
        cond = np.linalg.cond(m)
        if not np.isfinite(cond) or cond >= 1e6:
            raise ValueError(f"stain matrix is singular (condition number {cond:.3g})")
        m.setflags(write=False)
        object.__setattr__(self, "rows", m)
        inv = np.linalg.inv(m)
        inv.setflags(write=False)
        object.__setattr__(self, "_inverse", inv)

    def __eq__(self, other):
        return isinstance(other, StainMatrix) and np.array_equal(self.rows, other.rows)

    def __hash__(self):
        return hash(self.rows.tobytes())

    @property
    def inverse(self) -> np.ndarray:
        return self._inverse

    @classmethod
    def from_json(cls, text: str) -> "StainMatrix":
        values = json.loads(text)
        if not isinstance(values, list) or len(values) != 9:
            raise ValueError("stain matrix JSON must be an array of 9 numbers")
        return cls(np.array(values, dtype=np.float64).reshape(3, 3))

    def to_json(self) -> str:
        return json.dumps([float(v) for v in self.rows.ravel()])


DEFAULT_STAIN = StainMatrix()


def optical_density(image: np.ndarray) -> np.ndarray:
    return -np.log10((as_image(image).astype(np.float64) + 1.0) / 256.0)


def od_to_rgb(od: np.ndarray) -> np.ndarray:
    rgb = 256.0 * np.power(10.0, -od) - 1.0
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def rgb_to_hed(image: np.ndarray, m: StainMatrix = DEFAULT_STAIN) -> np.ndarray:
    """Stain concentrations, shape ``(H, W, 3)`` with planes H, E, D."""
    return optical_density(image) @ m.inverse


def hed_to_rgb(hed: np.ndarray, m: StainMatrix = DEFAULT_STAIN) -> np.ndarray:
    return od_to_rgb(np.asarray(hed, dtype=np.float64) @ m.rows)


@dataclass(frozen=True)
class StainTransformConfig:
    scale_low: float = 0.95
    scale_high: float = 1.05
    per_channel: bool = False

    def __post_init__(self):
        if not (0 < self.scale_low <= self.scale_high):
            raise ValueError("need 0 < scale_low <= scale_high")


def stain_transform(image: np.ndarray, cfg: StainTransformConfig = StainTransformConfig(),
                    rng=None, m: StainMatrix = DEFAULT_STAIN) -> np.ndarray:
    """Simulate under- or over-staining by scaling HED concentrations.

    ``rng`` is a seed or a ``numpy.random.Generator``. A single factor is
    shared by the three planes unless ``cfg.per_channel`` is set.
    """
    rng = np.random.default_rng(rng)
    n = 3 if cfg.per_channel else 1
    factors = rng.uniform(cfg.scale_low, cfg.scale_high, size=n)
    return hed_to_rgb(rgb_to_hed(image, m) * factors, m)


def hematoxylin_channel(image: np.ndarray, m: StainMatrix = DEFAULT_STAIN, min_range: float = 0.0) -> np.ndarray:
    """Haematoxylin concentration min-max scaled to [0, 1]; zeros when constant.

    With ``min_range > 0`` the divisor is at least ``min_range``, so a tile
    holding only background noise is not stretched to full contrast.
    """
    h = rgb_to_hed(image, m)[..., 0]
    lo, hi = h.min(), h.max()
    if hi - lo <= 1e-12:
        return np.zeros_like(h)
    return (h - lo) / max(hi - lo, min_range)
