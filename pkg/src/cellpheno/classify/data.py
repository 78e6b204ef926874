"""Cell types, labelled patches and class-balancing schemes."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class CellType(IntEnum):
    CYT = 0
    FIB = 1
    HOF = 2
    SYN = 3
    VAS = 4

    @classmethod
    def parse(cls, name: str) -> "CellType":
        try:
            return cls[str(name).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown cell type {name!r}; expected one of {[c.name for c in cls]}") from None


N_CLASSES = len(CellType)
CLASS_NAMES = [c.name for c in CellType]


@dataclass(frozen=True)
class LabeledPatch:
    pixels: np.ndarray
    label: CellType
    source_id: str = ""


def class_counts(data) -> np.ndarray:
    return np.bincount([int(d.label) for d in data], minlength=N_CLASSES)


def _by_class(data):
    groups = [[] for _ in range(N_CLASSES)]
    for item in data:
        groups[int(item.label)].append(item)
    for c, g in enumerate(groups):
        if not g:
            raise ValueError(f"class {CellType(c).name} has no examples")
    return groups


def balance_bootstrap(data, rng=None) -> list:
    """Resample every class with replacement up to the majority-class size."""
    rng = np.random.default_rng(rng)
    groups = _by_class(data)
    target = max(len(g) for g in groups)
    out = []
    for g in groups:
        out.extend(g[i] for i in rng.integers(0, len(g), size=target))
    return out


def balance_downsample(data, rng=None) -> list:
    """Subsample every class without replacement to the minority-class size."""
    rng = np.random.default_rng(rng)
    groups = _by_class(data)
    target = min(len(g) for g in groups)
    out = []
    for g in groups:
        out.extend(g[i] for i in np.sort(rng.choice(len(g), size=target, replace=False)))
    return out


def class_weights(data) -> np.ndarray:
    """``N / (K * n_c)`` per class."""
    counts = class_counts(data)
    if np.any(counts == 0):
        raise ValueError("every class needs at least one example")
    return counts.sum() / (N_CLASSES * counts.astype(np.float64))
