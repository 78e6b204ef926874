"""Deterministic synthetic H&E-like tiles with exact nuclei ground truth.

Nuclei are anti-aliased ellipses whose colour is defined by HED stain
concentrations, blended with a pink-white background in optical-density space.
Every class has its own concentration band and shape range, so a classifier
can reach near-ceiling accuracy and failures point at the pipeline.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .classify.data import CLASS_NAMES, N_CLASSES, CellType, LabeledPatch
from .detect.geometry import BBox, boxes_from_json, boxes_to_json
from .imgcore import extract_patch, load_png, save_png
from .jsonio import read_json, write_json
from .stain import DEFAULT_STAIN, od_to_rgb

# box coordinates are snapped to this grid so JSON round trips are exact
_GRID = 256.0
_SUPERSAMPLE = 4


@dataclass(frozen=True)
class ClassStyle:
    major: tuple[float, float]      # semi-axis range, px
    minor: tuple[float, float]
    hed: tuple[float, float, float]  # stain concentration band centre
    jitter: float = 0.03
    # stain falls off as (1 - rho^2)**profile from the centre; 0 gives a hard-edged fill
    profile: float = 1.0


def default_styles() -> dict[str, ClassStyle]:
    return {
        "CYT": ClassStyle((10.0, 11.5), (9.5, 10.5), (1.00, 0.35, 0.00)),
        # elongated class: recreates the split-detection failure mode on eccentric nuclei
        "FIB": ClassStyle((11.0, 12.5), (7.0, 8.0), (0.90, 0.00, 0.00)),
        "HOF": ClassStyle((10.5, 12.0), (10.0, 11.5), (0.55, 0.70, 0.00)),
        "SYN": ClassStyle((9.5, 10.5), (9.5, 10.5), (1.50, 0.10, 0.00)),
        "VAS": ClassStyle((10.0, 11.5), (9.0, 10.0), (0.70, 0.10, 0.45)),
    }


@dataclass(frozen=True)
class SynthSpec:
    width: int = 800
    height: int = 600
    count_range: tuple[int, int] = (4, 8)
    min_separation: float = 165.0
    styles: dict = field(default_factory=default_styles)
    background_hed: tuple[float, float, float] = (0.03, 0.10, 0.00)
    noise_od: float = 0.005
    class_mix: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)

    def __post_init__(self):
        lo, hi = self.count_range
        if not (0 <= lo <= hi):
            raise ValueError("count_range must satisfy 0 <= low <= high")
        missing = set(CLASS_NAMES) - set(self.styles)
        if missing:
            raise ValueError(f"missing styles for {sorted(missing)}")
        styles = {k: (v if isinstance(v, ClassStyle) else ClassStyle(**v)) for k, v in self.styles.items()}
        object.__setattr__(self, "styles", styles)
        max_axis = max(s.major[1] for s in styles.values())
        if self.min_separation <= max_axis:
            raise ValueError("min_separation must exceed the largest nucleus radius")
        if 2 * self.margin >= min(self.width, self.height):
            raise ValueError("tile too small for the nucleus margin")
        names = list(styles)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                sa, sb = styles[a], styles[b]
                gap = np.abs(np.subtract(sa.hed, sb.hed))
                if not np.any(gap > sa.jitter + sb.jitter):
                    raise ValueError(f"colour bands of {a} and {b} overlap")
        _check_mix(self.class_mix)

    @property
    def margin(self) -> float:
        return max(s.major[1] for s in self.styles.values()) + 2.0

    def to_json(self) -> dict:
        d = asdict(self)
        d["styles"] = {k: asdict(v) for k, v in self.styles.items()}
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SynthSpec":
        """Inverse of :meth:`to_json`; omitted keys take their defaults."""
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown SynthSpec keys: {sorted(unknown)}")
        if "styles" in d:
            d["styles"] = {k: ClassStyle(**{kk: tuple(vv) if isinstance(vv, list) else vv for kk, vv in v.items()})
                           for k, v in d["styles"].items()}
        for key in ("count_range", "background_hed", "class_mix"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _check_mix(mix):
    mix = np.asarray(mix, dtype=np.float64)
    if mix.shape != (N_CLASSES,) or np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-6:
        raise ValueError(f"class mix must be {N_CLASSES} non-negative numbers summing to 1, got {mix.tolist()}")
    return mix


@dataclass
class SynthTile:
    image: np.ndarray
    gt_boxes: list
    gt_labels: list
    tile_id: str = ""

    @property
    def gt_centers(self) -> list[tuple[float, float]]:
        return [b.center for b in self.gt_boxes]

    def gt_json(self) -> list[dict]:
        return boxes_to_json(self.gt_boxes, [CellType(l).name for l in self.gt_labels])


class PlacementError(RuntimeError):
    pass


def place_centers(spec: SynthSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample ``count`` centres at least ``min_separation`` apart."""
    m = spec.margin
    pts = []
    for _ in range(10 * count):
        if len(pts) == count:
            break
        p = rng.uniform((m, m), (spec.width - m, spec.height - m))
        if all(np.hypot(*(p - q)) >= spec.min_separation for q in pts):
            pts.append(p)
    if len(pts) < count:
        raise PlacementError(
            f"placed only {len(pts)} of {count} nuclei in {10 * count} attempts; "
            "lower the nuclei count or min_separation, or enlarge the tile")
    return np.array(pts).reshape(count, 2)


def _fill(cx, cy, a, b, theta, x0, y0, w, h, profile):
    """Supersampled stain weight of an ellipse over a pixel window."""
    s = _SUPERSAMPLE
    offs = (np.arange(s) + 0.5) / s
    xs = (x0 + np.arange(w)[:, None] + offs[None, :]).ravel()
    ys = (y0 + np.arange(h)[:, None] + offs[None, :]).ravel()
    dx = xs[None, :] - cx
    dy = ys[:, None] - cy
    c, sn = np.cos(theta), np.sin(theta)
    u = dx * c + dy * sn
    v = -dx * sn + dy * c
    rho2 = (u / a) ** 2 + (v / b) ** 2
    weight = np.where(rho2 <= 1.0, np.clip(1.0 - rho2, 0.0, 1.0) ** profile, 0.0)
    return weight.reshape(h, s, w, s).mean(axis=(1, 3))


def _snap(v):
    return np.round(v * _GRID) / _GRID


def render_tile(spec: SynthSpec, centers, labels, rng: np.random.Generator, tile_id: str = "") -> SynthTile:
    m = DEFAULT_STAIN.rows
    od = np.broadcast_to(np.asarray(spec.background_hed) @ m, (spec.height, spec.width, 3)).copy()
    boxes = []
    for (cx, cy), label in zip(centers, labels):
        style = spec.styles[CellType(label).name]
        a = rng.uniform(*style.major)
        b = min(rng.uniform(*style.minor), a)
        theta = rng.uniform(0.0, np.pi)
        hed = np.asarray(style.hed) + rng.uniform(-style.jitter, style.jitter, size=3)
        od_nuc = np.maximum(hed, 0.0) @ m
        ex = np.sqrt((a * np.cos(theta)) ** 2 + (b * np.sin(theta)) ** 2)
        ey = np.sqrt((a * np.sin(theta)) ** 2 + (b * np.cos(theta)) ** 2)
        x0, y0 = int(np.floor(cx - ex)), int(np.floor(cy - ey))
        x1, y1 = int(np.ceil(cx + ex)), int(np.ceil(cy + ey))
        wgt = _fill(cx, cy, a, b, theta, x0, y0, x1 - x0, y1 - y0, style.profile)
        region = od[y0:y1, x0:x1]
        region += wgt[..., None] * (od_nuc - region)
        boxes.append(BBox(_snap(cx - ex), _snap(cy - ey), _snap(cx + ex), _snap(cy + ey)))
    if spec.noise_od > 0:
        od += rng.normal(0.0, spec.noise_od, size=od.shape)
    image = od_to_rgb(od)
    return SynthTile(image, boxes, [CellType(l) for l in labels], tile_id)


def generate_tile(spec: SynthSpec = SynthSpec(), rng_seed=0, tile_id: str = "") -> SynthTile:
    """One tile with a uniformly drawn nuclei count and labels drawn from ``spec.class_mix``."""
    rng = np.random.default_rng(rng_seed)
    count = int(rng.integers(spec.count_range[0], spec.count_range[1] + 1))
    centers = place_centers(spec, count, rng)
    labels = rng.choice(N_CLASSES, size=count, p=_check_mix(spec.class_mix))
    return render_tile(spec, centers, labels, rng, tile_id)


def allocate_counts(mix, total: int) -> np.ndarray:
    """Largest-remainder split of ``total`` items according to ``mix``."""
    mix = _check_mix(mix)
    raw = mix * total
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[: total - counts.sum()]] += 1
    return counts


@dataclass
class SynthDataset:
    spec: SynthSpec
    seed: int
    tiles: list
    splits: dict        # split name -> list of tile ids
    patch_side: int = 200

    def tile_by_id(self) -> dict:
        return {t.tile_id: t for t in self.tiles}

    def patches(self, split: str | None = None) -> list[LabeledPatch]:
        ids = None if split is None else set(self.splits[split])
        out = []
        for t in self.tiles:
            if ids is not None and t.tile_id not in ids:
                continue
            for k, (c, lab) in enumerate(zip(t.gt_centers, t.gt_labels)):
                p = extract_patch(t.image, c, self.patch_side)
                out.append(LabeledPatch(p.pixels, CellType(lab), f"{t.tile_id}/{k}"))
        return out


def generate_dataset(spec: SynthSpec, n_tiles: int, class_mix=None, rng_seed=0,
                     split_fractions=(0.7, 0.15, 0.15), patch_side: int = 200) -> SynthDataset:
    """Tiles plus a tile-disjoint train/val/test split.

    Nuclei positions are drawn first; labels are then allocated to match
    ``class_mix`` as closely as integer counts allow.
    """
    mix = _check_mix(spec.class_mix if class_mix is None else class_mix)
    if n_tiles < 1:
        raise ValueError("n_tiles must be >= 1")
    root = np.random.SeedSequence(rng_seed)
    tile_rngs = [np.random.default_rng(s) for s in root.spawn(n_tiles)]
    layouts = []
    for rng in tile_rngs:
        count = int(rng.integers(spec.count_range[0], spec.count_range[1] + 1))
        layouts.append(place_centers(spec, count, rng))
    total = sum(len(l) for l in layouts)
    ds_rng = np.random.default_rng(root.spawn(1)[0])
    labels = np.repeat(np.arange(N_CLASSES), allocate_counts(mix, total))
    ds_rng.shuffle(labels)
    tiles, pos = [], 0
    for i, (rng, centers) in enumerate(zip(tile_rngs, layouts)):
        lab = labels[pos:pos + len(centers)]
        pos += len(centers)
        tiles.append(render_tile(spec, centers, lab, rng, f"tile_{i:04d}"))
    ids = [t.tile_id for t in tiles]
    order = ds_rng.permutation(n_tiles)
    fr = np.asarray(split_fractions, dtype=np.float64)
    cuts = np.floor(np.cumsum(fr / fr.sum()) * n_tiles + 1e-9).astype(int)
    names = ("train", "val", "test")
    splits, start = {}, 0
    for name, stop in zip(names, cuts):
        splits[name] = sorted(ids[j] for j in order[start:stop])
        start = stop
    return SynthDataset(spec, int(rng_seed), tiles, splits, patch_side)


def write_dataset(ds: SynthDataset, out_dir) -> Path:
    out = Path(out_dir)
    for t in ds.tiles:
        save_png(out / "tiles" / f"{t.tile_id}.png", t.image)
        write_json(out / "gt" / f"{t.tile_id}.json", t.gt_json())
    write_json(out / "dataset.json", {
        "spec": ds.spec.to_json(), "seed": ds.seed, "splits": ds.splits,
        "patch_side": ds.patch_side, "tiles": [t.tile_id for t in ds.tiles],
    })
    return out


def load_dataset(path) -> SynthDataset:
    root = Path(path)
    meta = read_json(root / "dataset.json")
    tiles = []
    for tid in meta["tiles"]:
        gt = read_json(root / "gt" / f"{tid}.json")
        tiles.append(SynthTile(load_png(root / "tiles" / f"{tid}.png"), boxes_from_json(gt),
                               [CellType.parse(g["label"]) for g in gt], tid))
    return SynthDataset(SynthSpec.from_json(meta["spec"]), meta["seed"], tiles, meta["splits"], meta["patch_side"])
