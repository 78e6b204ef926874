"""Tile-level orchestration: detect, crop, classify, summarise, draw."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .. import __version__
from ..classify import CLASS_NAMES, N_CLASSES, ensemble_predict_batch, load_backend
from ..detect import (BBox, Detection, DogParams, MatchConfig, detections_from_json, dog_detect, match_indices,
                      pr_curve)
from ..detect.evaluate import ap_from_curve
from ..embed import PALETTE
from ..imgcore import TileOffset, as_image, extract_patch, load_png, save_png
from ..jsonio import read_json, write_csv, write_json
from ..stain import DEFAULT_STAIN, StainMatrix

log = logging.getLogger(__name__)

DETECTORS = ("dog", "replay")
# keys that describe how a run executes rather than what it computes
EXECUTION_KEYS = ("jobs", "out")


@dataclass(frozen=True)
class PipelineConfig:
    detector: str = "dog"
    detections_dir: str | None = None
    backends: tuple[str, ...] = ()
    ensemble: bool = True
    stain: StainMatrix = DEFAULT_STAIN
    dog: DogParams = field(default_factory=DogParams)
    match: MatchConfig = field(default_factory=MatchConfig)
    patch_side: int = 200
    edge_fraction: float = 0.5
    seed: int = 0
    jobs: int = 1
    out: str = "run"

    def __post_init__(self):
        if self.detector not in DETECTORS:
            raise ValueError(f"detector must be one of {DETECTORS}, got {self.detector!r}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if self.patch_side < 2:
            raise ValueError("patch_side must be >= 2")

    def validate(self):
        """Check that every referenced file exists."""
        if not self.backends:
            raise ValueError("at least one classifier backend is required")
        missing = [p for p in self.backends if not Path(p).is_file()]
        if self.detector == "replay":
            if self.detections_dir is None:
                raise ValueError("replay detector needs detections_dir")
            if not Path(self.detections_dir).is_dir():
                missing.append(self.detections_dir)
        if missing:
            raise FileNotFoundError(f"missing pipeline inputs: {', '.join(missing)}")

    def to_json(self, execution: bool = True) -> dict:
        d = asdict(self)
        d["stain"] = self.stain.to_json()
        d["backends"] = list(self.backends)
        if not execution:
            for k in EXECUTION_KEYS:
                d.pop(k)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        if "stain" in d:
            d["stain"] = StainMatrix.from_json(d["stain"])
        if "dog" in d:
            d["dog"] = DogParams(**d["dog"])
        if "match" in d:
            d["match"] = MatchConfig(**d["match"])
        if "backends" in d:
            d["backends"] = tuple(d["backends"])
        return cls(**d)


@dataclass
class CellCall:
    box: BBox
    score: float
    label: int
    confidence: float
    edge: bool

    def to_json(self) -> dict:
        return {**self.box.to_json(), "score": self.score, "label": CLASS_NAMES[self.label],
                "confidence": self.confidence, "edge": self.edge}


def population_stats(labels) -> dict:
    """Per-class counts and percentages of all labelled cells."""
    labels = np.asarray(labels, dtype=int)
    counts = np.bincount(labels, minlength=N_CLASSES) if labels.size else np.zeros(N_CLASSES, dtype=int)
    n = int(labels.size)
    return {
        "n_detections": n,
        "counts": {name: int(c) for name, c in zip(CLASS_NAMES, counts)},
        "percentages": {} if n == 0 else {name: round(100.0 * int(c) / n, 4) for name, c in zip(CLASS_NAMES, counts)},
    }


@dataclass
class TileReport:
    tile_id: str
    cells: list[CellCall]
    offset: TileOffset | None = None
    tile_seed: int | None = None

    @property
    def stats(self) -> dict:
        s = population_stats([c.label for c in self.cells])
        s["n_edge"] = sum(c.edge for c in self.cells)
        return s

    def summary(self) -> list[str]:
        pct = self.stats["percentages"]
        return [f"{name}: {round(pct[name], 1):g}%" for name in CLASS_NAMES if name in pct]

    def to_json(self) -> dict:
        return {
            "tile_id": self.tile_id,
            "offset": None if self.offset is None else self.offset.to_json(),
            "tile_seed": self.tile_seed,
            "detections": [c.to_json() for c in self.cells],
            **self.stats,
        }


class Runtime:
    """Loaded detector and classifier backends, immutable after construction."""

    def __init__(self, cfg: PipelineConfig):
        cfg.validate()
        self.cfg = cfg
        self.backends = [load_backend(p) for p in cfg.backends]
        if not cfg.ensemble:
            self.backends = self.backends[:1]

    def detect(self, tile: np.ndarray, tile_id: str) -> list[Detection]:
        if self.cfg.detector == "dog":
            return dog_detect(tile, self.cfg.dog, self.cfg.stain, self.cfg.match)
        path = Path(self.cfg.detections_dir) / f"{tile_id}.json"
        if not path.is_file():
            raise FileNotFoundError(f"no recorded detections for tile {tile_id!r} at {path}")
        return detections_from_json(read_json(path))

    def classify(self, patches) -> tuple[np.ndarray, np.ndarray]:
        if not patches:
            return np.zeros(0, dtype=int), np.zeros(0)
        post = np.stack([np.asarray(b.predict_posteriors(patches), dtype=np.float64) for b in self.backends])
        return ensemble_predict_batch(post)


def draw_overlay(tile: np.ndarray, cells, width: int = 2) -> np.ndarray:
    """Class-coloured box outlines on a copy of the tile."""
    if not cells:
        return tile.copy()
    img = Image.fromarray(tile)
    draw = ImageDraw.Draw(img)
    for c in cells:
        b = c.box
        xy = [int(np.floor(b.x_min)), int(np.floor(b.y_min)), int(np.ceil(b.x_max)) - 1, int(np.ceil(b.y_max)) - 1]
        draw.rectangle(xy, outline=PALETTE[c.label], width=width)
    return np.asarray(img)


def run_tile(tile, cfg: PipelineConfig, runtime: Runtime | None = None, tile_id: str = "tile",
             offset: TileOffset | None = None, tile_seed: int | None = None) -> tuple[TileReport, np.ndarray]:
    """Detect nuclei, classify a patch around each box centre, and draw the overlay."""
    runtime = runtime or Runtime(cfg)
    tile = as_image(tile)
    dets = runtime.detect(tile, tile_id)
    patches = [extract_patch(tile, d.box.center, cfg.patch_side) for d in dets]
    labels, conf = runtime.classify([p.pixels for p in patches])
    cells = [CellCall(d.box, d.score, int(k), float(c), bool(p.padded_fraction > cfg.edge_fraction))
             for d, p, k, c in zip(dets, patches, labels, conf)]
    report = TileReport(tile_id, cells, offset, tile_seed)
    return report, draw_overlay(tile, cells)


def tile_seed(global_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(global_seed), int(index)]).generate_state(1)[0])


@dataclass
class RunManifest:
    config: dict
    seed: int
    tiles: list[dict]
    aggregate: dict
    evaluation: dict | None = None
    version: str = __version__
    timing: dict = field(default_factory=dict)

    @property
    def failed(self) -> list[dict]:
        return [t for t in self.tiles if t["status"] != "ok"]

    def to_json(self, timing: bool = True) -> dict:
        d = {"tool": "cellpheno", "version": self.version, "seed": self.seed, "config": self.config,
             "tiles": self.tiles, "aggregate": self.aggregate, "evaluation": self.evaluation}
        if timing:
            d["timing"] = self.timing
        return d


def strip_timing(manifest: dict) -> dict:
    return {k: v for k, v in manifest.items() if k != "timing"}


# -- worker plumbing ------------------------------------------------------------

_RUNTIME: Runtime | None = None


def _init_worker(cfg: PipelineConfig):
    global _RUNTIME
    _RUNTIME = Runtime(cfg)


def _process(job):
    index, tile_id, source, offset = job
    rt = _RUNTIME
    out = Path(rt.cfg.out)
    t0 = time.perf_counter()
    try:
        tile = load_png(source) if isinstance(source, (str, Path)) else as_image(source)
        report, overlay = run_tile(tile, rt.cfg, rt, tile_id, offset, tile_seed(rt.cfg.seed, index))
        write_json(out / "reports" / f"{tile_id}.json", report.to_json())
        save_png(out / "overlays" / f"{tile_id}.png", overlay)
        cells = [(c.box, c.score, c.label) for c in report.cells]
        return index, None, cells, report.stats, time.perf_counter() - t0
    except Exception as exc:  # fail-soft: one bad tile must not end the run
        log.warning("tile %s failed: %s", tile_id, exc)
        return index, f"{type(exc).__name__}: {exc}", None, None, time.perf_counter() - t0


def _aggregate(stats_list) -> dict:
    counts = np.zeros(N_CLASSES, dtype=int)
    for s in stats_list:
        counts += np.array([s["counts"][n] for n in CLASS_NAMES])
    agg = population_stats(np.repeat(np.arange(N_CLASSES), counts))
    agg["n_edge"] = int(sum(s["n_edge"] for s in stats_list))
    return agg


def evaluate_run(cells_by_tile: dict, gt: dict, cfg: MatchConfig) -> tuple[dict, object]:
    """Pooled detection AP and label agreement of GT-matched detections.

    ``gt`` maps tile id to ``(boxes, labels)``; tiles without GT are skipped.
    """
    per_image, agree, matched = [], 0, 0
    for tid, cells in cells_by_tile.items():
        if tid not in gt:
            continue
        boxes, labels = gt[tid]
        preds = [Detection(b, s) for b, s, _ in cells]
        per_image.append((preds, list(boxes)))
        m = match_indices(preds, list(boxes), cfg.iou_threshold)
        for (_, _, lab), g in zip(cells, m):
            if g >= 0:
                matched += 1
                agree += int(lab == int(labels[g]))
    curve = pr_curve(per_image, cfg)
    ev = {
        "iou_threshold": cfg.iou_threshold,
        "ap": ap_from_curve(curve),
        "n_gt": curve.n_gt,
        "n_detections": int(sum(len(p) for p, _ in per_image)),
        "n_matched": matched,
        "label_accuracy": agree / matched if matched else None,
    }
    return ev, curve


def run_dataset(tiles, cfg: PipelineConfig, tile_ids=None, offsets=None, gt: dict | None = None) -> RunManifest:
    """Process tiles independently and write reports, overlays and a manifest under ``cfg.out``.

    ``tiles`` are PNG paths or image arrays. Failed tiles are recorded and
    skipped. Results do not depend on ``cfg.jobs``.
    """
    tiles = list(tiles)
    if not tiles:
        raise ValueError("need at least one tile")
    if tile_ids is None:
        tile_ids = [Path(t).stem if isinstance(t, (str, Path)) else f"tile_{i:04d}" for i, t in enumerate(tiles)]
    if len(set(tile_ids)) != len(tile_ids):
        raise ValueError("tile ids must be unique")
    offsets = offsets or [None] * len(tiles)
    Runtime(cfg)  # fail on unloadable models before touching any tile
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(i, tid, src, off) for i, (tid, src, off) in enumerate(zip(tile_ids, tiles, offsets))]
    t0 = time.perf_counter()
    if cfg.jobs == 1:
        _init_worker(cfg)
        results = [_process(j) for j in jobs]
    else:
        with ProcessPoolExecutor(cfg.jobs, initializer=_init_worker, initargs=(cfg,)) as pool:
            results = list(pool.map(_process, jobs, chunksize=1))
    results.sort(key=lambda r: r[0])

    entries, stats, cells_by_tile, per_tile_time = [], [], {}, {}
    for (index, err, cells, st, dt), (_, tid, _, _) in zip(results, jobs):
        per_tile_time[tid] = dt
        if err is None:
            entries.append({"index": index, "tile_id": tid, "status": "ok",
                            "report": f"reports/{tid}.json", "overlay": f"overlays/{tid}.png"})
            stats.append(st)
            cells_by_tile[tid] = cells
        else:
            entries.append({"index": index, "tile_id": tid, "status": "error", "error": err})

    evaluation = None
    if gt is not None:
        evaluation, curve = evaluate_run(cells_by_tile, gt, cfg.match)
        write_csv(out / "pr_curve.csv", ["score", "precision", "recall"], curve.rows())
    manifest = RunManifest(cfg.to_json(execution=False), cfg.seed, entries, _aggregate(stats), evaluation,
                           timing={"total_s": time.perf_counter() - t0, "jobs": cfg.jobs, "per_tile_s": per_tile_time})
    write_json(out / "manifest.json", manifest.to_json())
    return manifest


def with_out(cfg: PipelineConfig, out) -> PipelineConfig:
    return replace(cfg, out=str(out))
