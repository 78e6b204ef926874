"""End-to-end tile processing, run manifests and annotation import."""

from .core import (PipelineConfig, Runtime, RunManifest, TileReport, draw_overlay, evaluate_run, population_stats,
                   run_dataset, run_tile, strip_timing, tile_seed)
from .via import ViaFormatError, ViaImage, export_via, import_via_annotations, parse_via

__all__ = [
    "PipelineConfig", "Runtime", "RunManifest", "TileReport", "draw_overlay", "evaluate_run", "population_stats",
    "run_dataset", "run_tile", "strip_timing", "tile_seed", "ViaFormatError", "ViaImage", "export_via",
    "import_via_annotations", "parse_via",
]
