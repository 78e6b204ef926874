"""Command-line entry point.

Global options go before the subcommand::

    cellpheno --seed 7 --out data synth --tiles 200
    cellpheno --seed 7 --out models --jobs 3 train data
    cellpheno --out run --jobs 4 run data --model models/member_0.cnn --model models/member_1.cnn
"""

from __future__ import annotations

import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from .classify import (CLASS_NAMES, ClassReport, CnnConfig, TrainConfig, classification_report,
                       confusion_from_rates, confusion_matrix, ensemble_predict_batch, load_backend, train_ensemble)
from .detect import (BBox, DogParams, FocalParams, MatchConfig, boxes_from_json, detections_from_json,
                     detections_to_json, dog_detect, map_over_thresholds, pr_curve)
from .embed import TsneConfig, read_embeddings_csv, silhouette, tsne, tsne_svg, write_embeddings_csv, write_tsne_csv
from .imgcore import ArtifactFilter, TileGrid, filter_tiles, load_png, save_png, split_tiles
from .jsonio import read_json, write_csv, write_json
from .pipeline import PipelineConfig, import_via_annotations, run_dataset
from .stain import DEFAULT_STAIN, StainMatrix, StainTransformConfig
from .synthgen import SynthSpec, generate_dataset, load_dataset, write_dataset

log = logging.getLogger("cellpheno")


def _section(ctx, name) -> dict:
    return dict(ctx.obj["config"].get(name, {}))


def _build(cls, d: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise click.BadParameter(f"unknown {cls.__name__} keys: {sorted(unknown)}", param_hint="--config")
    return cls(**d)


def _train_config(d: dict) -> TrainConfig:
    d = dict(d)
    if "focal" in d:
        d["focal"] = FocalParams(**d["focal"])
    if "stain" in d:
        d["stain"] = StainTransformConfig(**d["stain"])
    return _build(TrainConfig, d)


def _out(ctx) -> Path:
    out = Path(ctx.obj["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _tile_sources(path: Path):
    """Tile PNGs of a dataset directory or a plain directory, sorted by name."""
    root = path / "tiles" if (path / "tiles").is_dir() else path
    files = sorted(root.glob("*.png"))
    if not files:
        raise click.UsageError(f"no PNG tiles under {root}")
    return files


def _read_gt(path: Path) -> tuple[list[BBox], list]:
    doc = read_json(path)
    items = doc["boxes"] if isinstance(doc, dict) else doc
    return boxes_from_json(items), [g.get("label") for g in items]


@click.group()
@click.option("--seed", type=int, default=0, show_default=True, help="Global random seed.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON file with optional sections: synth, cnn, train, dog, match, pipeline, tsne.")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True, help="Worker processes.")
@click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True, help="Output directory.")
@click.option("-v", "--verbose", is_flag=True)
@click.version_option(__version__)
@click.pass_context
def main(ctx, seed, config_path, jobs, out, verbose):
    """Nucleus detection and cell-type classification for H&E tiles."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj.update(seed=seed, jobs=jobs, out=out, config=read_json(config_path) if config_path else {})


@main.command()
@click.option("--tiles", "n_tiles", type=click.IntRange(min=1), default=200, show_default=True)
@click.pass_context
def synth(ctx, n_tiles):
    """Generate a labelled synthetic tile dataset."""
    d = _section(ctx, "synth")
    spec = SynthSpec.from_json(d) if d else SynthSpec()
    ds = generate_dataset(spec, n_tiles, rng_seed=ctx.obj["seed"])
    out = write_dataset(ds, _out(ctx))
    n = sum(len(t.gt_labels) for t in ds.tiles)
    click.echo(f"wrote {n_tiles} tiles with {n} nuclei to {out}")


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--tile-width", type=int, default=1600, show_default=True)
@click.option("--tile-height", type=int, default=1200, show_default=True)
@click.option("--min-blur", type=float, default=50.0, show_default=True)
@click.option("--min-tissue", type=float, default=0.05, show_default=True)
@click.option("--keep-all", is_flag=True, help="Skip blur and background filtering.")
@click.pass_context
def tile(ctx, image, tile_width, tile_height, min_blur, min_tissue, keep_all):
    """Split a large image into fixed-size tiles and drop artifacts."""
    img = load_png(image)
    tiles = split_tiles(img, TileGrid(tile_width, tile_height))
    if keep_all:
        kept, rejected = tiles, []
    else:
        kept, rejected = filter_tiles(tiles, ArtifactFilter(min_blur, min_tissue))
    out = _out(ctx)
    stem = Path(image).stem
    index = []
    for off, t in kept:
        tid = f"{stem}_{off.x}_{off.y}"
        save_png(out / "tiles" / f"{tid}.png", t)
        index.append({"tile_id": tid, **off.to_json()})
    write_json(out / "tiles.json", {"source": str(image), "kept": index,
                                    "rejected": [{**off.to_json(), "reasons": why} for off, why in rejected]})
    click.echo(f"kept {len(kept)} of {len(tiles)} tiles")


def _detect_one(args):
    path, params, stain, match = args
    return dog_detect(load_png(path), params, stain, match)


@main.command()
@click.argument("tiles", type=click.Path(exists=True, file_okay=False))
@click.pass_context
def detect(ctx, tiles):
    """Run the DoG nucleus detector on every tile."""
    params = _build(DogParams, _section(ctx, "dog"))
    match = _build(MatchConfig, _section(ctx, "match"))
    stain = StainMatrix.from_json(ctx.obj["config"]["stain"]) if "stain" in ctx.obj["config"] else DEFAULT_STAIN
    files = _tile_sources(Path(tiles))
    jobs = [(f, params, stain, match) for f in files]
    if ctx.obj["jobs"] > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(ctx.obj["jobs"]) as pool:
            results = list(pool.map(_detect_one, jobs))
    else:
        results = [_detect_one(j) for j in jobs]
    out = _out(ctx)
    for f, dets in zip(files, results):
        write_json(out / "detections" / f"{f.stem}.json", detections_to_json(dets))
    click.echo(f"{sum(map(len, results))} detections in {len(files)} tiles")


@main.command("eval-map")
@click.argument("detections", type=click.Path(exists=True, file_okay=False))
@click.argument("gt", type=click.Path(exists=True, file_okay=False))
@click.option("--thresholds", default="0.05,0.25,0.35,0.5", show_default=True,
              help="Comma-separated detection score thresholds.")
@click.option("--iou", type=float, default=None, help="IoU for a true positive (default from config, 0.5).")
@click.option("--per-image-mean", is_flag=True, help="Average per-image AP instead of pooling.")
@click.pass_context
def eval_map(ctx, detections, gt, thresholds, iou, per_image_mean):
    """mAP at several score thresholds, plus the pooled PR curve."""
    match = _build(MatchConfig, _section(ctx, "match"))
    if iou is not None:
        match = replace(match, iou_threshold=iou)
    thr = [float(t) for t in thresholds.split(",")]
    gt_dir = Path(gt) / "gt" if (Path(gt) / "gt").is_dir() else Path(gt)
    per_image = []
    for f in sorted(Path(detections).glob("*.json")):
        g = gt_dir / f.name
        if not g.is_file():
            raise click.UsageError(f"no ground truth for {f.name} in {gt_dir}")
        per_image.append((detections_from_json(read_json(f)), _read_gt(g)[0]))
    if not per_image:
        raise click.UsageError(f"no detection files in {detections}")
    values = map_over_thresholds(per_image, thr, match, per_image_mean=per_image_mean)
    out = _out(ctx)
    write_csv(out / "pr_curve.csv", ["score", "precision", "recall"], pr_curve(per_image, match).rows())
    write_json(out / "map.json", {"iou_threshold": match.iou_threshold, "per_image_mean": per_image_mean,
                                  "rows": [{"threshold": t, "map": v} for t, v in values]})
    click.echo("threshold  mAP")
    for t, v in values:
        click.echo(f"{t:9.2f}  {v:.4f}")


@main.command("train")
@click.argument("dataset", type=click.Path(exists=True, file_okay=False))
@click.option("--members", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--epochs", type=click.IntRange(min=1), default=None, help="Override the configured epoch count.")
@click.pass_context
def train_cmd(ctx, dataset, members, epochs):
    """Train an ensemble of small CNNs on a synthetic dataset's train/val split."""
    ds = load_dataset(dataset)
    cfg = _train_config(_section(ctx, "train"))
    if epochs is not None:
        cfg = replace(cfg, epochs=epochs)
    cnn_d = _section(ctx, "cnn")
    if "widths" in cnn_d:
        cnn_d["widths"] = tuple(cnn_d["widths"])
    cnn = _build(CnnConfig, cnn_d)
    results = train_ensemble(ds.patches("train"), ds.patches("val"), cfg, members, ctx.obj["seed"],
                             ctx.obj["jobs"], cnn)
    out = _out(ctx)
    summary = {"seed": ctx.obj["seed"], "train": cfg.to_json(), "members": []}
    for k, (model, history) in enumerate(results):
        path = model.save(out / f"member_{k}.cnn", {"member": k})
        best = max(h["val_acc"] for h in history)
        summary["members"].append({"path": path.name, "widths": list(model.config.widths), "best_val_acc": best,
                                   "history": history})
        click.echo(f"member {k} widths={model.config.widths} best val acc {best:.4f}")
    write_json(out / "training.json", summary)


def _patch_inputs(path: Path, split: str):
    """(ids, pixels, labels-or-None) from a dataset split or a folder of patch PNGs."""
    if (path / "dataset.json").is_file():
        data = load_dataset(path).patches(split)
        return [d.source_id for d in data], [d.pixels for d in data], [int(d.label) for d in data]
    files = sorted(path.glob("*.png"))
    if not files:
        raise click.UsageError(f"{path} is neither a dataset nor a folder of PNG patches")
    return [f.stem for f in files], [load_png(f) for f in files], None


model_option = click.option("--model", "models", multiple=True, required=True, type=click.Path(exists=True),
                            help="Classifier bundle (repeat for an ensemble).")
split_option = click.option("--split", default="test", show_default=True, type=click.Choice(["train", "val", "test"]))


@main.command()
@click.argument("patches", type=click.Path(exists=True, file_okay=False))
@model_option
@split_option
@click.pass_context
def classify(ctx, patches, models, split):
    """Classify patches with one model or a max-posterior ensemble."""
    ids, pixels, labels = _patch_inputs(Path(patches), split)
    backends = [load_backend(m) for m in models]
    post = np.stack([b.predict_posteriors(pixels) for b in backends])
    pred, conf = ensemble_predict_batch(post)
    doc = {"models": [str(m) for m in models], "split": split, "ids": ids,
           "predicted": [CLASS_NAMES[k] for k in pred], "confidence": conf.tolist(),
           "members": [[CLASS_NAMES[k] for k in p.argmax(axis=1)] for p in post]}
    if labels is not None:
        y = np.asarray(labels)
        doc["true"] = [CLASS_NAMES[k] for k in y]
        doc["accuracy"] = {"ensemble": float(np.mean(pred == y)) if len(y) else None,
                           "members": [float(np.mean(p.argmax(axis=1) == y)) if len(y) else None for p in post]}
        click.echo(f"ensemble accuracy {doc['accuracy']['ensemble']:.4f}; members "
                   + " ".join(f"{a:.4f}" for a in doc["accuracy"]["members"]))
    write_json(_out(ctx) / "predictions.json", doc)


@main.command()
@click.argument("predictions", type=click.Path(exists=True, dir_okay=False))
@click.option("--rates", is_flag=True,
              help="Input holds per-class precision/recall/support instead of predictions.")
@click.pass_context
def report(ctx, predictions, rates):
    """Per-class precision, recall and F measure."""
    doc = read_json(predictions)
    if rates:
        try:
            cm = confusion_from_rates(doc["precision"], doc["recall"], doc["support"])
        except ValueError as exc:
            raise click.ClickException(str(exc)) from None
    else:
        if "true" not in doc:
            raise click.UsageError("predictions file has no true labels")
        idx = {n: i for i, n in enumerate(CLASS_NAMES)}
        cm = confusion_matrix([idx[t] for t in doc["true"]], [idx[p] for p in doc["predicted"]])
    rep: ClassReport = classification_report(cm)
    write_json(_out(ctx) / "report.json", {**rep.to_json(), "confusion": cm.tolist()})
    click.echo(rep.table())


@main.command()
@click.argument("patches", type=click.Path(exists=True, file_okay=False))
@model_option
@split_option
@click.pass_context
def embed(ctx, patches, models, split):
    """Concatenated hidden-layer activations of the ensemble members."""
    ids, pixels, labels = _patch_inputs(Path(patches), split)
    emb = np.concatenate([load_backend(m).embed(pixels) for m in models], axis=1)
    names = None if labels is None else [CLASS_NAMES[k] for k in labels]
    path = write_embeddings_csv(_out(ctx) / "embeddings.csv", ids, emb, names)
    click.echo(f"{emb.shape[0]} x {emb.shape[1]} embedding written to {path}")


@main.command("tsne")
@click.argument("embeddings", type=click.Path(exists=True, dir_okay=False))
@click.option("--perplexity", type=float, default=None)
@click.option("--iterations", type=int, default=None)
@click.pass_context
def tsne_cmd(ctx, embeddings, perplexity, iterations):
    """Two-dimensional t-SNE map of an embeddings CSV."""
    d = _section(ctx, "tsne")
    d.setdefault("seed", ctx.obj["seed"])
    if perplexity is not None:
        d["perplexity"] = perplexity
    if iterations is not None:
        d["iterations"] = iterations
    cfg = _build(TsneConfig, d)
    ids, x, labels = read_embeddings_csv(embeddings)
    res = tsne(x, cfg)
    labels = labels or ["?"] * len(ids)
    out = _out(ctx)
    write_tsne_csv(out / "tsne.csv", ids, res.embedding, labels)
    (out / "tsne.svg").write_text(tsne_svg(res.embedding, labels, list(CLASS_NAMES)))
    summary = {"config": asdict(cfg), "perplexity_used": res.perplexity, "initial_kl": res.initial_kl, "kl": res.kl}
    if len(set(labels)) > 1:
        summary["silhouette"] = silhouette(res.embedding, labels)
    write_json(out / "tsne.json", summary)
    click.echo(f"KL {res.initial_kl:.4f} -> {res.kl:.4f}")


@main.command()
@click.argument("tiles", type=click.Path(exists=True, file_okay=False))
@click.option("--model", "models", multiple=True, type=click.Path(exists=True),
              help="Classifier bundle (repeat for an ensemble); defaults to the configured backends.")
@click.option("--detector", type=click.Choice(["dog", "replay"]), default=None)
@click.option("--detections", type=click.Path(exists=True, file_okay=False), help="Recorded detections for replay.")
@click.option("--no-ensemble", is_flag=True, help="Use only the first model.")
@click.pass_context
def run(ctx, tiles, models, detector, detections, no_ensemble):
    """Full pipeline: detect, classify, summarise and draw overlays.

    TILES is a dataset directory (scored against its ground truth) or a
    folder of PNG tiles.
    """
    d = _section(ctx, "pipeline")
    for key in ("dog", "match", "stain"):
        if key in ctx.obj["config"] and key not in d:
            d[key] = ctx.obj["config"][key]
    d.update(seed=ctx.obj["seed"], jobs=ctx.obj["jobs"], out=str(ctx.obj["out"]))
    if models:
        d["backends"] = [str(m) for m in models]
    if detector:
        d["detector"] = detector
    if detections:
        d["detections_dir"] = str(detections)
    if no_ensemble:
        d["ensemble"] = False
    try:
        cfg = PipelineConfig.from_json(d)
        cfg.validate()
    except (ValueError, FileNotFoundError) as exc:
        raise click.UsageError(str(exc)) from None
    root = Path(tiles)
    files = _tile_sources(root)
    gt = None
    if (root / "gt").is_dir():
        gt = {}
        for f in files:
            g = root / "gt" / f"{f.stem}.json"
            if g.is_file():
                boxes, labels = _read_gt(g)
                gt[f.stem] = (boxes, [CLASS_NAMES.index(lab) if lab in CLASS_NAMES else -1 for lab in labels])
    manifest = run_dataset(files, cfg, gt=gt)
    agg = manifest.aggregate
    click.echo(f"{agg['n_detections']} nuclei in {len(files)} tiles: "
               + ", ".join(f"{k} {v:g}%" for k, v in agg["percentages"].items()))
    if manifest.evaluation:
        ev = manifest.evaluation
        acc = "n/a" if ev["label_accuracy"] is None else f"{ev['label_accuracy']:.4f}"
        click.echo(f"AP@{ev['iou_threshold']:g} {ev['ap']:.4f}; label accuracy of matched detections {acc}")
    if manifest.failed:
        click.echo(f"{len(manifest.failed)} tile(s) failed; see manifest.json", err=True)
        ctx.exit(1)


@main.command("import-via")
@click.argument("annotations", type=click.Path(exists=True, dir_okay=False))
@click.option("--label-key", default="label", show_default=True, help="Region attribute holding the class.")
@click.pass_context
def import_via(ctx, annotations, label_key):
    """Convert VIA annotations into per-image ground-truth JSON."""
    try:
        images = import_via_annotations(annotations, label_key)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from None
    out = _out(ctx)
    for name, img in images.items():
        write_json(out / "gt" / f"{Path(name).stem}.json", img.to_json())
    click.echo(f"imported {len(images)} image(s)")


if __name__ == "__main__":
    sys.exit(main())
