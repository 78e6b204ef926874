"""Compare class-balancing strategies for the patch classifier.

Builds an imbalanced synthetic dataset whose class proportions follow the
curated counts (1359, 2577, 478, 1576, 1539), trains one TinyCnn per
strategy and prints best validation accuracy and per-class recall.
"""

import argparse
from dataclasses import replace

import numpy as np

from cellpheno.classify import CLASS_NAMES, TinyCnn, TrainConfig, class_counts, train
from cellpheno.classify.train import accuracy
from cellpheno.imgcore import resize_bilinear
from cellpheno.synthgen import SynthSpec, generate_dataset

COUNTS = np.array([1359, 2577, 478, 1576, 1539])


def recall_per_class(model, data):
    s = model.config.input_size
    x = np.stack([resize_bilinear(d.pixels, s) for d in data])
    y = np.array([int(d.label) for d in data])
    pred = model.predict_posteriors(x).argmax(axis=1)
    return [float(np.mean(pred[y == k] == k)) if np.any(y == k) else float("nan") for k in range(len(CLASS_NAMES))]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tiles", type=int, default=120)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--modes", default="bootstrap,downsample,weights,none")
    args = ap.parse_args()

    ds = generate_dataset(SynthSpec(), args.tiles, class_mix=tuple(COUNTS / COUNTS.sum()), rng_seed=args.seed)
    tr, va = ds.patches("train"), ds.patches("val")
    print("train counts", dict(zip(CLASS_NAMES, class_counts(tr).tolist())))
    print(f"{'mode':>10}  {'val acc':>7}  " + "  ".join(f"{n:>5}" for n in CLASS_NAMES))
    for mode in args.modes.split(","):
        cfg = replace(TrainConfig(), epochs=args.epochs, balance=mode)
        model, history = train(TinyCnn.init(seed=args.seed), tr, va, cfg, rng_seed=args.seed)
        s = model.config.input_size
        acc = accuracy(model, np.stack([resize_bilinear(d.pixels, s) for d in va]),
                       np.array([int(d.label) for d in va]))
        rec = recall_per_class(model, va)
        print(f"{mode:>10}  {acc:7.4f}  " + "  ".join(f"{r:5.2f}" for r in rec))


if __name__ == "__main__":
    main()
