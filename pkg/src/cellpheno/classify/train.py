"""Mini-batch SGD training with run-time augmentation and best-validation model selection."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..detect.focal import FocalParams
from ..imgcore import augment_geometric, random_geometric_spec, resize_bilinear
from ..stain import StainTransformConfig, stain_transform
from .cnn import CnnConfig, TinyCnn, backward, forward, to_input
from .data import balance_bootstrap, balance_downsample, class_weights

log = logging.getLogger(__name__)

BALANCE_MODES = ("bootstrap", "downsample", "weights", "none")


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, step: int):
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 85
    lr: float = 0.01
    momentum: float = 0.9
    balance: str = "bootstrap"
    augment: bool = True
    loss: str = "cross_entropy"
    focal: FocalParams = field(default_factory=FocalParams)
    max_shear: float = 0.2
    stain: StainTransformConfig = field(default_factory=StainTransformConfig)

    def __post_init__(self):
        if self.balance not in BALANCE_MODES:
            raise ValueError(f"balance must be one of {BALANCE_MODES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    def to_json(self) -> dict:
        return asdict(self)


def _augment(img, cfg: TrainConfig, rng):
    img = augment_geometric(img, random_geometric_spec(rng, cfg.max_shear), cfg.max_shear)
    return stain_transform(img, cfg.stain, rng)


def accuracy(model: TinyCnn, images: np.ndarray, labels: np.ndarray, batch_size: int = 256) -> float:
    if len(labels) == 0:
        return 0.0
    probs = model._batched(to_input(images), batch_size)[0]
    return float(np.mean(probs.argmax(axis=1) == labels))


def train(model: TinyCnn, train_data, val_data, cfg: TrainConfig = TrainConfig(), rng_seed=0):
    """Train a copy of ``model``; return the best-validation copy and the per-epoch history.

    Patches are resized to the model input once; augmentation then runs at
    model resolution on every draw.
    """
    if not train_data or not val_data:
        raise ValueError("training and validation sets must be non-empty")
    rng = np.random.default_rng(rng_seed)
    if cfg.balance == "bootstrap":
        train_data = balance_bootstrap(train_data, rng)
    elif cfg.balance == "downsample":
        train_data = balance_downsample(train_data, rng)
    weights = class_weights(train_data) if cfg.balance == "weights" else None

    s = model.config.input_size
    x_train = np.stack([resize_bilinear(d.pixels, s) for d in train_data])
    y_train = np.array([int(d.label) for d in train_data])
    x_val = np.stack([resize_bilinear(d.pixels, s) for d in val_data])
    y_val = np.array([int(d.label) for d in val_data])

    model = model.copy()
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    best, best_acc = model.copy(), accuracy(model, x_val, y_val)
    history = [{"epoch": 0, "loss": None, "train_acc": None, "val_acc": best_acc}]
    n = len(y_train)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        losses, correct = [], 0
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            batch = x_train[idx]
            if cfg.augment:
                batch = np.stack([_augment(img, cfg, rng) for img in batch])
            probs, cache = forward(model, to_input(batch), train=True, rng=rng)
            sw = None if weights is None else weights[y_train[idx]]
            value, grads = backward(model, cache, y_train[idx], cfg.loss, cfg.focal, sw)
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, step)
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is caught by check_finite
                for k, g in grads.items():
                    velocity[k] = cfg.momentum * velocity[k] - cfg.lr * g
                    model.params[k] += velocity[k]
            losses.append(value * len(idx))
            correct += int(np.sum(probs.argmax(axis=1) == y_train[idx]))
        try:
            model.check_finite()
        except FloatingPointError:
            raise TrainingDiverged(epoch, step) from None
        val_acc = accuracy(model, x_val, y_val)
        history.append({"epoch": epoch, "loss": float(np.sum(losses) / n), "train_acc": correct / n,
                        "val_acc": val_acc})
        log.info("epoch %d loss %.4f val_acc %.4f", epoch, history[-1]["loss"], val_acc)
        if val_acc > best_acc:
            best, best_acc = model.copy(), val_acc
    return best, history


# members differ in width, initialisation and bootstrap draw
MEMBER_WIDTHS = ((8, 16), (12, 24), (8, 16))


def member_seeds(seed: int, k: int) -> tuple[int, int]:
    """Independent (init, training) seeds for ensemble member ``k``."""
    a, b = np.random.SeedSequence([int(seed), int(k)]).generate_state(2)
    return int(a), int(b)


def _train_member(args):
    k, train_data, val_data, cfg, cnn, seed = args
    init_seed, train_seed = member_seeds(seed, k)
    model = TinyCnn.init(cnn, init_seed)
    return train(model, train_data, val_data, cfg, train_seed)


def train_ensemble(train_data, val_data, cfg: TrainConfig = TrainConfig(), n_members: int = 3, seed: int = 0,
                   jobs: int = 1, cnn: CnnConfig = CnnConfig()):
    """Train ``n_members`` networks; widths cycle through :data:`MEMBER_WIDTHS`.

    Returns ``[(model, history), ...]``, identical for any ``jobs``.
    """
    tasks = [(k, train_data, val_data, cfg, replace(cnn, widths=MEMBER_WIDTHS[k % len(MEMBER_WIDTHS)]), seed)
             for k in range(n_members)]
    if jobs == 1 or n_members == 1:
        return [_train_member(t) for t in tasks]
    with ProcessPoolExecutor(min(jobs, n_members)) as pool:
        return list(pool.map(_train_member, tasks))
