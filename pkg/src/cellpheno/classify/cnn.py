"""A small numpy CNN with hand-written backpropagation.

Architecture (NCHW, float64)::

    conv3x3(w1) + ReLU -> maxpool 2 -> conv3x3(w2) + ReLU -> maxpool 2
    -> global max pool -> dropout -> dense 128 + ReLU -> dropout -> dense 5 -> softmax

Convolutions use zero padding 1 so spatial size is only reduced by pooling.
Dropout is inverted (scaled at train time), so inference needs no rescaling.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..bundle import read_bundle, write_bundle
from ..detect.focal import EPS, FocalParams, softmax_focal
from ..imgcore import resize_bilinear
from .data import N_CLASSES

PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b")
BUNDLE_KIND = "tinycnn"


@dataclass(frozen=True)
class CnnConfig:
    widths: tuple[int, int] = (8, 16)
    hidden: int = 128
    n_classes: int = N_CLASSES
    input_size: int = 32
    dropout: float = 0.5

    def __post_init__(self):
        if self.input_size % 4:
            raise ValueError("input_size must be divisible by 4")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class TinyCnn:
    config: CnnConfig = field(default_factory=CnnConfig)
    params: dict = field(default_factory=dict)
    seed: int | None = None

    @classmethod
    def init(cls, config: CnnConfig = CnnConfig(), seed=0, zero_output: bool = False) -> "TinyCnn":
        """He-normal init for ReLU layers, Glorot for the output layer, zero biases."""
        rng = np.random.default_rng(seed)
        f1, f2 = config.widths
        h, k = config.hidden, config.n_classes
        p = {
            "conv1_w": rng.normal(0, np.sqrt(2.0 / 27), (f1, 3, 3, 3)),
            "conv1_b": np.zeros(f1),
            "conv2_w": rng.normal(0, np.sqrt(2.0 / (9 * f1)), (f2, f1, 3, 3)),
            "conv2_b": np.zeros(f2),
            "fc1_w": rng.normal(0, np.sqrt(2.0 / f2), (f2, h)),
            "fc1_b": np.zeros(h),
            "fc2_w": np.zeros((h, k)) if zero_output else rng.normal(0, np.sqrt(2.0 / (h + k)), (h, k)),
            "fc2_b": np.zeros(k),
        }
        return cls(config, p, seed if isinstance(seed, int) else None)

    def copy(self) -> "TinyCnn":
        return TinyCnn(self.config, {k: v.copy() for k, v in self.params.items()}, self.seed)

    def check_finite(self):
        for name, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"parameter {name} has non-finite values")

    # -- backend interface -------------------------------------------------
    def prepare(self, patches) -> np.ndarray:
        """uint8 ``(N, S, S, 3)`` patches -> float ``(N, 3, s, s)`` network input."""
        s = self.config.input_size
        arr = np.stack([resize_bilinear(p, s) for p in patches]) if len(patches) else np.zeros((0, s, s, 3))
        return to_input(arr)

    def predict_posteriors(self, patches, batch_size: int = 256) -> np.ndarray:
        x = self.prepare(patches)
        return self._batched(x, batch_size)[0]

    def embed(self, patches, batch_size: int = 256) -> np.ndarray:
        x = self.prepare(patches)
        return self._batched(x, batch_size)[1]

    def _batched(self, x, batch_size):
        probs, emb = [np.zeros((0, self.config.n_classes))], [np.zeros((0, self.config.hidden))]
        for i in range(0, len(x), batch_size):
            p, cache = forward(self, x[i:i + batch_size], train=False)
            probs.append(p)
            emb.append(cache["hidden"])
        return np.concatenate(probs), np.concatenate(emb)

    # -- persistence -------------------------------------------------------
    def save(self, path, extra_meta: dict | None = None):
        meta = {"config": asdict(self.config), "seed": self.seed, **(extra_meta or {})}
        return write_bundle(path, BUNDLE_KIND, meta, {k: self.params[k] for k in PARAM_NAMES})

    @classmethod
    def load(cls, path) -> "TinyCnn":
        _, meta, arrays = read_bundle(path, BUNDLE_KIND)
        cfg = meta["config"]
        cfg["widths"] = tuple(cfg["widths"])
        model = cls(CnnConfig(**cfg), {k: arrays[k] for k in PARAM_NAMES}, meta.get("seed"))
        model.check_finite()
        return model


def to_input(images: np.ndarray) -> np.ndarray:
    """uint8 NHWC -> float NCHW in [0, 1] with white mapped to 0.

    Stain absorbs light, so inverting makes tissue the high-valued signal
    and lets max pooling pick nuclei instead of bright background.
    """
    return 1.0 - np.asarray(images, dtype=np.float64).transpose(0, 3, 1, 2) / 255.0


# -- layers ------------------------------------------------------------------

def _im2col(x):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (n, c, h, w, 3, 3)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def conv_forward(x, w, b):
    n, _, h, wd = x.shape
    cols = _im2col(x)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(n, h, wd, -1).transpose(0, 3, 1, 2), cols


def conv_backward(dout, x_shape, cols, w, need_dx=True):
    n, c, h, wd = x_shape
    f = w.shape[0]
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (dmat.T @ cols).reshape(w.shape)
    db = dmat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dmat @ w.reshape(f, -1)).reshape(n, h, wd, c, 3, 3)
    dxp = np.zeros((n, c, h + 2, wd + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dw, db


def maxpool_forward(x):
    n, c, h, w = x.shape
    r = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = r.argmax(axis=-1)
    return np.take_along_axis(r, idx[..., None], axis=-1)[..., 0], idx


def maxpool_backward(dout, idx, x_shape):
    n, c, h, w = x_shape
    dr = np.zeros((n, c, h // 2, w // 2, 4))
    np.put_along_axis(dr, idx[..., None], dout[..., None], axis=-1)
    return dr.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _dropout_mask(rng, shape, rate):
    if rate == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward(model: TinyCnn, x: np.ndarray, train: bool = False, rng=None):
    """Posteriors ``(N, K)`` and the activation cache.

    In train mode dropout masks are drawn from ``rng`` (seed or Generator).
    """
    model.check_finite()
    p = model.params
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected (N, 3, H, W) input, got {x.shape}")
    if x.shape[2] % 4 or x.shape[3] % 4:
        raise ValueError("spatial size must be divisible by 4")
    cache = {"x_shape": x.shape, "train": train}
    z1, cache["cols1"] = conv_forward(x, p["conv1_w"], p["conv1_b"])
    a1 = np.maximum(z1, 0.0)
    p1, cache["pool1"] = maxpool_forward(a1)
    z2, cache["cols2"] = conv_forward(p1, p["conv2_w"], p["conv2_b"])
    a2 = np.maximum(z2, 0.0)
    p2, cache["pool2"] = maxpool_forward(a2)
    n, c = p2.shape[:2]
    flat = p2.reshape(n, c, -1)
    gidx = flat.argmax(axis=-1)
    g = np.take_along_axis(flat, gidx[..., None], axis=-1)[..., 0]
    rate = model.config.dropout if train else 0.0
    gen = np.random.default_rng(rng) if train else None
    m1 = _dropout_mask(gen, g.shape, rate)
    d1 = g * m1
    hpre = d1 @ p["fc1_w"] + p["fc1_b"]
    hidden = np.maximum(hpre, 0.0)
    m2 = _dropout_mask(gen, hidden.shape, rate)
    d2 = hidden * m2
    logits = d2 @ p["fc2_w"] + p["fc2_b"]
    probs = softmax(logits)
    cache.update(z1=z1, a1_shape=a1.shape, p1=p1, z2=z2, a2_shape=a2.shape, p2_shape=p2.shape, gidx=gidx,
                 m1=m1, d1=d1, hpre=hpre, hidden=hidden, m2=m2, d2=d2, probs=probs)
    return probs, cache


def loss_and_grad_logits(probs, labels, loss: str = "cross_entropy", focal: FocalParams = FocalParams(),
                         sample_weights=None):
    """Mean (optionally weighted) batch loss and its gradient w.r.t. the logits."""
    n = probs.shape[0]
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if loss == "cross_entropy":
        per = -np.log(np.clip(probs[np.arange(n), labels], EPS, 1.0))
        dlog = probs.copy()
        dlog[np.arange(n), labels] -= 1.0
    elif loss == "focal":
        per, dlog = softmax_focal(probs, labels, focal)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    return float(np.sum(w * per) / n), dlog * (w / n)[:, None]


def backward(model: TinyCnn, cache: dict, labels, loss: str = "cross_entropy",
             focal: FocalParams = FocalParams(), sample_weights=None):
    """Mean batch loss and gradients for every parameter."""
    p = model.params
    value, dlogits = loss_and_grad_logits(cache["probs"], labels, loss, focal, sample_weights)
    grads = {}
    grads["fc2_w"] = cache["d2"].T @ dlogits
    grads["fc2_b"] = dlogits.sum(axis=0)
    dd2 = dlogits @ p["fc2_w"].T
    dh = dd2 * cache["m2"] * (cache["hpre"] > 0)
    grads["fc1_w"] = cache["d1"].T @ dh
    grads["fc1_b"] = dh.sum(axis=0)
    dg = (dh @ p["fc1_w"].T) * cache["m1"]
    n, c, hh, ww = cache["p2_shape"]
    dflat = np.zeros((n, c, hh * ww))
    np.put_along_axis(dflat, cache["gidx"][..., None], dg[..., None], axis=-1)
    dp2 = dflat.reshape(n, c, hh, ww)
    da2 = maxpool_backward(dp2, cache["pool2"], cache["a2_shape"])
    dz2 = da2 * (cache["z2"] > 0)
    dp1, grads["conv2_w"], grads["conv2_b"] = conv_backward(dz2, cache["p1"].shape, cache["cols2"], p["conv2_w"])
    da1 = maxpool_backward(dp1, cache["pool1"], cache["a1_shape"])
    dz1 = da1 * (cache["z1"] > 0)
    _, grads["conv1_w"], grads["conv1_b"] = conv_backward(dz1, cache["x_shape"], cache["cols1"],
                                                          p["conv1_w"], need_dx=False)
    return value, grads


def batch_loss(model: TinyCnn, x, labels, loss="cross_entropy", focal=FocalParams(), rng=0,
               train=True, sample_weights=None) -> float:
    probs, _ = forward(model, x, train=train, rng=rng)
    return loss_and_grad_logits(probs, labels, loss, focal, sample_weights)[0]
