"""Central finite-difference oracle for TinyCnn gradients."""

import numpy as np

from cellpheno.classify.cnn import PARAM_NAMES, backward, forward, loss_and_grad_logits
from cellpheno.detect import FocalParams


def jitter_biases(model, seed=0, scale=0.1):
    """Non-zero biases keep pre-activations off the ReLU kink at exactly 0.

    With zero biases, a sample whose pooled features are all dropped out
    has a hidden pre-activation of exactly 0, where the loss is not
    differentiable and the two one-sided slopes differ.
    """
    rng = np.random.default_rng(seed)
    for name in PARAM_NAMES:
        if name.endswith("_b"):
            model.params[name] = rng.normal(0.0, scale, model.params[name].shape)
    return model


def relative_errors(model, x, labels, losses, dropout_seed=0, h=1e-5):
    """Per-loss, per-tensor ``||analytic - numeric|| / max(||analytic||, ||numeric||)``.

    ``losses`` maps a loss name to its focal parameters (None for defaults);
    every perturbed forward pass is shared by all losses.
    """
    losses = {k: v or FocalParams() for k, v in losses.items()}
    _, cache = forward(model, x, train=True, rng=dropout_seed)
    analytic = {k: backward(model, cache, labels, k, fp)[1] for k, fp in losses.items()}

    def values():
        probs, _ = forward(model, x, train=True, rng=dropout_seed)
        return np.array([loss_and_grad_logits(probs, labels, k, fp)[0] for k, fp in losses.items()])

    errs = {k: {} for k in losses}
    for name in PARAM_NAMES:
        p = model.params[name]
        num = np.zeros((len(losses),) + p.shape)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = values()
            p[idx] = old - h
            down = values()
            p[idx] = old
            num[(slice(None),) + idx] = (up - down) / (2 * h)
        for j, k in enumerate(losses):
            g = analytic[k][name]
            scale = max(np.linalg.norm(g), np.linalg.norm(num[j]), 1e-300)
            errs[k][name] = float(np.linalg.norm(g - num[j]) / scale)
    return errs
