"""Max-posterior ensembling: trust the single most confident member."""

from __future__ import annotations

import numpy as np

from .data import CellType


def _check_rows(rows):
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("need at least one member posterior row")
    if np.any(rows < 0) or np.any(rows > 1) or not np.allclose(rows.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("member rows must be probability vectors")


def ensemble_predict(members) -> tuple[CellType, float]:
    """Class and value of the largest posterior over all members and classes.

    Ties resolve to the lower member index, then the lower class index.
    """
    rows = np.asarray(members, dtype=np.float64)
    _check_rows(rows)
    flat = int(np.argmax(rows))  # row-major: member first, then class
    m, c = divmod(flat, rows.shape[1])
    return CellType(c), float(rows[m, c])


def ensemble_predict_batch(posteriors) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`ensemble_predict` over ``(members, N, K)`` posteriors."""
    post = np.asarray(posteriors, dtype=np.float64)
    if post.ndim != 3 or post.shape[0] == 0:
        raise ValueError("expected (members, N, K) posteriors with at least one member")
    m, n, k = post.shape
    flat = post.transpose(1, 0, 2).reshape(n, m * k)
    idx = flat.argmax(axis=1)
    return idx % k, flat[np.arange(n), idx]
