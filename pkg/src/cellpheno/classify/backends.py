"""Classifier backends: anything with ``predict_posteriors`` and ``embed`` over uint8 patches."""

from __future__ import annotations

import hashlib
from typing import Protocol

import numpy as np

from ..bundle import read_bundle, write_bundle
from .cnn import BUNDLE_KIND as CNN_KIND
from .cnn import TinyCnn

REPLAY_KIND = "replay"


class Backend(Protocol):
    def predict_posteriors(self, patches) -> np.ndarray: ...

    def embed(self, patches) -> np.ndarray: ...


def patch_key(patch: np.ndarray) -> str:
    patch = np.ascontiguousarray(patch, dtype=np.uint8)
    h = hashlib.sha1(repr(patch.shape).encode())
    h.update(patch.tobytes())
    return h.hexdigest()


class ReplayBackend:
    """Replays stored posteriors and embeddings, looked up by patch content hash."""

    def __init__(self, keys, posteriors, embeddings):
        self.keys = list(keys)
        self.posteriors = np.asarray(posteriors, dtype=np.float64)
        self.embeddings = np.asarray(embeddings, dtype=np.float64)
        if not (len(self.keys) == len(self.posteriors) == len(self.embeddings)):
            raise ValueError("keys, posteriors and embeddings must have equal length")
        self._index = {k: i for i, k in enumerate(self.keys)}

    @classmethod
    def record(cls, backend: Backend, patches) -> "ReplayBackend":
        return cls([patch_key(p) for p in patches], backend.predict_posteriors(patches), backend.embed(patches))

    def _rows(self, patches):
        try:
            return [self._index[patch_key(p)] for p in patches]
        except KeyError:
            raise KeyError("patch not present in replay file") from None

    def predict_posteriors(self, patches) -> np.ndarray:
        return self.posteriors[self._rows(patches)]

    def embed(self, patches) -> np.ndarray:
        return self.embeddings[self._rows(patches)]

    def save(self, path):
        # raw uint8 rows: fixed-width byte strings would drop trailing NULs
        keys = np.frombuffer(b"".join(bytes.fromhex(k) for k in self.keys), np.uint8).reshape(len(self.keys), 20)
        return write_bundle(path, REPLAY_KIND, {"count": len(self.keys)},
                            {"keys": keys, "posteriors": self.posteriors, "embeddings": self.embeddings})

    @classmethod
    def load(cls, path) -> "ReplayBackend":
        _, _, arrays = read_bundle(path, REPLAY_KIND)
        return cls([bytes(k).hex() for k in arrays["keys"]], arrays["posteriors"], arrays["embeddings"])


def load_backend(path) -> Backend:
    kind, _, _ = read_bundle(path)
    if kind == CNN_KIND:
        return TinyCnn.load(path)
    if kind == REPLAY_KIND:
        return ReplayBackend.load(path)
    raise ValueError(f"{path}: unknown backend kind {kind!r}")
