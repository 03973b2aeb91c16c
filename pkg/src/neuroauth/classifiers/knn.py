"""Brute-force k-nearest-neighbour voting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import DataError
from .specs import KnnSpec

_CDIST_METRIC = {"euclidean": "sqeuclidean", "manhattan": "cityblock"}


@dataclass(frozen=True, eq=False)
class KnnModel:
    spec: KnnSpec
    x: np.ndarray
    y: np.ndarray
    classes: np.ndarray

    @property
    def family(self):
        return "knn"

    def neighbors(self, queries, chunk: int = 512) -> np.ndarray:
        """Indices of the k nearest rows; equal distances prefer the lower index."""
        q = np.atleast_2d(np.asarray(getattr(queries, "values", queries), dtype=np.float64))
        k = self.spec.k
        out = np.empty((q.shape[0], k), dtype=np.int64)
        for lo in range(0, q.shape[0], chunk):
            dist = cdist(q[lo:lo + chunk], self.x, metric=_CDIST_METRIC[self.spec.metric])
            kth = np.partition(dist, k - 1, axis=1)[:, k - 1]
            for r, row in enumerate(dist):
                cand = np.flatnonzero(row <= kth[r])
                out[lo + r] = cand[np.argsort(row[cand], kind="stable")[:k]]
        return out

    def predict(self, queries) -> np.ndarray:
        nn = self.neighbors(queries)
        codes = np.searchsorted(self.classes, self.y[nn])
        votes = np.zeros((nn.shape[0], self.classes.shape[0]), dtype=np.int64)
        np.add.at(votes, (np.arange(nn.shape[0])[:, None], codes), 1)
        # argmax returns the first maximum, i.e. the smallest label on a tie.
        return self.classes[votes.argmax(axis=1)]


def train_knn(train, labels, spec: KnnSpec = KnnSpec()) -> KnnModel:
    x = np.asarray(getattr(train, "values", train), dtype=np.float64)
    y = np.asarray(labels).reshape(-1)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("kNN needs a non-empty training set")
    if y.shape[0] != x.shape[0]:
        raise DataError("labels and rows differ in length")
    if spec.k > x.shape[0]:
        raise DataError(f"k={spec.k} exceeds the {x.shape[0]} training rows")
    return KnnModel(spec, x.copy(), y.copy(), np.unique(y))
