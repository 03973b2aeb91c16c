"""Fisher discriminant via the generalised eigenproblem S_b v = lambda S_w v."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..errors import DataError
from .specs import LdaSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LdaModel:
    spec: LdaSpec
    classes: np.ndarray
    means: np.ndarray        # (classes, d)
    priors: np.ndarray
    projection: np.ndarray   # (d, r), r <= classes - 1
    eigenvalues: np.ndarray
    ridge: float = 0.0

    @property
    def family(self):
        return "lda"

    @property
    def centroids(self) -> np.ndarray:
        return self.means @ self.projection

    def transform(self, x) -> np.ndarray:
        return np.asarray(getattr(x, "values", x), dtype=np.float64) @ self.projection

    def decision_scores(self, x) -> np.ndarray:
        z = self.transform(x)
        c = self.centroids
        sq = ((z[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        return -0.5 * sq + np.log(self.priors)[None, :]

    def predict(self, x) -> np.ndarray:
        return self.classes[self.decision_scores(x).argmax(axis=1)]


def train_lda(train, labels, spec: LdaSpec = LdaSpec()) -> LdaModel:
    """Keep up to (classes - 1) discriminant directions.

    The within-class scatter is the pooled covariance, so projected classes
    have unit spread and the nearest-centroid rule with log priors is the
    Gaussian shared-covariance posterior. A singular scatter gets a ridge of
    ``1e-6 * trace / d``.
    """
    x = np.asarray(getattr(train, "values", train), dtype=np.float64)
    y = np.asarray(labels).reshape(-1)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("cannot train LDA on an empty matrix")
    if y.shape[0] != x.shape[0]:
        raise DataError("labels and rows differ in length")
    classes, inverse, counts = np.unique(y, return_inverse=True, return_counts=True)
    k = classes.shape[0]
    if k < 2:
        raise DataError("LDA needs at least two classes")
    n, d = x.shape
    means = np.stack([x[inverse == c].mean(axis=0) for c in range(k)])
    centred = x - means[inverse]
    within = centred.T @ centred / max(n - k, 1)
    overall = x.mean(axis=0)
    between = ((means - overall).T * (counts / n)) @ (means - overall)

    ridge = 0.0
    scale = float(np.trace(within)) / d
    if np.linalg.eigvalsh(within)[0] <= 1e-10 * scale:
        ridge = 1e-6 * scale if scale > 0 else 1e-6
        logger.info("within-class scatter is singular; applying ridge %.3g", ridge)
    evals, evecs = linalg.eigh(between, within + ridge * np.eye(d))
    order = np.argsort(evals)[::-1][: min(k - 1, d)]
    return LdaModel(spec, classes, means, counts / n, evecs[:, order], evals[order], ridge)
