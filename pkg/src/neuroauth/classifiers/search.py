"""Training dispatch and validation-accuracy grid search."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigError, DataError, NeuroAuthError
from .knn import train_knn
from .lda import train_lda
from .specs import KnnSpec, LdaSpec, SvmSpec, spec_to_dict
from .svm import train_svm

logger = logging.getLogger(__name__)


def train(spec, x, y):
    if isinstance(spec, SvmSpec):
        return train_svm(x, y, spec)
    if isinstance(spec, KnnSpec):
        return train_knn(x, y, spec)
    if isinstance(spec, LdaSpec):
        return train_lda(x, y, spec)
    raise ConfigError(f"unsupported classifier spec {spec!r}")


def accuracy(model, x, y) -> float:
    y = np.asarray(y).reshape(-1)
    if y.shape[0] == 0:
        raise DataError("accuracy of an empty evaluation set is undefined")
    return float(np.mean(model.predict(x) == y))


@dataclass
class GridResult:
    spec: object
    model: object
    val_accuracy: float
    cells: list = field(default_factory=list)


def grid_search(train_x, train_y, val_x, val_y, grid: Sequence) -> GridResult:
    """Fit every cell on the training rows and keep the best validation accuracy.

    Ties keep the earlier cell. Cells that fail to train are recorded and
    skipped.
    """
    grid = list(grid)
    if not grid:
        raise ConfigError("empty classifier grid")
    best = None
    cells = []
    for spec in grid:
        record = {"spec": spec_to_dict(spec)}
        try:
            model = train(spec, train_x, train_y)
            acc = accuracy(model, val_x, val_y)
        except (NeuroAuthError, np.linalg.LinAlgError) as exc:
            logger.warning("grid cell %s failed: %s", spec, exc)
            record["error"] = str(exc)
            cells.append(record)
            continue
        record["val_accuracy"] = acc
        if isinstance(spec, SvmSpec):
            record["converged"] = model.converged
            record["n_iter"] = model.n_iter
        cells.append(record)
        if best is None or acc > best[0]:
            best = (acc, spec, model)
    if best is None:
        raise DataError("every grid cell failed to train")
    acc, spec, model = best
    return GridResult(spec, model, acc, cells)
