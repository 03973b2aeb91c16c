"""Hyperparameter containers and the default search grids."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Union

from ..errors import ConfigError

KNN_METRICS = ("euclidean", "manhattan")
GAMMA_MODES = ("scale", "auto")


@dataclass(frozen=True)
class KnnSpec:
    k: int = 5
    metric: str = "euclidean"

    def __post_init__(self):
        if int(self.k) < 1:
            raise ConfigError("k must be at least 1")
        if self.metric not in KNN_METRICS:
            raise ConfigError(f"metric must be one of {KNN_METRICS}")

    @property
    def family(self):
        return "knn"


@dataclass(frozen=True)
class SvmSpec:
    """Soft-margin SVM settings.

    ``gamma`` is ``"scale"``, ``"auto"`` or an explicit positive number and is
    ignored by the linear kernel.
    """

    kernel: str = "rbf"
    C: float = 1.0
    gamma: Union[str, float] = "scale"
    tolerance: float = 1e-3
    max_iter: int = 1_000_000
    seed: int = 0

    def __post_init__(self):
        if self.kernel not in ("linear", "rbf"):
            raise ConfigError("kernel must be 'linear' or 'rbf'")
        if not self.C > 0:
            raise ConfigError("C must be positive")
        if isinstance(self.gamma, str):
            if self.gamma not in GAMMA_MODES:
                raise ConfigError(f"gamma must be one of {GAMMA_MODES} or a positive number")
        elif not float(self.gamma) > 0:
            raise ConfigError("gamma must be positive")
        if not self.tolerance > 0 or self.max_iter < 1:
            raise ConfigError("tolerance and max_iter must be positive")

    @property
    def family(self):
        return "lsvm" if self.kernel == "linear" else "nlsvm"


@dataclass(frozen=True)
class LdaSpec:
    solver: str = "eigen"

    def __post_init__(self):
        if self.solver != "eigen":
            raise ConfigError("only the eigen solver is supported")

    @property
    def family(self):
        return "lda"


ClassifierSpec = Union[KnnSpec, SvmSpec, LdaSpec]
FAMILIES = ("knn", "lda", "lsvm", "nlsvm")
SVM_C_VALUES = (0.1, 1.0, 10.0, 100.0)


def default_grid(family: str) -> list:
    if family == "knn":
        return [KnnSpec(k, m) for k in (4, 5, 6) for m in KNN_METRICS]
    if family == "lsvm":
        return [SvmSpec("linear", c) for c in SVM_C_VALUES]
    if family == "nlsvm":
        return [SvmSpec("rbf", c, g) for c in SVM_C_VALUES for g in GAMMA_MODES]
    if family == "lda":
        return [LdaSpec()]
    raise ConfigError(f"unknown classifier family {family!r}; choose from {FAMILIES}")


def default_cell(family: str):
    """Cell used while tuning the feature-selection threshold."""
    cells = {
        "knn": KnnSpec(5, "euclidean"),
        "lsvm": SvmSpec("linear", 1.0),
        "nlsvm": SvmSpec("rbf", 1.0, "scale"),
        "lda": LdaSpec(),
    }
    if family not in cells:
        raise ConfigError(f"unknown classifier family {family!r}; choose from {FAMILIES}")
    return cells[family]


def spec_to_dict(spec) -> dict:
    return {"family": spec.family, **asdict(spec)}


def spec_from_dict(doc: dict):
    doc = dict(doc)
    family = doc.pop("family", None)
    if family == "knn":
        return KnnSpec(**doc)
    if family in ("lsvm", "nlsvm"):
        doc.setdefault("kernel", "linear" if family == "lsvm" else "rbf")
        return SvmSpec(**doc)
    if family == "lda":
        return LdaSpec(**doc)
    raise ConfigError(f"grid cell needs a family in {FAMILIES}, got {family!r}")
