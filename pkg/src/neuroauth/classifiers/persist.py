"""JSON save/load for trained models."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataError
from .knn import KnnModel
from .lda import LdaModel
from .specs import spec_from_dict, spec_to_dict
from .svm import MultiClassSvm, SvmModel

MODEL_SCHEMA_VERSION = 1


def _arr(a):
    return None if a is None else np.asarray(a).tolist()


def model_to_dict(model) -> dict:
    if isinstance(model, SvmModel):
        body = {
            "type": "svm",
            "gamma": model.gamma,
            "support_vectors": _arr(model.support_vectors),
            "dual_coef": _arr(model.dual_coef),
            "bias": model.bias,
            "converged": model.converged,
            "n_iter": model.n_iter,
            "weights": _arr(model.weights),
        }
    elif isinstance(model, KnnModel):
        body = {"type": "knn", "x": _arr(model.x), "y": _arr(model.y)}
    elif isinstance(model, LdaModel):
        body = {
            "type": "lda",
            "classes": _arr(model.classes),
            "means": _arr(model.means),
            "priors": _arr(model.priors),
            "projection": _arr(model.projection),
            "eigenvalues": _arr(model.eigenvalues),
            "ridge": model.ridge,
        }
    elif isinstance(model, MultiClassSvm):
        body = {
            "type": "svm_ovo",
            "classes": _arr(model.classes),
            "pairs": [list(p) for p in model.pairs],
            "models": [model_to_dict(m) for m in model.models],
        }
        return {"schema_version": MODEL_SCHEMA_VERSION, **body}
    else:
        raise DataError(f"cannot serialise {type(model).__name__}")
    return {"schema_version": MODEL_SCHEMA_VERSION, "spec": spec_to_dict(model.spec), **body}


def model_from_dict(doc: dict):
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise DataError(f"unsupported model schema_version {doc.get('schema_version')!r}")
    kind = doc.get("type")
    if kind == "svm_ovo":
        return MultiClassSvm(np.asarray(doc["classes"]), tuple(tuple(p) for p in doc["pairs"]),
                             tuple(model_from_dict(m) for m in doc["models"]))
    spec = spec_from_dict(doc["spec"])
    if kind == "svm":
        w = doc.get("weights")
        return SvmModel(spec, float(doc["gamma"]),
                        np.asarray(doc["support_vectors"], dtype=np.float64).reshape(
                            len(doc["dual_coef"]), -1),
                        np.asarray(doc["dual_coef"], dtype=np.float64), float(doc["bias"]),
                        bool(doc["converged"]), int(doc["n_iter"]),
                        None if w is None else np.asarray(w, dtype=np.float64))
    if kind == "knn":
        y = np.asarray(doc["y"])
        return KnnModel(spec, np.asarray(doc["x"], dtype=np.float64), y, np.unique(y))
    if kind == "lda":
        return LdaModel(spec, np.asarray(doc["classes"]), np.asarray(doc["means"]),
                        np.asarray(doc["priors"]), np.asarray(doc["projection"]),
                        np.asarray(doc["eigenvalues"]), float(doc["ridge"]))
    raise DataError(f"unknown model type {kind!r}")


def save_model(model, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model_to_dict(model)) + "\n")
    return path


def load_model(path):
    try:
        return model_from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"cannot load model from {path}: {exc}") from exc
