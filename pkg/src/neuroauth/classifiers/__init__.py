"""kNN, LDA and linear / RBF SVM classifiers with grid search."""
from .knn import KnnModel, train_knn
from .lda import LdaModel, train_lda
from .persist import load_model, save_model
from .search import GridResult, accuracy, grid_search, train
from .specs import (
    FAMILIES,
    KnnSpec,
    LdaSpec,
    SvmSpec,
    default_cell,
    default_grid,
    spec_from_dict,
    spec_to_dict,
)
from .svm import (
    MultiClassSvm,
    SvmModel,
    rbf_kernel,
    resolve_gamma,
    train_svm,
    train_svm_multiclass,
)

__all__ = [
    "FAMILIES", "GridResult", "KnnModel", "KnnSpec", "LdaModel", "LdaSpec", "MultiClassSvm",
    "SvmModel", "SvmSpec", "accuracy", "default_cell", "default_grid", "grid_search",
    "load_model", "rbf_kernel", "resolve_gamma", "save_model", "spec_from_dict",
    "spec_to_dict", "train", "train_knn", "train_lda", "train_svm", "train_svm_multiclass",
]
