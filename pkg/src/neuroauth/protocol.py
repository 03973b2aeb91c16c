"""Session splits, one-vs-rest tasks, impostor balancing and the experiment loops."""
from __future__ import annotations

import logging
import multiprocessing as mp
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import seeding
from .classifiers import train as train_classifier
from .classifiers import (
    LdaSpec,
    SvmSpec,
    accuracy,
    default_cell,
    default_grid,
    grid_search,
    spec_to_dict,
    train_lda,
    train_svm_multiclass,
)
from .errors import ConfigError, DataError, NeuroAuthError, StageError
from .featsel import (
    EmptySelectionError,
    ExtraTreesSpec,
    SelectionMask,
    default_threshold_candidates,
    fit_importance,
    tune_threshold,
)
from .features import FeatureMatrix, Normalizer, apply_normalizer, fit_normalizer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitPlan:
    train: tuple = (1, 2, 3, 4, 5)
    val: tuple = (6, 7)
    test: tuple = (8, 9)

    def __post_init__(self):
        sets = [set(self.train), set(self.val), set(self.test)]
        for name, s in zip(("train", "val", "test"), sets):
            if not s:
                raise ConfigError(f"{name} session set is empty")
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ConfigError("train, validation and test sessions must be disjoint")
        for name, s in zip(("train", "val", "test"), (self.train, self.val, self.test)):
            object.__setattr__(self, name, tuple(sorted(int(v) for v in s)))

    def to_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}


def split_sessions(fm: FeatureMatrix, plan: SplitPlan = SplitPlan(),
                   require_all: bool = True):
    """Route rows by session id into (train, val, test), preserving row order."""
    present = set(np.unique(fm.session_ids).tolist())
    if require_all:
        missing = sorted(set(plan.train + plan.val + plan.test) - present)
        if missing:
            raise DataError(f"sessions {missing} from the split plan are absent from the data")
    return tuple(fm.take(np.isin(fm.session_ids, list(s)))
                 for s in (plan.train, plan.val, plan.test))


# ---------------------------------------------------------------------------
# Metrics


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @classmethod
    def from_labels(cls, y_true, y_pred) -> "ConfusionMatrix":
        t = np.asarray(y_true).astype(bool)
        p = np.asarray(y_pred).astype(bool)
        return cls(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(t & ~p)),
                   int(np.sum(~t & ~p)))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def metrics(cm: ConfusionMatrix) -> Metrics:
    """Accuracy, precision, recall and F1 of the genuine class; 0/0 counts as 0."""
    if cm.total <= 0:
        raise DataError("metrics need at least one evaluated row")
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    return Metrics(
        accuracy=(cm.tp + cm.tn) / cm.total,
        precision=precision,
        recall=recall,
        f1=_ratio(2 * precision * recall, precision + recall),
    )


def summarize(values: Sequence[float], ddof: int = 0) -> dict:
    """Average / maximum / minimum / median / std of per-user values."""
    values = [float(v) for v in values]
    if not values:
        return {"average": None, "maximum": None, "minimum": None, "median": None, "std": None}
    std = statistics.pstdev(values) if ddof == 0 else (
        statistics.stdev(values) if len(values) > 1 else 0.0)
    return {
        "average": statistics.fmean(values),
        "maximum": max(values),
        "minimum": min(values),
        "median": statistics.median(values),
        "std": std,
    }


# ---------------------------------------------------------------------------
# One-vs-rest tasks


@dataclass(frozen=True, eq=False)
class AuthTask:
    genuine: int
    impostors: tuple
    train: FeatureMatrix
    val: FeatureMatrix
    test: FeatureMatrix
    notes: tuple = ()

    def labels(self, split: str) -> np.ndarray:
        return (getattr(self, split).user_ids == self.genuine).astype(np.int64)


def make_auth_task(train: FeatureMatrix, val: FeatureMatrix, test: FeatureMatrix,
                   genuine: int) -> AuthTask:
    users = sorted(set(np.unique(train.user_ids).tolist()))
    if genuine not in users:
        raise DataError(f"user {genuine} has no training rows")
    impostors = tuple(u for u in users if u != genuine)
    if not impostors:
        raise DataError("authentication needs at least one impostor")
    return AuthTask(genuine, impostors, train, val, test)


def _downsample(fm: FeatureMatrix, genuine: int, impostors: Sequence[int], seed: int):
    """Row indices keeping all genuine rows and floor(G/m) rows per impostor."""
    g_rows = np.flatnonzero(fm.user_ids == genuine)
    m = len(impostors)
    if g_rows.size < m:
        raise DataError(
            f"{g_rows.size} genuine rows cannot be balanced against {m} impostors"
        )
    q = g_rows.size // m
    keep = [g_rows]
    notes = []
    for imp in impostors:
        rows = np.flatnonzero(fm.user_ids == imp)
        if rows.size < q:
            notes.append(f"impostor {imp} has {rows.size} rows < quota {q}; all kept")
            keep.append(rows)
            continue
        gen = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(imp),)))
        keep.append(np.sort(gen.choice(rows, size=q, replace=False)))
    return np.sort(np.concatenate(keep)), notes


def balance_downsample(task: AuthTask, seed: int, balance_eval: bool = False) -> AuthTask:
    """Downsample each impostor's training rows to floor(G / m).

    Validation and test rows are left alone unless ``balance_eval`` is set,
    in which case they are balanced by the same rule.
    """
    keep, notes = _downsample(task.train, task.genuine, task.impostors, seed)
    out = replace(task, train=task.train.take(keep), notes=task.notes + tuple(notes))
    if balance_eval:
        for k, name in enumerate(("val", "test"), start=1):
            fm = getattr(out, name)
            if fm.n_rows == 0:
                continue
            rows, more = _downsample(fm, task.genuine, task.impostors, seed + k)
            out = replace(out, **{name: fm.take(rows)}, notes=out.notes + tuple(more))
    return out


# ---------------------------------------------------------------------------
# Per-user authentication


@dataclass(frozen=True)
class AuthSettings:
    plan: SplitPlan = SplitPlan()
    extra_trees: ExtraTreesSpec = ExtraTreesSpec()
    threshold_candidates: tuple | None = None  # None -> (0.5 .. 1.5) / n_features
    families: tuple = ("lsvm", "nlsvm")
    grids: dict | None = None  # family -> list of specs; None -> default grids
    seed: int = 0
    balance_eval: bool = False
    permute_labels: bool = False
    workers: int = 1
    std_ddof: int = 0

    def grid(self, family: str) -> list:
        if self.grids and family in self.grids:
            return list(self.grids[family])
        return default_grid(family)


@dataclass(eq=False)
class FittedUser:
    """Everything learned for one genuine user without looking at test rows."""

    user_id: int
    normalizer: Normalizer
    importances: np.ndarray
    n_train: int
    n_train_genuine: int
    selections: dict = field(default_factory=dict)  # family -> SelectionMask
    grids: dict = field(default_factory=dict)       # family -> GridResult
    notes: tuple = ()


def _seeded(spec, seed):
    return replace(spec, seed=seed) if isinstance(spec, SvmSpec) else spec


@dataclass(eq=False)
class PreparedUser:
    """Balanced, normalised train/val arrays and feature importances for one user."""

    user_id: int
    normalizer: Normalizer
    importances: np.ndarray
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    notes: tuple = ()


def prepare_user(train: FeatureMatrix, val: FeatureMatrix, user_id: int,
                 settings: AuthSettings) -> PreparedUser:
    """Balance the impostors, fit min-max scaling on train and rank features."""
    seed = settings.seed
    task = make_auth_task(train, val, FeatureMatrix.empty(train.columns), user_id)
    task = balance_downsample(task, seeding.derive_seed(seed, "balance", user_id),
                              balance_eval=settings.balance_eval)
    y_train, y_val = task.labels("train"), task.labels("val")
    if settings.permute_labels:
        gen = seeding.rng(seed, "permute", user_id)
        y_train = gen.permutation(y_train)
        y_val = gen.permutation(y_val)

    norm = fit_normalizer(task.train)
    x_train = norm.transform(task.train.values)
    x_val = norm.transform(task.val.values)
    trees = replace(settings.extra_trees, seed=seeding.derive_seed(seed, "extra_trees", user_id))
    imp = fit_importance(x_train, y_train, trees)
    return PreparedUser(user_id, norm, imp, x_train, y_train, x_val, y_val, task.notes)


def select_for_family(prep: PreparedUser, family: str, settings: AuthSettings) -> SelectionMask:
    """Tune the importance threshold with the family's default cell on validation."""
    candidates = (settings.threshold_candidates
                  or default_threshold_candidates(prep.x_train.shape[1]))
    cell = _seeded(default_cell(family), seeding.derive_seed(settings.seed, "svm", prep.user_id))

    def evaluate(mask: SelectionMask) -> float:
        cols = mask.indices
        model = train_classifier(cell, prep.x_train[:, cols], prep.y_train)
        return accuracy(model, prep.x_val[:, cols], prep.y_val)

    _, mask = tune_threshold(prep.importances, candidates, evaluate)
    return mask


def fit_user(train: FeatureMatrix, val: FeatureMatrix, user_id: int,
             settings: AuthSettings) -> FittedUser:
    """Balance, normalise, rank features, tune the threshold and grid-search each family."""
    prep = prepare_user(train, val, user_id, settings)
    svm_seed = seeding.derive_seed(settings.seed, "svm", user_id)
    fitted = FittedUser(user_id, prep.normalizer, prep.importances, int(prep.x_train.shape[0]),
                        int(prep.y_train.sum()), notes=prep.notes)
    for family in settings.families:
        mask = select_for_family(prep, family, settings)
        cols = mask.indices
        grid = [_seeded(s, svm_seed) for s in settings.grid(family)]
        fitted.selections[family] = mask
        fitted.grids[family] = grid_search(prep.x_train[:, cols], prep.y_train,
                                           prep.x_val[:, cols], prep.y_val, grid)
    return fitted


def evaluate_user(fitted: FittedUser, test: FeatureMatrix, settings: AuthSettings,
                  impostors: Sequence[int]) -> dict:
    """Score the fitted models on the test rows; returns one report row per family."""
    if settings.balance_eval and test.n_rows:
        rows, _ = _downsample(test, fitted.user_id, impostors,
                              seeding.derive_seed(settings.seed, "balance", fitted.user_id) + 2)
        test = test.take(rows)
    y_test = (test.user_ids == fitted.user_id).astype(np.int64)
    x_test = fitted.normalizer.transform(test.values)
    out = {}
    for family in settings.families:
        mask = fitted.selections[family]
        result = fitted.grids[family]
        pred = result.model.predict(x_test[:, mask.indices])
        cm = ConfusionMatrix.from_labels(y_test, pred)
        met = metrics(cm)
        row = {
            "user_id": fitted.user_id,
            "hyperparameters": spec_to_dict(result.spec),
            "threshold": mask.threshold,
            "n_selected": len(mask),
            "selected_features": mask.indices.tolist(),
            "threshold_scores": [[t, s] for t, s in mask.scores.items()],
            "val_accuracy": result.val_accuracy,
            "test_accuracy": met.accuracy,
            "test_precision": met.precision,
            "test_recall": met.recall,
            "test_f1": met.f1,
            "confusion": cm.to_dict(),
            "n_train": fitted.n_train,
            "n_train_genuine": fitted.n_train_genuine,
            "n_test": int(y_test.shape[0]),
            "grid": result.cells,
        }
        if hasattr(result.model, "converged"):
            row["converged"] = bool(result.model.converged)
        if fitted.notes:
            row["notes"] = list(fitted.notes)
        out[family] = row
    return out


_SHARED: dict = {}


def _run_user(user_id: int) -> dict:
    train, val, test = _SHARED["splits"]
    settings = _SHARED["settings"]
    try:
        fitted = fit_user(train, val, user_id, settings)
        impostors = [u for u in _SHARED["users"] if u != user_id]
        return evaluate_user(fitted, test, settings, impostors)
    except NeuroAuthError as exc:
        err = exc if isinstance(exc, StageError) else StageError(
            "authenticate", str(exc), user_id=user_id, hint=_hint(exc))
        return {"error": {"stage": err.stage, "user_id": user_id, "message": str(err),
                          "hint": err.hint}}


def _hint(exc: Exception) -> str:
    if isinstance(exc, EmptySelectionError):
        return "lower the threshold candidates"
    if isinstance(exc, DataError):
        return "check that every user has rows in each split session"
    return "check the classifier grid and threshold candidates in the config"


def run_authentication(fm: FeatureMatrix, settings: AuthSettings = AuthSettings()) -> dict:
    """One-vs-rest authentication of every user; per-family rows plus aggregates.

    A user whose task fails is recorded under ``failures`` and left out of the
    aggregates; ``complete`` is then False.
    """
    users = sorted(set(np.unique(fm.user_ids).tolist()))
    if len(users) < 2:
        raise DataError("authentication needs at least two users")
    splits = split_sessions(fm, settings.plan)
    _SHARED.update(splits=splits, settings=settings, users=users)
    try:
        if settings.workers > 1 and "fork" in mp.get_all_start_methods():
            with ProcessPoolExecutor(max_workers=settings.workers,
                                     mp_context=mp.get_context("fork")) as pool:
                results = list(pool.map(_run_user, users))
        else:
            results = [_run_user(u) for u in users]
    finally:
        _SHARED.clear()

    failures = [r["error"] for r in results if "error" in r]
    done = [r for r in results if "error" not in r]
    report = {"complete": not failures,
              "split_sizes": {name: int(s.n_rows) for name, s in
                              zip(("train", "val", "test"), splits)},
              "families": {},
              "failures": failures}
    for family in settings.families:
        rows = [r[family] for r in done]
        report["families"][family] = {
            "users": rows,
            "aggregate": aggregate_rows(rows, settings.std_ddof),
        }
    return report


AGGREGATE_METRICS = ("val_accuracy", "test_accuracy", "test_f1", "test_precision",
                     "test_recall", "n_selected")


def aggregate_rows(rows: Sequence[dict], ddof: int = 0) -> dict:
    return {m: summarize([r[m] for r in rows], ddof) for m in AGGREGATE_METRICS}


# ---------------------------------------------------------------------------
# Pilot multi-class experiment


def pilot_split(fm: FeatureMatrix, train_fraction: float = 0.8, chronological: bool = True,
                seed: int = 0):
    if not 0 < train_fraction < 1:
        raise ConfigError("train_fraction must lie strictly between 0 and 1")
    train_rows, test_rows = [], []
    for user in np.unique(fm.user_ids):
        rows = np.flatnonzero(fm.user_ids == user)
        order = np.lexsort((fm.window_index[rows], fm.session_ids[rows]))
        rows = rows[order]
        if not chronological:
            rows = seeding.rng(seed, "pilot", int(user)).permutation(rows)
        cut = int(round(train_fraction * rows.size))
        train_rows.append(np.sort(rows[:cut]))
        test_rows.append(np.sort(rows[cut:]))
    return fm.take(np.concatenate(train_rows)), fm.take(np.concatenate(test_rows))


def run_pilot(fm: FeatureMatrix, classifier: str = "lda", train_fraction: float = 0.8,
              chronological: bool = True, seed: int = 0,
              svm_spec: SvmSpec = SvmSpec("rbf", 0.1, "scale")) -> dict:
    """Single multi-class model over all users; returns accuracy and the confusion matrix."""
    users = np.unique(fm.user_ids)
    if users.shape[0] < 2:
        raise DataError("the pilot needs at least two users")
    train_fm, test_fm = pilot_split(fm, train_fraction, chronological, seed)
    norm = fit_normalizer(train_fm)
    x_train = norm.transform(train_fm.values)
    x_test = norm.transform(test_fm.values)
    if classifier == "lda":
        model = train_lda(x_train, train_fm.user_ids, LdaSpec())
        spec = {"family": "lda", "solver": "eigen"}
    elif classifier == "svm":
        svm_spec = replace(svm_spec, seed=seeding.derive_seed(seed, "pilot", 0))
        model = train_svm_multiclass(x_train, train_fm.user_ids, svm_spec)
        spec = spec_to_dict(svm_spec)
    else:
        raise ConfigError("pilot classifier must be 'lda' or 'svm'")
    pred = model.predict(x_test)
    index = {int(u): k for k, u in enumerate(users)}
    confusion = np.zeros((users.shape[0], users.shape[0]), dtype=np.int64)
    for t, p in zip(test_fm.user_ids, pred):
        confusion[index[int(t)], index[int(p)]] += 1
    return {
        "classifier": classifier,
        "hyperparameters": spec,
        "train_fraction": train_fraction,
        "chronological": chronological,
        "labels": [int(u) for u in users],
        "accuracy": float(np.mean(pred == test_fm.user_ids)),
        "n_train": int(train_fm.n_rows),
        "n_test": int(test_fm.n_rows),
        "confusion": confusion.tolist(),
    }
