"""Soft-margin SVM trained by sequential minimal optimisation.

The dual

    max  sum(a) - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
    s.t. 0 <= a_i <= C,  sum_i a_i y_i = 0

is solved two coordinates at a time. The working pair is the maximal
violating ``i`` plus the ``j`` with the best second-order gain; iteration
stops once the KKT gap ``max_up(-yG) - min_low(-yG)`` drops below the
tolerance. Rows are visited in a seeded random order so that ties in the
pair selection are resolved reproducibly.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from ..errors import ConfigError, DataError
from .specs import SvmSpec

LINEAR, RBF = 0, 1
_TAU = 1e-12
DEFAULT_KERNEL_CACHE_MB = 1024


def resolve_gamma(mode, train) -> float:
    """Numeric RBF width for ``"auto"`` (1/d), ``"scale"`` (1/(d var)) or a number."""
    x = np.asarray(getattr(train, "values", train), dtype=np.float64)
    d = x.shape[1] if x.ndim == 2 else 0
    if d < 1:
        raise DataError("gamma needs at least one feature")
    if isinstance(mode, str):
        if mode == "auto":
            return 1.0 / d
        if mode == "scale":
            var = float(x.var())
            if var == 0.0:
                raise DataError("gamma='scale' is undefined for a constant feature matrix")
            return 1.0 / (d * var)
        raise ConfigError(f"unknown gamma mode {mode!r}")
    gamma = float(mode)
    if not gamma > 0:
        raise ConfigError("gamma must be positive")
    return gamma


def rbf_kernel(x, y, gamma: float) -> float:
    diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return math.exp(-gamma * float(diff @ diff))


def kernel_matrix(a: np.ndarray, b: np.ndarray, kind: int, gamma: float) -> np.ndarray:
    gram = a @ b.T
    if kind == LINEAR:
        return gram
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * gram
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq, out=sq)


@numba.njit(cache=True)
def _fill_row(x, sqnorm, i, kind, gamma, out):
    n, d = x.shape
    for t in range(n):
        s = 0.0
        for k in range(d):
            s += x[i, k] * x[t, k]
        if kind == 0:
            out[t] = s
        else:
            dist = sqnorm[i] + sqnorm[t] - 2.0 * s
            if dist < 0.0:
                dist = 0.0
            out[t] = math.exp(-gamma * dist)


@numba.njit(cache=True)
def _row_slot(i, protect, x, sqnorm, kind, gamma, cache, slot_of, owner, cursor):
    s = slot_of[i]
    if s >= 0:
        return s
    m = cache.shape[0]
    s = cursor[0]
    if s == protect:
        s = (s + 1) % m
    cursor[0] = (s + 1) % m
    if owner[s] >= 0:
        slot_of[owner[s]] = -1
    owner[s] = i
    slot_of[i] = s
    _fill_row(x, sqnorm, i, kind, gamma, cache[s])
    return s


@numba.njit(cache=True)
def _smo(x, sqnorm, y, c, kind, gamma, tol, max_iter, cache, slot_of, owner, diag,
         track, objective):
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    cursor = np.zeros(1, dtype=np.int64)
    it = 0
    converged = False
    if track:
        objective[0] = 0.0
    while it < max_iter:
        gmax = -np.inf
        i = -1
        for t in range(n):
            if y[t] > 0:
                if alpha[t] < c and -grad[t] > gmax:
                    gmax = -grad[t]
                    i = t
            else:
                if alpha[t] > 0.0 and grad[t] > gmax:
                    gmax = grad[t]
                    i = t
        if i < 0:
            converged = True
            break
        si = _row_slot(i, -1, x, sqnorm, kind, gamma, cache, slot_of, owner, cursor)
        gmin = np.inf
        j = -1
        best = np.inf
        for t in range(n):
            if y[t] > 0:
                if not alpha[t] > 0.0:
                    continue
                v = -grad[t]
            else:
                if not alpha[t] < c:
                    continue
                v = grad[t]
            if v < gmin:
                gmin = v
            b = gmax - v
            if b > 0.0:
                a = diag[i] + diag[t] - 2.0 * cache[si, t]
                if a <= 0.0:
                    a = _TAU
                o = -(b * b) / a
                if o < best:
                    best = o
                    j = t
        if gmax - gmin < tol or j < 0:
            converged = True
            break
        sj = _row_slot(j, si, x, sqnorm, kind, gamma, cache, slot_of, owner, cursor)
        ki = cache[si]
        kj = cache[sj]
        ai_old = alpha[i]
        aj_old = alpha[j]
        quad = diag[i] + diag[j] - 2.0 * ki[j]
        if quad <= 0.0:
            quad = _TAU
        ai = ai_old
        aj = aj_old
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0.0:
                if aj < 0.0:
                    aj = 0.0
                    ai = diff
                if ai > c:
                    ai = c
                    aj = c - diff
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = -diff
                if aj > c:
                    aj = c
                    ai = c + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = ai + aj
            ai -= delta
            aj += delta
            if total > c:
                if ai > c:
                    ai = c
                    aj = total - c
                if aj > c:
                    aj = c
                    ai = total - c
            else:
                if aj < 0.0:
                    aj = 0.0
                    ai = total
                if ai < 0.0:
                    ai = 0.0
                    aj = total
        alpha[i] = ai
        alpha[j] = aj
        di = (ai - ai_old) * y[i]
        dj = (aj - aj_old) * y[j]
        for t in range(n):
            grad[t] += y[t] * (ki[t] * di + kj[t] * dj)
        it += 1
        if track:
            s = 0.0
            for t in range(n):
                s += alpha[t] - alpha[t] * (grad[t] + 1.0) * 0.5
            objective[it] = s

    # Offset: average over free vectors, else midpoint of the feasible interval.
    ub = np.inf
    lb = -np.inf
    n_free = 0
    sum_free = 0.0
    for t in range(n):
        yg = y[t] * grad[t]
        if alpha[t] >= c:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0.0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            sum_free += yg
    rho = sum_free / n_free if n_free > 0 else (ub + lb) / 2.0
    return alpha, it, converged, rho


@dataclass(frozen=True, eq=False)
class SvmModel:
    """Binary SVM; ``decision(x) = sum(dual_coef * K(sv, x)) + bias``, class 1 iff >= 0."""

    spec: SvmSpec
    gamma: float
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i, y in {-1, +1}
    bias: float
    converged: bool
    n_iter: int
    weights: np.ndarray | None = None  # collapsed primal vector, linear kernel only
    objective: np.ndarray | None = field(default=None, repr=False)

    @property
    def family(self):
        return self.spec.family

    @property
    def alphas(self) -> np.ndarray:
        return np.abs(self.dual_coef)

    def decision_function(self, x, chunk: int = 2048) -> np.ndarray:
        x = np.asarray(getattr(x, "values", x), dtype=np.float64)
        if self.weights is not None:
            return x @ self.weights + self.bias
        kind = LINEAR if self.spec.kernel == "linear" else RBF
        out = np.empty(x.shape[0])
        for lo in range(0, x.shape[0], chunk):
            k = kernel_matrix(x[lo:lo + chunk], self.support_vectors, kind, self.gamma)
            out[lo:lo + chunk] = k @ self.dual_coef + self.bias
        return out

    def predict(self, x) -> np.ndarray:
        return (self.decision_function(x) >= 0.0).astype(np.int64)


def _solve(x, y_pm, spec: SvmSpec, gamma: float, track: bool, cache_mb: float):
    n = x.shape[0]
    kind = LINEAR if spec.kernel == "linear" else RBF
    sqnorm = (x * x).sum(axis=1)
    if n * n * 8 <= cache_mb * 2**20:
        cache = kernel_matrix(x, x, kind, gamma)
        slot_of = np.arange(n, dtype=np.int64)
        owner = np.arange(n, dtype=np.int64)
    else:
        slots = max(2, int(cache_mb * 2**20 // (8 * n)))
        cache = np.empty((slots, n))
        slot_of = np.full(n, -1, dtype=np.int64)
        owner = np.full(slots, -1, dtype=np.int64)
    if kind == LINEAR:
        diag = sqnorm.copy()
    else:
        diag = np.ones(n)
    objective = np.zeros(spec.max_iter + 1 if track else 1)
    alpha, n_iter, converged, rho = _smo(
        x, sqnorm, y_pm, float(spec.C), kind, float(gamma), float(spec.tolerance),
        int(spec.max_iter), cache, slot_of, owner, diag, track, objective)
    return alpha, int(n_iter), bool(converged), float(rho), (objective[: n_iter + 1] if track else None)


def train_svm(train, labels, spec: SvmSpec = SvmSpec(), track_objective: bool = False,
              cache_mb: float = DEFAULT_KERNEL_CACHE_MB) -> SvmModel:
    """Fit a binary SVM on 0/1 labels (mapped internally to -1/+1)."""
    x = np.ascontiguousarray(np.asarray(getattr(train, "values", train), dtype=np.float64))
    lab = np.asarray(labels).reshape(-1)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("cannot train an SVM on an empty matrix")
    if lab.shape[0] != x.shape[0]:
        raise DataError("labels and rows differ in length")
    if not np.all((lab == 0) | (lab == 1)):
        raise DataError("SVM labels must be 0/1")
    if lab.min() == lab.max():
        raise DataError("SVM training needs both classes")
    gamma = resolve_gamma(spec.gamma, x) if spec.kernel == "rbf" else 0.0

    order = np.random.default_rng(spec.seed).permutation(x.shape[0])
    xp = x[order]
    yp = np.where(lab[order] == 1, 1.0, -1.0)
    alpha_p, n_iter, converged, rho, objective = _solve(xp, yp, spec, gamma,
                                                        track_objective, cache_mb)
    alpha = np.empty_like(alpha_p)
    alpha[order] = alpha_p
    y = np.where(lab == 1, 1.0, -1.0)
    sv = np.flatnonzero(alpha > 0.0)
    dual_coef = alpha[sv] * y[sv]
    weights = x[sv].T @ dual_coef if spec.kernel == "linear" else None
    return SvmModel(spec, gamma, x[sv].copy(), dual_coef, -rho, converged, n_iter,
                    weights, objective)


@dataclass(frozen=True, eq=False)
class MultiClassSvm:
    """One-vs-one ensemble; each pair votes, ties go to the smaller label."""

    classes: np.ndarray
    pairs: tuple
    models: tuple

    @property
    def family(self):
        return self.models[0].family

    def predict(self, x) -> np.ndarray:
        x = np.asarray(getattr(x, "values", x), dtype=np.float64)
        votes = np.zeros((x.shape[0], self.classes.shape[0]), dtype=np.int64)
        rows = np.arange(x.shape[0])
        for (a, b), model in zip(self.pairs, self.models):
            wins_b = model.predict(x) == 1
            votes[rows, np.where(wins_b, b, a)] += 1
        return self.classes[votes.argmax(axis=1)]


def train_svm_multiclass(train, labels, spec: SvmSpec = SvmSpec()) -> MultiClassSvm:
    x = np.asarray(getattr(train, "values", train), dtype=np.float64)
    lab = np.asarray(labels).reshape(-1)
    classes = np.unique(lab)
    if classes.shape[0] < 2:
        raise DataError("multi-class SVM needs at least two classes")
    if spec.kernel == "rbf":
        # One width for every pair, resolved on the full training set.
        spec = replace(spec, gamma=resolve_gamma(spec.gamma, x))
    pairs, models = [], []
    for a, b in itertools.combinations(range(classes.shape[0]), 2):
        rows = (lab == classes[a]) | (lab == classes[b])
        models.append(train_svm(x[rows], (lab[rows] == classes[b]).astype(np.int64), spec))
        pairs.append((a, b))
    return MultiClassSvm(classes, tuple(pairs), tuple(models))
