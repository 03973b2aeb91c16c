"""Extra-trees feature importance and per-user threshold selection.

Trees are grown on the full training set (no bootstrap). At every node a
random subset of features is examined, each with a single cut point drawn
uniformly between the node-local minimum and maximum, and the candidate
with the largest Gini decrease wins. A feature's importance is the
sample-weighted Gini decrease of the nodes splitting on it, normalised per
tree, averaged over trees and renormalised.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from .errors import ConfigError, DataError

DEFAULT_THRESHOLD_FACTORS = (0.5, 0.75, 1.0, 1.25, 1.5)


class EmptySelectionError(DataError):
    pass


@dataclass(frozen=True)
class ExtraTreesSpec:
    n_trees: int = 100
    max_features: int | None = None  # None -> ceil(sqrt(n_features))
    min_samples_split: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be positive")
        if self.max_features is not None and self.max_features < 1:
            raise ConfigError("max_features must be positive")
        if self.min_samples_split < 2:
            raise ConfigError("min_samples_split must be at least 2")

    def resolve_max_features(self, n_features: int) -> int:
        k = math.ceil(math.sqrt(n_features)) if self.max_features is None else self.max_features
        if k > n_features:
            raise ConfigError(f"max_features {k} exceeds {n_features} features")
        return k


# --- splitmix64 stream, one per tree -------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


@numba.njit(cache=True)
def _next_u64(state):
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@numba.njit(cache=True)
def _next_unit(state):
    return float(_next_u64(state) >> _S11) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True)
def _next_below(state, n):
    k = int(_next_unit(state) * n)
    return k if k < n else n - 1


@numba.njit(cache=True)
def _grow_tree(xt, y, max_features, min_samples_split, seed, importances):
    """Grow one tree on feature-major ``xt``; accumulate weighted decreases."""
    d, n = xt.shape
    idx = np.arange(n)
    perm = np.arange(d)
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    stack_start = np.empty(n + 1, dtype=np.int64)
    stack_end = np.empty(n + 1, dtype=np.int64)
    top = 0
    stack_start[0] = 0
    stack_end[0] = n
    top = 1
    n_nodes = 0
    while top > 0:
        top -= 1
        start = stack_start[top]
        end = stack_end[top]
        n_nodes += 1
        m = end - start
        pos = 0
        for i in range(start, end):
            pos += y[idx[i]]
        if m < min_samples_split or pos == 0 or pos == m:
            continue
        p = pos / m
        gini = 2.0 * p * (1.0 - p)

        best_gain = -1.0
        best_f = -1
        best_cut = 0.0
        remaining = d
        found = 0
        while found < max_features and remaining > 0:
            r = _next_below(state, remaining)
            f = perm[r]
            perm[r] = perm[remaining - 1]
            perm[remaining - 1] = f
            remaining -= 1
            row = xt[f]
            lo = row[idx[start]]
            hi = lo
            for i in range(start + 1, end):
                v = row[idx[i]]
                if v < lo:
                    lo = v
                elif v > hi:
                    hi = v
            if not hi > lo:
                continue
            found += 1
            cut = lo + _next_unit(state) * (hi - lo)
            if cut >= hi:
                cut = lo
            n_l = 0
            pos_l = 0
            for i in range(start, end):
                j = idx[i]
                if row[j] <= cut:
                    n_l += 1
                    pos_l += y[j]
            n_r = m - n_l
            pos_r = pos - pos_l
            pl = pos_l / n_l
            pr = pos_r / n_r
            gain = gini - (n_l / m) * 2.0 * pl * (1.0 - pl) - (n_r / m) * 2.0 * pr * (1.0 - pr)
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_cut = cut
        if best_f < 0:
            continue
        importances[best_f] += (m / n) * best_gain

        row = xt[best_f]
        lo_i = start
        hi_i = end - 1
        while lo_i <= hi_i:
            if row[idx[lo_i]] <= best_cut:
                lo_i += 1
            else:
                tmp = idx[lo_i]
                idx[lo_i] = idx[hi_i]
                idx[hi_i] = tmp
                hi_i -= 1
        stack_start[top] = lo_i
        stack_end[top] = end
        top += 1
        stack_start[top] = start
        stack_end[top] = lo_i
        top += 1
    return n_nodes


@numba.njit(cache=True)
def _grow_forest(xt, y, max_features, min_samples_split, seeds):
    per_tree = np.zeros((seeds.shape[0], xt.shape[0]))
    for t in range(seeds.shape[0]):
        _grow_tree(xt, y, max_features, min_samples_split, seeds[t], per_tree[t])
    return per_tree


def tree_seeds(seed: int, n_trees: int) -> np.ndarray:
    """Per-tree stream seeds; tree ``t`` depends only on (seed, t)."""
    return np.array(
        [np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(t,))
         .generate_state(1, dtype=np.uint64)[0] for t in range(n_trees)],
        dtype=np.uint64,
    )


def fit_importance(train, labels, spec: ExtraTreesSpec = ExtraTreesSpec()) -> np.ndarray:
    """Normalised extra-trees Gini importances, one per column of ``train``.

    ``train`` may be a FeatureMatrix or a plain 2-D array; ``labels`` are 0/1.
    """
    values = getattr(train, "values", train)
    x = np.asarray(values, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64).reshape(-1)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("cannot fit importances on an empty matrix")
    if y.shape[0] != x.shape[0]:
        raise DataError("labels and rows differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be binary 0/1")
    if y.min() == y.max():
        raise DataError("single-class input: both genuine and impostor rows are required")
    k = spec.resolve_max_features(x.shape[1])
    per_tree = _grow_forest(np.ascontiguousarray(x.T), y, k, spec.min_samples_split,
                            tree_seeds(spec.seed, spec.n_trees))
    totals = per_tree.sum(axis=1)
    grown = totals > 0
    if not grown.any():
        return np.zeros(x.shape[1])
    imp = (per_tree[grown] / totals[grown, None]).mean(axis=0)
    return imp / imp.sum()


@dataclass(frozen=True, eq=False)
class SelectionMask:
    indices: np.ndarray
    threshold: float
    scores: dict = field(default_factory=dict)  # candidate threshold -> validation accuracy

    def __len__(self):
        return int(self.indices.shape[0])

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "indices": self.indices.tolist(),
            "scores": [[t, s] for t, s in self.scores.items()],
        }


def select_features(importances, threshold: float) -> SelectionMask:
    """Keep every column whose importance is at least ``threshold``."""
    if threshold < 0:
        raise ConfigError("threshold must be nonnegative")
    imp = np.asarray(importances, dtype=np.float64)
    kept = np.flatnonzero(imp >= threshold)
    if kept.size == 0:
        raise EmptySelectionError(f"no feature reaches threshold {threshold!r}")
    return SelectionMask(kept, float(threshold))


def default_threshold_candidates(n_features: int) -> list[float]:
    return [f / n_features for f in DEFAULT_THRESHOLD_FACTORS]


def tune_threshold(importances, candidates: Sequence[float],
                   evaluate: Callable[[SelectionMask], float]) -> tuple[float, SelectionMask]:
    """Pick the candidate with the best validation score.

    Ties go to the larger threshold (fewer features). Candidates that would
    select nothing are skipped.
    """
    candidates = [float(c) for c in candidates]
    if not candidates:
        raise ConfigError("at least one threshold candidate is required")
    scores = {}
    best = None
    for t in sorted(set(candidates), reverse=True):
        try:
            mask = select_features(importances, t)
        except EmptySelectionError:
            continue
        score = float(evaluate(mask))
        scores[t] = score
        if best is None or score > best[0]:
            best = (score, t, mask)
    if best is None:
        raise EmptySelectionError("every threshold candidate selects an empty feature set")
    _, t, mask = best
    return t, SelectionMask(mask.indices, t, dict(sorted(scores.items())))
