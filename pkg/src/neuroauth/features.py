"""Per-window statistics and train-fitted min-max normalisation."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .dsp import WindowedSession
from .errors import ConfigError, DataError
from .ingest import DEFAULT_CHANNEL_LABELS

STATISTICS = ("mean", "std", "rms", "mav", "skew", "kurt")
FEATURE_SCHEMA_VERSION = 1


def feature_names(channels: Sequence[str] = DEFAULT_CHANNEL_LABELS) -> tuple[str, ...]:
    return tuple(f"{ch}_{stat}" for ch in channels for stat in STATISTICS)


def window_statistics(windows: np.ndarray, excess_kurtosis: bool = True) -> np.ndarray:
    """Six statistics per channel for a stack of windows.

    Parameters
    ----------
    windows : ndarray, shape (n_windows, window_len, n_channels)
    excess_kurtosis : bool
        Subtract 3 from the standardised fourth moment.

    Returns
    -------
    ndarray, shape (n_windows, n_channels * 6)
        Channel-major: all six statistics of channel 0, then channel 1, ...
        Moments are population moments; skewness and kurtosis of a constant
        channel are 0.
    """
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim != 3:
        raise ConfigError("windows must have shape (n_windows, window_len, n_channels)")
    n_win, length, n_ch = x.shape
    if length == 0:
        raise DataError("empty window")
    if n_win == 0:
        return np.empty((0, n_ch * len(STATISTICS)))

    mean = x.mean(axis=1)
    d = x - mean[:, None, :]
    # Moments of deviations scaled to unit peak; skew and kurtosis are scale
    # free and this keeps tiny or huge amplitudes from under/overflowing.
    peak = np.abs(d).max(axis=1)
    constant = (np.ptp(x, axis=1) == 0) | (peak == 0)
    z = d / np.where(constant, 1.0, peak)[:, None, :]
    z2 = z * z
    m2 = z2.mean(axis=1)
    m3 = (z2 * z).mean(axis=1)
    m4 = (z2 * z2).mean(axis=1)
    safe = np.where(constant, 1.0, m2)
    skew = np.where(constant, 0.0, m3 / safe**1.5)
    kurt = m4 / safe**2
    if excess_kurtosis:
        kurt = kurt - 3.0
    kurt = np.where(constant, 0.0, kurt)
    std = np.where(constant, 0.0, peak * np.sqrt(m2))

    out = np.stack(
        [mean, std, np.sqrt((x * x).mean(axis=1)), np.abs(x).mean(axis=1), skew, kurt],
        axis=2,
    )
    return out.reshape(n_win, n_ch * len(STATISTICS))


def extract_features(window: np.ndarray, excess_kurtosis: bool = True) -> np.ndarray:
    """Feature vector of a single (window_len, n_channels) window."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] == 0:
        raise DataError("empty window")
    if not np.all(np.isfinite(window)):
        raise DataError("window contains non-finite values")
    return window_statistics(window[None], excess_kurtosis)[0]


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray        # (rows, columns)
    user_ids: np.ndarray
    session_ids: np.ndarray
    window_index: np.ndarray
    columns: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ConfigError("values must be 2-D")
        n = values.shape[0]
        for name in ("user_ids", "session_ids", "window_index"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1)
            if arr.shape[0] != n:
                raise ConfigError(f"{name} has {arr.shape[0]} entries for {n} rows")
            object.__setattr__(self, name, arr)
        if values.shape[1] != len(self.columns):
            raise ConfigError("column names do not match the value matrix")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def __len__(self):
        return self.n_rows

    def take(self, rows) -> "FeatureMatrix":
        """Row subset by boolean mask or index array, keeping the given order."""
        rows = np.asarray(rows)
        return FeatureMatrix(self.values[rows], self.user_ids[rows], self.session_ids[rows],
                             self.window_index[rows], self.columns)

    def select_columns(self, indices) -> "FeatureMatrix":
        indices = np.asarray(indices, dtype=np.int64)
        return FeatureMatrix(self.values[:, indices], self.user_ids, self.session_ids,
                             self.window_index, tuple(self.columns[i] for i in indices))

    def with_values(self, values) -> "FeatureMatrix":
        return FeatureMatrix(values, self.user_ids, self.session_ids, self.window_index,
                             self.columns)

    @classmethod
    def empty(cls, columns: Sequence[str] | None = None) -> "FeatureMatrix":
        columns = feature_names() if columns is None else tuple(columns)
        z = np.empty(0, dtype=np.int64)
        return cls(np.empty((0, len(columns))), z, z, z, columns)

    @classmethod
    def concat(cls, parts: Sequence["FeatureMatrix"]) -> "FeatureMatrix":
        if not parts:
            return cls.empty()
        columns = parts[0].columns
        if any(p.columns != columns for p in parts):
            raise DataError("cannot concatenate feature matrices with different columns")
        return cls(
            np.concatenate([p.values for p in parts]),
            np.concatenate([p.user_ids for p in parts]),
            np.concatenate([p.session_ids for p in parts]),
            np.concatenate([p.window_index for p in parts]),
            columns,
        )


def build_feature_matrix(sessions: Sequence[WindowedSession],
                         excess_kurtosis: bool = True) -> FeatureMatrix:
    """One row per window, in input order."""
    sessions = list(sessions)
    if not sessions:
        return FeatureMatrix.empty()
    channels = sessions[0].channels
    parts = []
    for ws in sessions:
        if ws.channels != channels:
            raise DataError(
                f"channel-set mismatch in user {ws.user_id}, session {ws.session_id}"
            )
        n = len(ws)
        parts.append(FeatureMatrix(
            window_statistics(ws.windows, excess_kurtosis),
            np.full(n, ws.user_id), np.full(n, ws.session_id), np.arange(n),
            feature_names(channels),
        ))
    return FeatureMatrix.concat(parts)


@dataclass(frozen=True, eq=False)
class Normalizer:
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        if np.any(self.maximum < self.minimum):
            raise ConfigError("normalizer maximum below minimum")

    def transform(self, values: np.ndarray) -> np.ndarray:
        span = self.maximum - self.minimum
        constant = span == 0
        out = (values - self.minimum) / np.where(constant, 1.0, span)
        out[:, constant] = 0.0
        return out

    def to_dict(self) -> dict:
        return {"minimum": self.minimum.tolist(), "maximum": self.maximum.tolist()}


def fit_normalizer(train: FeatureMatrix) -> Normalizer:
    if train.n_rows == 0:
        raise DataError("cannot fit a normalizer on an empty matrix")
    if train.n_rows < 2:
        raise DataError("normalizer needs at least 2 training rows")
    return Normalizer(train.values.min(axis=0), train.values.max(axis=0))


def apply_normalizer(norm: Normalizer, m: FeatureMatrix) -> FeatureMatrix:
    """Min-max scale with the training range; no clipping outside [0, 1]."""
    if norm.minimum.shape[0] != m.values.shape[1]:
        raise ConfigError("normalizer was fitted on a different column count")
    return m.with_values(norm.transform(m.values))


def save_feature_matrix(fm: FeatureMatrix, out_dir, extra: dict | None = None) -> Path:
    """Write ``features.csv`` plus a ``features.meta.json`` row-metadata sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(fm.values, columns=list(fm.columns)).to_csv(
        out_dir / "features.csv", index=False, float_format=None)
    meta = {
        "schema_version": FEATURE_SCHEMA_VERSION,
        "columns": list(fm.columns),
        "user_id": fm.user_ids.tolist(),
        "session_id": fm.session_ids.tolist(),
        "window_index": fm.window_index.tolist(),
        "extra": extra or {},
    }
    (out_dir / "features.meta.json").write_text(json.dumps(meta) + "\n")
    return out_dir


def load_feature_matrix(in_dir) -> tuple[FeatureMatrix, dict]:
    in_dir = Path(in_dir)
    try:
        meta = json.loads((in_dir / "features.meta.json").read_text())
        frame = pd.read_csv(in_dir / "features.csv", dtype=np.float64,
                            float_precision="round_trip")
    except FileNotFoundError as exc:
        raise DataError(f"feature table missing: {exc.filename}") from exc
    if list(frame.columns) != meta["columns"]:
        raise DataError("feature table header does not match its metadata")
    values = frame.to_numpy() if len(frame) else np.empty((0, len(meta["columns"])))
    fm = FeatureMatrix(values, meta["user_id"], meta["session_id"], meta["window_index"],
                       tuple(meta["columns"]))
    return fm, meta.get("extra", {})
