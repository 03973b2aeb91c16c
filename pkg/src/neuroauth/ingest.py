"""Session recordings: canonical CSV files, JSON manifests, synthetic data.

On disk a dataset is a directory holding ``manifest.json`` and one
``u<user>_s<session>.csv`` per recording. Each CSV has a header row with the
32 channel labels followed by one row per sample, values in microvolts
written with the shortest round-tripping float representation.
"""
from __future__ import annotations

import json
import logging
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from scipy import signal

from . import seeding
from .errors import (
    ChannelCountError,
    ConfigError,
    DataError,
    DuplicateSessionError,
    EmptyManifestError,
    MalformedManifestError,
    ManifestNotFoundError,
    NonFiniteValueError,
    SampleCountError,
    SessionFormatError,
)

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1

# Acti-cap montage of the grasp-and-lift recordings, in file column order.
DEFAULT_CHANNEL_LABELS = (
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FC5",
    "FC1", "FC2", "FC6", "T7", "C3", "Cz", "C4", "T8",
    "TP9", "CP5", "CP1", "CP2", "CP6", "TP10", "P7", "P3",
    "Pz", "P4", "P8", "PO9", "O1", "Oz", "O2", "PO10",
)
N_CHANNELS = 32


@dataclass(frozen=True)
class ChannelSet:
    labels: tuple[str, ...] = DEFAULT_CHANNEL_LABELS

    def __post_init__(self):
        labels = tuple(str(label) for label in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) != N_CHANNELS:
            raise ChannelCountError(
                f"channel count mismatch: expected {N_CHANNELS} labels, got {len(labels)}"
            )
        if len(set(labels)) != len(labels):
            raise ConfigError("channel labels must be distinct")

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)


@dataclass(frozen=True, eq=False)
class SessionRecord:
    """One user-session of raw EEG, ``samples`` shaped (time, channel)."""

    user_id: int
    session_id: int
    sample_rate_hz: float
    samples: np.ndarray
    channels: ChannelSet = field(default_factory=ChannelSet)

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64, copy=True)
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise SessionFormatError("samples must be a non-empty (time, channel) matrix")
        if samples.shape[1] != len(self.channels):
            raise ChannelCountError(
                f"channel count mismatch: {samples.shape[1]} columns for "
                f"{len(self.channels)} channels"
            )
        bad = ~np.isfinite(samples)
        if bad.any():
            row = int(np.nonzero(bad.any(axis=1))[0][0])
            raise NonFiniteValueError(f"non-finite value at row {row}", row=row)
        if not self.sample_rate_hz > 0:
            raise ConfigError("sample_rate_hz must be positive")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    def with_samples(self, samples: np.ndarray) -> "SessionRecord":
        return SessionRecord(self.user_id, self.session_id, self.sample_rate_hz,
                             samples, self.channels)


# ---------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class ManifestEntry:
    user_id: int
    session_id: int
    path: str
    n_samples: int


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    sample_rate_hz: float
    entries: tuple[ManifestEntry, ...]
    schema_version: int = MANIFEST_SCHEMA_VERSION

    def entry(self, user_id: int, session_id: int) -> ManifestEntry:
        for e in self.entries:
            if e.user_id == user_id and e.session_id == session_id:
                return e
        raise DataError(f"no manifest entry for user {user_id}, session {session_id}")

    @property
    def users(self) -> list[int]:
        return sorted({e.user_id for e in self.entries})

    @property
    def sessions(self) -> list[int]:
        return sorted({e.session_id for e in self.entries})


def session_filename(user_id: int, session_id: int) -> str:
    return f"u{user_id}_s{session_id}.csv"


def load_manifest(path) -> DatasetManifest:
    """Parse ``manifest.json``; entries come back sorted by (user, session)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise ManifestNotFoundError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedManifestError(f"malformed manifest {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedManifestError("malformed manifest: top level must be an object")
    try:
        version = int(doc["schema_version"])
        rate = float(doc["sample_rate_hz"])
        raw_entries = doc["entries"]
        if not isinstance(raw_entries, list):
            raise TypeError("entries must be a list")
        entries = [
            ManifestEntry(int(e["user_id"]), int(e["session_id"]), str(e["path"]),
                          int(e["n_samples"]))
            for e in raw_entries
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedManifestError(f"malformed manifest {path}: {exc!r}") from exc
    if version != MANIFEST_SCHEMA_VERSION:
        raise MalformedManifestError(f"unsupported manifest schema_version {version}")
    if not entries:
        raise EmptyManifestError("empty manifest")
    seen = set()
    for e in entries:
        key = (e.user_id, e.session_id)
        if key in seen:
            raise DuplicateSessionError(
                f"duplicate session: user {e.user_id}, session {e.session_id}"
            )
        seen.add(key)
        if e.n_samples < 1:
            raise MalformedManifestError(f"entry {key} declares no samples")
    entries.sort(key=lambda e: (e.user_id, e.session_id))
    return DatasetManifest(path.parent.resolve(), rate, tuple(entries), version)


def write_manifest(manifest: DatasetManifest, path=None) -> Path:
    path = Path(path) if path is not None else manifest.root / "manifest.json"
    doc = {
        "schema_version": manifest.schema_version,
        "sample_rate_hz": manifest.sample_rate_hz,
        "entries": [
            {"user_id": e.user_id, "session_id": e.session_id, "path": e.path,
             "n_samples": e.n_samples}
            for e in manifest.entries
        ],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# Session files


def read_session_file(path, user_id: int, session_id: int, sample_rate_hz: float,
                      expected_samples: int | None = None) -> SessionRecord:
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=np.float64, float_precision="round_trip",
                            engine="c")
    except FileNotFoundError as exc:
        raise DataError(f"session file not found: {path}") from exc
    except (ValueError, pd.errors.ParserError) as exc:
        raise SessionFormatError(f"cannot parse {path}: {exc}") from exc
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if frame.shape[1] != N_CHANNELS:
        raise ChannelCountError(
            f"channel count mismatch in {path.name}: {frame.shape[1]} columns, "
            f"expected {N_CHANNELS}"
        )
    samples = frame.to_numpy()
    if expected_samples is not None and samples.shape[0] != expected_samples:
        raise SampleCountError(
            f"{path.name}: {samples.shape[0]} rows, manifest declares {expected_samples}"
        )
    try:
        return SessionRecord(user_id, session_id, sample_rate_hz, samples,
                             ChannelSet(tuple(frame.columns)))
    except NonFiniteValueError as exc:
        raise NonFiniteValueError(f"{path.name}: non-finite value at row {exc.row}",
                                  row=exc.row) from None


def load_session(manifest: DatasetManifest, user_id: int, session_id: int) -> SessionRecord:
    e = manifest.entry(user_id, session_id)
    return read_session_file(manifest.root / e.path, user_id, session_id,
                             manifest.sample_rate_hz, expected_samples=e.n_samples)


def iter_sessions(manifest: DatasetManifest) -> Iterable[SessionRecord]:
    for e in manifest.entries:
        yield load_session(manifest, e.user_id, e.session_id)


def write_session(record: SessionRecord, path) -> Path:
    """Write ``record`` in canonical CSV form (shortest round-trip floats)."""
    path = Path(path)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(record.channels.labels) + "\n")
        for row in record.samples.tolist():
            fh.write(",".join(map(repr, row)) + "\n")
    return path


def write_dataset(records: Iterable[SessionRecord], out_dir) -> DatasetManifest:
    """Write sessions plus ``manifest.json`` into ``out_dir``, one record at a time."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries, rates = [], set()
    for r in records:
        rates.add(r.sample_rate_hz)
        if len(rates) != 1:
            raise DataError("all sessions must share one sample rate")
        name = session_filename(r.user_id, r.session_id)
        write_session(r, out_dir / name)
        entries.append(ManifestEntry(r.user_id, r.session_id, name, r.n_samples))
    if not entries:
        raise EmptyManifestError("empty manifest")
    entries.sort(key=lambda e: (e.user_id, e.session_id))
    manifest = DatasetManifest(out_dir.resolve(), rates.pop(), tuple(entries))
    write_manifest(manifest)
    return manifest


# ---------------------------------------------------------------------------
# Synthetic recordings


class UnstableModelError(ConfigError):
    pass


# Drifted sessions keep every AR root inside this radius.
DRIFT_MAX_ROOT = 0.97


def ar_is_stable(coefs) -> bool:
    """True when x_t = sum_k coefs[k] x_{t-k-1} + e_t has all roots inside the unit circle."""
    coefs = np.asarray(coefs, dtype=np.float64)
    roots = np.roots(np.r_[1.0, -coefs])
    return bool(np.all(np.abs(roots) < 1.0))


def _ar_from_poles(radii, angles) -> np.ndarray:
    poly = np.array([1.0])
    for r, th in zip(radii, angles):
        poly = np.convolve(poly, [1.0, -2.0 * r * math.cos(th), r * r])
    return -poly[1:]


@dataclass
class SyntheticSpec:
    """Parameters of the seeded stand-in recordings.

    Each (user, channel) gets an order-4 autoregressive noise process and two
    sinusoidal components, one in the alpha and one in the beta band. When
    the signature arrays are left as ``None`` they are drawn from ``seed``.
    """

    n_users: int = 12
    n_sessions: int = 9
    session_seconds: float = 60.0
    sample_rate_hz: float = 500.0
    seed: int = 0
    session_drift: float = 0.005
    ar_coefficients: np.ndarray | None = None  # (users, 32, 4)
    band_weights: np.ndarray | None = None     # (users, 32, 2), microvolts
    noise_gain: np.ndarray | None = None       # (users, 32), microvolts
    band_frequencies: np.ndarray | None = None  # (users, 2), Hz

    def __post_init__(self):
        if self.n_users < 1 or self.n_sessions < 1:
            raise ConfigError("n_users and n_sessions must be positive")
        if not (self.session_seconds > 0 and self.sample_rate_hz > 0):
            raise ConfigError("session_seconds and sample_rate_hz must be positive")
        if self.session_drift < 0:
            raise ConfigError("session_drift must be nonnegative")
        shapes = {
            "ar_coefficients": (self.n_users, N_CHANNELS, 4),
            "band_weights": (self.n_users, N_CHANNELS, 2),
            "noise_gain": (self.n_users, N_CHANNELS),
            "band_frequencies": (self.n_users, 2),
        }
        for name, shape in shapes.items():
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value, dtype=np.float64)
                if value.shape != shape:
                    raise ConfigError(f"{name} must have shape {shape}, got {value.shape}")
                setattr(self, name, value)
        if self.ar_coefficients is not None:
            for u in range(self.n_users):
                for c in range(N_CHANNELS):
                    if not ar_is_stable(self.ar_coefficients[u, c]):
                        raise UnstableModelError(
                            f"unstable AR parameters for user {u + 1}, channel {c}"
                        )

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            out[name] = value.tolist() if isinstance(value, np.ndarray) else value
        return out

    def signatures(self) -> dict[str, np.ndarray]:
        """Resolve per-user signature arrays, drawing any that were not given."""
        gen = seeding.rng(self.seed, "synthetic", 0)
        fs = self.sample_rate_hz
        n, c = self.n_users, N_CHANNELS
        # Draw everything unconditionally so explicit overrides do not shift the stream.
        r1 = gen.uniform(0.55, 0.85, (n, c))
        f1 = gen.uniform(1.0, 6.0, (n, c))
        r2 = gen.uniform(0.30, 0.70, (n, c))
        f2 = gen.uniform(15.0, 40.0, (n, c))
        gain = 10.0 * np.exp(gen.normal(0.0, 0.35, (n, c)))
        weights = 8.0 * gen.uniform(0.0, 1.0, (n, c, 2))
        freqs = np.stack([gen.uniform(8.0, 13.0, n), gen.uniform(14.0, 30.0, n)], axis=1)
        ar = np.empty((n, c, 4))
        for u in range(n):
            for ch in range(c):
                ar[u, ch] = _ar_from_poles(
                    (r1[u, ch], r2[u, ch]),
                    (2 * math.pi * f1[u, ch] / fs, 2 * math.pi * f2[u, ch] / fs),
                )
        pick = lambda given, drawn: drawn if given is None else given  # noqa: E731
        return {
            "ar_coefficients": pick(self.ar_coefficients, ar),
            "band_weights": pick(self.band_weights, weights),
            "noise_gain": pick(self.noise_gain, gain),
            "band_frequencies": pick(self.band_frequencies, freqs),
        }


def _drifted(coefs, scale, gen, margin=DRIFT_MAX_ROOT, tries=1000):
    """Gaussian coefficient drift, redrawn until every root stays within ``margin``."""
    if scale == 0:
        return coefs
    for _ in range(tries):
        cand = coefs + gen.normal(0.0, scale, coefs.shape)
        if np.abs(np.roots(np.r_[1.0, -cand])).max() < margin:
            return cand
    return None


def generate_synthetic(spec: SyntheticSpec) -> list[SessionRecord]:
    """Generate ``n_users * n_sessions`` records, ordered by (user, session)."""
    sig = spec.signatures()
    fs = spec.sample_rate_hz
    n_samples = int(round(spec.session_seconds * fs))
    burn_in = int(fs)
    t = np.arange(n_samples) / fs
    records = []
    for u in range(spec.n_users):
        for s in range(spec.n_sessions):
            gen = seeding.rng(spec.seed, "synthetic", u + 1, s + 1)
            phases = gen.uniform(0.0, 2 * math.pi, (N_CHANNELS, 2))
            noise = gen.standard_normal((N_CHANNELS, n_samples + burn_in))
            drift_gen = seeding.rng(spec.seed, "synthetic", u + 1, s + 1, 1)
            data = np.empty((n_samples, N_CHANNELS))
            for ch in range(N_CHANNELS):
                coefs = _drifted(sig["ar_coefficients"][u, ch], spec.session_drift, drift_gen)
                if coefs is None:
                    raise UnstableModelError(
                        f"unstable AR parameters after session drift "
                        f"(user {u + 1}, session {s + 1}, channel {ch})"
                    )
                ar = signal.lfilter([1.0], np.r_[1.0, -coefs], noise[ch])[burn_in:]
                bands = sum(
                    sig["band_weights"][u, ch, b]
                    * np.sin(2 * math.pi * sig["band_frequencies"][u, b] * t + phases[ch, b])
                    for b in range(2)
                )
                data[:, ch] = sig["noise_gain"][u, ch] * ar + bands
            records.append(SessionRecord(u + 1, s + 1, fs, data))
    logger.debug("generated %d synthetic sessions", len(records))
    return records


# ---------------------------------------------------------------------------
# Table-I style statistics


@dataclass(frozen=True)
class DatasetStats:
    stage: str
    n_entries: int
    total: int
    average: float
    median: float
    minimum: int
    maximum: int
    std: float
    std_population: float
    std_sample: float
    ddof: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def dataset_stats(counts: Sequence[tuple[int, int, int]], stage: str = "pre-processing",
                  per: str = "entry", ddof: int = 0) -> DatasetStats:
    """Summarise (user, session, count) triples.

    ``per="user"`` first sums counts per user, so 108 recordings of 12 users
    become 12 values.
    """
    counts = list(counts)
    if not counts:
        raise DataError("dataset_stats needs at least one count")
    if per == "entry":
        values = [int(c) for _, _, c in counts]
    elif per == "user":
        by_user: dict[int, int] = {}
        for user, _, c in counts:
            by_user[user] = by_user.get(user, 0) + int(c)
        values = [by_user[u] for u in sorted(by_user)]
    else:
        raise ConfigError(f"per must be 'entry' or 'user', not {per!r}")
    if ddof not in (0, 1):
        raise ConfigError("ddof must be 0 or 1")
    total = sum(values)
    pop = statistics.pstdev(values)
    samp = statistics.stdev(values) if len(values) > 1 else 0.0
    return DatasetStats(
        stage=stage,
        n_entries=len(values),
        total=total,
        average=total / len(values),
        median=float(statistics.median(values)),
        minimum=min(values),
        maximum=max(values),
        std=pop if ddof == 0 else samp,
        std_population=pop,
        std_sample=samp,
        ddof=ddof,
    )
