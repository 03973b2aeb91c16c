"""Run configuration: one JSON document, validated before any work starts."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .classifiers import default_grid, spec_from_dict, spec_to_dict
from .classifiers.specs import FAMILIES
from .dsp import BandpassSpec, WindowSpec
from .errors import ConfigError, DataError
from .featsel import ExtraTreesSpec
from .ingest import SyntheticSpec
from .protocol import AuthSettings, SplitPlan

CONFIG_SCHEMA_VERSION = 1

# Keys that change how a run executes but never what it computes.
EXECUTION_KEYS = ("workers", "output_dir")


@dataclass(frozen=True)
class PilotConfig:
    enabled: bool = True
    classifiers: tuple = ("lda", "svm")
    train_fraction: float = 0.8
    chronological: bool = True

    def __post_init__(self):
        bad = [c for c in self.classifiers if c not in ("lda", "svm")]
        if bad:
            raise ConfigError(f"pilot classifiers must be 'lda' or 'svm', got {bad}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("pilot train_fraction must lie strictly between 0 and 1")


@dataclass(frozen=True)
class RunConfig:
    manifest: str | None = None
    synthetic: SyntheticSpec | None = None
    bandpass: BandpassSpec = BandpassSpec()
    window: WindowSpec = WindowSpec()
    extra_trees: ExtraTreesSpec = ExtraTreesSpec()
    threshold_candidates: tuple | None = None
    families: tuple = ("lsvm", "nlsvm")
    grids: dict | None = None
    split: SplitPlan = SplitPlan()
    seed: int = 0
    workers: int = 1
    output_dir: str | None = None
    balance_eval: bool = False
    permute_labels: bool = False
    std_ddof: int = 0
    excess_kurtosis: bool = True
    pilot: PilotConfig = PilotConfig()
    base_dir: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.manifest is not None and self.synthetic is not None:
            raise ConfigError("give only one of 'manifest' or 'synthetic'")
        bad = [f for f in self.families if f not in FAMILIES]
        if bad or not self.families:
            raise ConfigError(f"families must be a non-empty subset of {FAMILIES}, got {bad}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.std_ddof not in (0, 1):
            raise ConfigError("std_ddof must be 0 or 1")
        if self.threshold_candidates is not None:
            if not self.threshold_candidates or any(t < 0 for t in self.threshold_candidates):
                raise ConfigError("threshold_candidates must be non-negative and non-empty")
        if self.synthetic is not None:
            if self.synthetic.sample_rate_hz != self.bandpass.sample_rate_hz:
                raise ConfigError("bandpass sample_rate_hz must match the synthetic sample rate")
            have = set(range(1, self.synthetic.n_sessions + 1))
            plan = set(self.split.train + self.split.val + self.split.test)
            if not plan <= have:
                raise ConfigError(f"split sessions {sorted(plan - have)} exceed n_sessions")

    def grid(self, family: str) -> list:
        if self.grids and family in self.grids:
            return list(self.grids[family])
        return default_grid(family)

    def require_source(self) -> None:
        if self.manifest is None and self.synthetic is None:
            raise ConfigError("no data source: set 'manifest' or 'synthetic'")

    def _resolve(self, value) -> Path | None:
        """Relative paths are taken from the config file's directory."""
        if value is None:
            return None
        p = Path(value)
        if not p.is_absolute() and self.base_dir:
            p = Path(self.base_dir) / p
        return p

    def manifest_path(self) -> Path | None:
        return self._resolve(self.manifest)

    def output_path(self) -> Path | None:
        return self._resolve(self.output_dir)

    def auth_settings(self) -> AuthSettings:
        return AuthSettings(
            plan=self.split,
            extra_trees=self.extra_trees,
            threshold_candidates=self.threshold_candidates,
            families=self.families,
            grids={f: self.grid(f) for f in self.families},
            seed=self.seed,
            balance_eval=self.balance_eval,
            permute_labels=self.permute_labels,
            workers=self.workers,
            std_ddof=self.std_ddof,
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "manifest": self.manifest,
            "synthetic": None if self.synthetic is None else self.synthetic.to_dict(),
            "bandpass": asdict(self.bandpass),
            "window": asdict(self.window),
            "extra_trees": {k: v for k, v in asdict(self.extra_trees).items() if k != "seed"},
            "threshold_candidates": (None if self.threshold_candidates is None
                                     else list(self.threshold_candidates)),
            "families": list(self.families),
            "grids": {f: [_cell_to_dict(s) for s in self.grid(f)] for f in self.families},
            "split": self.split.to_dict(),
            "seed": self.seed,
            "workers": self.workers,
            "output_dir": self.output_dir,
            "balance_eval": self.balance_eval,
            "permute_labels": self.permute_labels,
            "std_ddof": self.std_ddof,
            "excess_kurtosis": self.excess_kurtosis,
            "pilot": {**asdict(self.pilot), "classifiers": list(self.pilot.classifiers)},
        }

    def computational_dict(self) -> dict:
        """The config without execution-only keys; identical runs share it."""
        doc = self.to_dict()
        for key in EXECUTION_KEYS:
            doc.pop(key, None)
        return doc

    def config_hash(self) -> str:
        text = json.dumps(self.computational_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _cell_to_dict(spec) -> dict:
    doc = spec_to_dict(spec)
    doc.pop("seed", None)  # per-user seeds are derived from the run seed
    return doc


def _grid_from_doc(doc) -> dict | None:
    if doc is None:
        return None
    if not isinstance(doc, dict):
        raise ConfigError("grids must map a family name to a list of cells")
    out = {}
    for family, cells in doc.items():
        if family not in FAMILIES:
            raise ConfigError(f"unknown classifier family {family!r} in grids")
        if not isinstance(cells, list) or not cells:
            raise ConfigError(f"grid for {family!r} must be a non-empty list")
        specs = []
        for cell in cells:
            cell = dict(cell)
            if cell.setdefault("family", family) != family:
                raise ConfigError(f"cell {cell} listed under family {family!r}")
            try:
                specs.append(spec_from_dict(cell))
            except TypeError as exc:
                raise ConfigError(f"bad grid cell {cell}: {exc}") from exc
        out[family] = specs
    return out


def _build(cls, doc, name):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"'{name}' must be an object")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(f"bad '{name}' section: {exc}") from exc


def _window_from_doc(doc, sample_rate_hz: float) -> WindowSpec:
    if doc is None:
        return WindowSpec()
    doc = dict(doc)
    if "window_ms" in doc:
        ms = doc.pop("window_ms")
        hop = doc.pop("hop_samples", None)
        if doc:
            raise ConfigError(f"unexpected window keys {sorted(doc)}")
        return WindowSpec.from_ms(ms, sample_rate_hz, hop)
    return _build(WindowSpec, doc, "window")


KNOWN_KEYS = {
    "schema_version", "manifest", "synthetic", "bandpass", "window", "extra_trees",
    "threshold_candidates", "families", "grids", "split", "seed", "workers", "output_dir",
    "balance_eval", "permute_labels", "std_ddof", "excess_kurtosis", "pilot",
}


def config_from_dict(doc: dict, base_dir=None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    version = doc.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version!r}")
    synthetic = doc.get("synthetic")
    if synthetic is not None:
        if isinstance(synthetic, str):
            path = Path(synthetic)
            if not path.is_absolute() and base_dir:
                path = Path(base_dir) / path
            synthetic = read_json(path, "synthetic spec")
        try:
            synthetic = SyntheticSpec.from_dict(synthetic)
        except TypeError as exc:
            raise ConfigError(f"bad 'synthetic' section: {exc}") from exc
    bandpass = _build(BandpassSpec, doc.get("bandpass"), "bandpass")
    extra = dict(doc.get("extra_trees") or {})
    if "seed" in extra:
        raise ConfigError("extra_trees seeds derive from the run seed; set 'seed' instead")
    split = doc.get("split")
    if split is not None and not isinstance(split, dict):
        raise ConfigError("'split' must be an object")
    pilot = dict(doc.get("pilot") or {})
    if "classifiers" in pilot:
        pilot["classifiers"] = tuple(pilot["classifiers"])
    thresholds = doc.get("threshold_candidates")
    return RunConfig(
        manifest=doc.get("manifest"),
        synthetic=synthetic,
        bandpass=bandpass,
        window=_window_from_doc(doc.get("window"), bandpass.sample_rate_hz),
        extra_trees=_build(ExtraTreesSpec, extra, "extra_trees"),
        threshold_candidates=None if thresholds is None else tuple(float(t) for t in thresholds),
        families=tuple(doc.get("families", ("lsvm", "nlsvm"))),
        grids=_grid_from_doc(doc.get("grids")),
        split=_build(SplitPlan, {k: tuple(v) for k, v in (split or {}).items()}, "split"),
        seed=int(doc.get("seed", 0)),
        workers=int(doc.get("workers", 1)),
        output_dir=doc.get("output_dir"),
        balance_eval=bool(doc.get("balance_eval", False)),
        permute_labels=bool(doc.get("permute_labels", False)),
        std_ddof=int(doc.get("std_ddof", 0)),
        excess_kurtosis=bool(doc.get("excess_kurtosis", True)),
        pilot=_build(PilotConfig, pilot, "pilot"),
        base_dir=None if base_dir is None else str(base_dir),
    )


def read_json(path, what: str = "config") -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"{what} file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file {path} is not valid JSON: {exc}") from exc
    except OSError as exc:
        raise DataError(f"cannot read {what} file {path}: {exc}") from exc


def merge_overrides(doc: dict, overrides: dict) -> dict:
    """Apply dotted-key overrides (``"bandpass.order": 6``); ``None`` values are skipped."""
    doc = copy.deepcopy(doc)
    for key, value in overrides.items():
        if value is None:
            continue
        parts = key.split(".")
        node = doc
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            elif not isinstance(child, dict):
                raise ConfigError(f"cannot override {key}: '{part}' is not an object")
            node = child
        node[parts[-1]] = value
    if overrides.get("manifest") is not None:
        doc.pop("synthetic", None)
    elif overrides.get("synthetic") is not None:
        doc.pop("manifest", None)
    return doc


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    doc = read_json(path) if path is not None else {}
    base = Path(path).resolve().parent if path is not None else None
    return config_from_dict(merge_overrides(doc, overrides or {}), base_dir=base)
