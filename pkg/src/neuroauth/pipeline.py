"""End-to-end run: data -> filter -> windows -> features -> authentication -> stats."""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
import logging
from pathlib import Path
from typing import Iterable

from . import __version__
from .config import RunConfig
from .dsp import apply_filter, design_bandpass, segment_windows
from .errors import ConfigError, DataError, NeuroAuthError, StageError
from .features import FeatureMatrix, build_feature_matrix
from .ingest import SessionRecord, dataset_stats, generate_synthetic, iter_sessions, load_manifest
from .protocol import AGGREGATE_METRICS, aggregate_rows, run_authentication, run_pilot
from .stats import hypothesis_block

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
REPORT_NAME = "report.json"


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def load_records(config: RunConfig) -> Iterable[SessionRecord]:
    """Session records in (user, session) order, loaded lazily."""
    config.require_source()
    if config.synthetic is not None:
        return generate_synthetic(config.synthetic)
    manifest = load_manifest(config.manifest_path())
    if manifest.sample_rate_hz != config.bandpass.sample_rate_hz:
        raise ConfigError(
            f"bandpass designed for {config.bandpass.sample_rate_hz} Hz but the manifest "
            f"declares {manifest.sample_rate_hz} Hz"
        )
    return iter_sessions(manifest)


def extract(config: RunConfig, records: Iterable[SessionRecord] | None = None):
    """Filter, window and featurise every session.

    Returns the feature matrix and the (user, session, count) triples before
    and after windowing.
    """
    if records is None:
        records = load_records(config)
    filt = design_bandpass(config.bandpass)
    parts, pre, post = [], [], []
    for rec in records:
        ws = segment_windows(apply_filter(filt, rec), config.window)
        pre.append((rec.user_id, rec.session_id, rec.n_samples))
        post.append((rec.user_id, rec.session_id, len(ws)))
        parts.append(build_feature_matrix([ws], config.excess_kurtosis))
    if not parts:
        raise DataError("no sessions to process")
    return FeatureMatrix.concat(parts), pre, post


def dataset_block(pre, post, ddof: int = 0) -> dict:
    block = {"std_convention": "population" if ddof == 0 else "sample"}
    for stage, counts in (("pre_processing", pre), ("post_processing", post)):
        block[stage] = {
            "per_user": dataset_stats(counts, stage, per="user", ddof=ddof).to_dict(),
            "per_session": dataset_stats(counts, stage, per="entry", ddof=ddof).to_dict(),
        }
    block["sessions"] = [
        {"user_id": u, "session_id": s, "samples": n, "windows": w}
        for (u, s, n), (_, _, w) in zip(pre, post)
    ]
    return block


def per_family_values(families: dict, metrics=("test_accuracy", "test_f1")) -> dict:
    return {fam: {m: [row[m] for row in body["users"]] for m in metrics}
            for fam, body in families.items()}


def run(config: RunConfig, features: FeatureMatrix | None = None,
        write: bool = True) -> dict:
    """Execute the whole pipeline and return the report.

    ``features`` skips the data stages when a feature matrix is already at
    hand. When ``write`` is set and ``config.output_dir`` is given, the report
    and plot tables are written there after every worker has finished.
    """
    started = _now()
    report: dict = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "complete": False,
        "provenance": {
            "package_version": __version__,
            "config_hash": config.config_hash(),
            "seed": config.seed,
            "timestamps": {"started": started, "finished": None},
        },
        "config": config.computational_dict(),
    }
    try:
        if features is None:
            try:
                features, pre, post = extract(config)
            except (DataError, ConfigError):
                raise
            except NeuroAuthError as exc:
                raise StageError("preprocess", str(exc),
                                 hint="check the bandpass and window settings") from exc
            report["dataset"] = dataset_block(pre, post, config.std_ddof)
        else:
            report["dataset"] = None
        report["n_features"] = int(features.values.shape[1])

        auth = run_authentication(features, config.auth_settings())
        report["split_sizes"] = auth["split_sizes"]
        report["families"] = auth["families"]
        report["failures"] = auth["failures"]
        report["hypothesis_tests"] = hypothesis_block(per_family_values(auth["families"]))

        report["pilot"] = {}
        if config.pilot.enabled:
            for clf in config.pilot.classifiers:
                try:
                    report["pilot"][clf] = run_pilot(
                        features, clf, config.pilot.train_fraction,
                        config.pilot.chronological, config.seed)
                except DataError as exc:
                    raise StageError("pilot", str(exc), hint="the pilot needs two users") from exc
        report["complete"] = auth["complete"]
    finally:
        report["provenance"]["timestamps"]["finished"] = _now()
        if write and config.output_dir:
            write_outputs(report, config.output_path())
    return report


# ---------------------------------------------------------------------------
# Output


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, allow_nan=False) + "\n"


def strip_timestamps(report: dict) -> dict:
    out = json.loads(json.dumps(report))
    out.get("provenance", {}).pop("timestamps", None)
    return out


def _csv(rows: list[list], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def plot_tables(report: dict) -> dict[str, str]:
    """Plain-text tables behind the per-user bar charts and the pilot confusions."""
    tables = {}
    families = report.get("families") or {}
    sel, val, test = [], [], []
    for fam, body in families.items():
        for row in body["users"]:
            uid = row["user_id"]
            sel.append([uid, fam, repr(row["threshold"]), row["n_selected"]])
            val.append([uid, fam, repr(row["val_accuracy"])])
            test.append([uid, fam, repr(row["test_accuracy"]), repr(row["test_f1"])])
    if families:
        tables["selected_features.csv"] = _csv(sel, ["user_id", "family", "threshold",
                                                     "n_selected"])
        tables["val_accuracy.csv"] = _csv(val, ["user_id", "family", "val_accuracy"])
        tables["test_metrics.csv"] = _csv(test, ["user_id", "family", "test_accuracy",
                                                 "test_f1"])
        summary = []
        for fam, body in families.items():
            for metric in AGGREGATE_METRICS:
                agg = body["aggregate"][metric]
                summary.append([fam, metric] + [repr(agg[k]) for k in
                                                ("average", "maximum", "minimum",
                                                 "median", "std")])
        tables["summary.csv"] = _csv(summary, ["family", "metric", "average", "maximum",
                                               "minimum", "median", "std"])
    for clf, pilot in (report.get("pilot") or {}).items():
        labels = pilot["labels"]
        rows = [[t] + counts for t, counts in zip(labels, pilot["confusion"])]
        tables[f"pilot_confusion_{clf}.csv"] = _csv(
            rows, ["true\\predicted"] + [str(u) for u in labels])
    dataset = report.get("dataset")
    if dataset:
        rows = [[s["user_id"], s["session_id"], s["samples"], s["windows"]]
                for s in dataset["sessions"]]
        tables["dataset_counts.csv"] = _csv(rows, ["user_id", "session_id", "samples",
                                                   "windows"])
    return tables


def write_outputs(report: dict, out_dir) -> Path:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / REPORT_NAME).write_text(dumps_report(report))
        for name, text in plot_tables(report).items():
            (out_dir / name).write_text(text)
    except OSError as exc:
        raise DataError(f"cannot write outputs to {out_dir}: {exc}") from exc
    return out_dir / REPORT_NAME


def load_report(path) -> dict:
    try:
        report = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise DataError(f"report not found: {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read report {path}: {exc}") from exc
    if report.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise DataError(f"unsupported report schema_version {report.get('schema_version')!r}")
    return report


def recompute_aggregates(report: dict, ddof: int | None = None) -> dict:
    """Aggregates rebuilt from the per-user rows, as an independent reader would."""
    if ddof is None:
        ddof = (report.get("config") or {}).get("std_ddof", 0)
    return {fam: aggregate_rows(body["users"], ddof)
            for fam, body in (report.get("families") or {}).items()}

