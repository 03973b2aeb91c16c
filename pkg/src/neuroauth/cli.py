"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 stage failure (including a run that finished with an incomplete report).
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import __version__
from .config import load_config, read_json
from .dsp import WindowSpec, apply_filter, design_bandpass, segment_windows
from .errors import ConfigError, DataError, NeuroAuthError, StageError
from .features import FeatureMatrix, build_feature_matrix, load_feature_matrix, save_feature_matrix
from .ingest import (
    SyntheticSpec,
    dataset_stats,
    generate_synthetic,
    iter_sessions,
    load_manifest,
    write_dataset,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_STAGE = 0, 1, 2, 3
PREPROCESS_META = "preprocess.json"


class IncompleteRun(NeuroAuthError):
    pass


def _echo_json(doc) -> None:
    click.echo(json.dumps(doc, indent=2, allow_nan=False))


def _abs(path):
    return None if path is None else str(Path(path).resolve())


def _config(config_path, **overrides):
    """Load the config and apply flag overrides; flag paths are relative to the cwd."""
    for key in ("manifest", "output_dir"):
        if overrides.get(key) is not None:
            overrides[key] = _abs(overrides[key])
    return load_config(config_path, overrides)


config_option = click.option("--config", "config_path", type=click.Path(dir_okay=False),
                             help="JSON run configuration; flags override its fields.")
seed_option = click.option("--seed", type=int, help="Global seed.")
workers_option = click.option("--workers", type=int, help="Per-user worker processes.")


@click.group()
@click.version_option(__version__, prog_name="neuroauth")
@click.option("-v", "--verbose", count=True, help="Log progress to stderr.")
def cli(verbose):
    """EEG user authentication: preprocessing, features, selection, classifiers, stats."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------------------
# Data


@cli.command()
@click.option("--spec", "spec_path", type=click.Path(dir_okay=False),
              help="JSON synthetic spec; defaults are used when omitted.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--users", type=int, help="Override n_users.")
@click.option("--sessions", type=int, help="Override n_sessions.")
@click.option("--seconds", type=float, help="Override session_seconds.")
@seed_option
def synth(spec_path, out_dir, users, sessions, seconds, seed):
    """Write a seeded synthetic dataset (session CSVs plus manifest.json)."""
    doc = read_json(spec_path, "synthetic spec") if spec_path else {}
    for key, value in (("n_users", users), ("n_sessions", sessions),
                       ("session_seconds", seconds), ("seed", seed)):
        if value is not None:
            doc[key] = value
    try:
        spec = SyntheticSpec.from_dict(doc)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic spec: {exc}") from exc
    manifest = write_dataset(generate_synthetic(spec), out_dir)
    _echo_json({"manifest": str(manifest.root / "manifest.json"),
                "users": manifest.users, "sessions": manifest.sessions,
                "entries": len(manifest.entries)})


@cli.group()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.pass_context
def ingest(ctx, manifest_path):
    """Inspect a dataset manifest."""
    ctx.obj = {"manifest": manifest_path}


@ingest.command("stats")
@click.option("--ddof", type=click.IntRange(0, 1), default=0, show_default=True,
              help="0 for population std, 1 for sample std.")
@click.option("--verify", is_flag=True, help="Read every session file to check it.")
@click.pass_context
def ingest_stats(ctx, ddof, verify):
    """Sample-count statistics per user and per session."""
    manifest = load_manifest(ctx.obj["manifest"])
    counts = [(e.user_id, e.session_id, e.n_samples) for e in manifest.entries]
    if verify:
        # Reading each file runs the channel, finiteness and row-count checks.
        for _ in iter_sessions(manifest):
            pass
    _echo_json({
        "sample_rate_hz": manifest.sample_rate_hz,
        "users": manifest.users,
        "sessions": manifest.sessions,
        "per_user": dataset_stats(counts, "pre-processing", "user", ddof).to_dict(),
        "per_session": dataset_stats(counts, "pre-processing", "entry", ddof).to_dict(),
        "verified": verify,
    })


@cli.command()
@config_option
@click.option("--manifest", type=click.Path(), help="Input dataset manifest.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--low", type=float, help="Low cut-off in Hz.")
@click.option("--high", type=float, help="High cut-off in Hz.")
@click.option("--order", type=int, help="Prototype order (even).")
@click.option("--window-ms", type=float, help="Window length in milliseconds.")
@click.option("--hop-samples", type=int, help="Hop between window starts.")
def preprocess(config_path, manifest, out_dir, low, high, order, window_ms, hop_samples):
    """Bandpass every session and record the window layout for feature extraction."""
    window = None
    if window_ms is not None:
        window = {"window_ms": window_ms, "hop_samples": hop_samples}
    cfg = _config(config_path, manifest=manifest, **{
        "bandpass.low_cut_hz": low, "bandpass.high_cut_hz": high, "bandpass.order": order,
        "window": window,
        "window.hop_samples": hop_samples if window is None else None,
    })
    from .pipeline import load_records

    filt = design_bandpass(cfg.bandpass)
    pre, post = [], []

    def filtered():
        for rec in load_records(cfg):
            out = apply_filter(filt, rec)
            pre.append((rec.user_id, rec.session_id, rec.n_samples))
            post.append((rec.user_id, rec.session_id, len(segment_windows(out, cfg.window))))
            yield out

    manifest_out = write_dataset(filtered(), out_dir)
    meta = {
        "bandpass": cfg.to_dict()["bandpass"],
        "window": cfg.to_dict()["window"],
        "sections": filt.sections.tolist(),
        "window_counts": [list(c) for c in post],
    }
    Path(out_dir, PREPROCESS_META).write_text(json.dumps(meta, indent=2) + "\n")
    _echo_json({
        "manifest": str(manifest_out.root / "manifest.json"),
        "pre_processing": dataset_stats(pre, "pre-processing", "user").to_dict(),
        "post_processing": dataset_stats(post, "post-processing", "user").to_dict(),
    })


@cli.command()
@config_option
@click.option("--in", "in_dir", required=True, type=click.Path(file_okay=False),
              help="Directory written by 'preprocess' (or a raw dataset).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def features(config_path, in_dir, out_dir):
    """Window and featurise every session into a feature table."""
    cfg = _config(config_path)
    meta_path = Path(in_dir, PREPROCESS_META)
    manifest = load_manifest(in_dir)
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text())
        window = WindowSpec(**meta["window"])
        filt = None
        bandpass = meta["bandpass"]
    else:
        window = cfg.window
        filt = design_bandpass(cfg.bandpass)
        bandpass = cfg.to_dict()["bandpass"]
    parts = []
    for rec in iter_sessions(manifest):
        if filt is not None:
            rec = apply_filter(filt, rec)
        parts.append(build_feature_matrix([segment_windows(rec, window)], cfg.excess_kurtosis))
    fm = FeatureMatrix.concat(parts)
    save_feature_matrix(fm, out_dir, extra={
        "window": {"window_len_samples": window.window_len_samples,
                   "hop_samples": window.hop_samples},
        "bandpass": bandpass,
    })
    _echo_json({"rows": fm.n_rows, "columns": len(fm.columns), "out": str(out_dir)})


# ---------------------------------------------------------------------------
# Per-user stages


def _splits(cfg, features_dir):
    from .protocol import split_sessions

    fm, _ = load_feature_matrix(features_dir)
    return fm, split_sessions(fm, cfg.split)


@cli.command()
@config_option
@click.option("--features", "features_dir", required=True, type=click.Path(file_okay=False))
@click.option("--user", "user_id", required=True, type=int)
@seed_option
@click.option("--family", default="nlsvm", show_default=True,
              type=click.Choice(["knn", "lda", "lsvm", "nlsvm"]),
              help="Classifier whose default cell scores the threshold candidates.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
def select(config_path, features_dir, user_id, seed, family, out_path):
    """Feature importances and the tuned selection mask for one user."""
    from .featsel import default_threshold_candidates
    from .protocol import prepare_user, select_for_family

    cfg = _config(config_path, seed=seed)
    fm, (train, val, _) = _splits(cfg, features_dir)
    settings = cfg.auth_settings()
    prep = prepare_user(train, val, user_id, settings)
    mask = select_for_family(prep, family, settings)
    candidates = cfg.threshold_candidates or default_threshold_candidates(len(fm.columns))
    doc = {
        "user_id": user_id,
        "seed": cfg.seed,
        "family": family,
        "columns": list(fm.columns),
        "importances": prep.importances.tolist(),
        "candidates": [
            {"threshold": t, "n_selected": int((prep.importances >= t).sum())}
            for t in candidates
        ],
        "selection": mask.to_dict(),
    }
    if out_path:
        Path(out_path).write_text(json.dumps(doc, indent=2) + "\n")
    _echo_json({k: doc[k] for k in ("user_id", "seed", "family", "candidates")}
               | {"threshold": mask.threshold, "n_selected": len(mask)})


@cli.command()
@config_option
@click.option("--features", "features_dir", required=True, type=click.Path(file_okay=False))
@click.option("--classifier", "family", required=True,
              type=click.Choice(["knn", "lda", "lsvm", "nlsvm"]))
@click.option("--grid", "grid_path", type=click.Path(dir_okay=False),
              help="JSON list of grid cells for this classifier.")
@click.option("--user", "user_id", required=True, type=int)
@seed_option
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def train(config_path, features_dir, family, grid_path, user_id, seed, out_path):
    """Select features and grid-search one classifier for one user; save the model."""
    from .classifiers import save_model, spec_to_dict
    from .protocol import fit_user

    grids = None
    if grid_path:
        cells = read_json(grid_path, "grid")
        if isinstance(cells, dict):
            cells = cells.get(family)
        grids = {family: cells}
    cfg = _config(config_path, seed=seed, families=[family], grids=grids)
    _, (train_fm, val_fm, _) = _splits(cfg, features_dir)
    fitted = fit_user(train_fm, val_fm, user_id, cfg.auth_settings())
    result = fitted.grids[family]
    out = Path(out_path)
    save_model(result.model, out)
    side = {
        "user_id": user_id,
        "seed": cfg.seed,
        "family": family,
        "hyperparameters": spec_to_dict(result.spec),
        "val_accuracy": result.val_accuracy,
        "selection": fitted.selections[family].to_dict(),
        "normalizer": fitted.normalizer.to_dict(),
        "grid": result.cells,
    }
    out.with_suffix(".meta.json").write_text(json.dumps(side, indent=2) + "\n")
    _echo_json({k: side[k] for k in ("user_id", "family", "hyperparameters", "val_accuracy")}
               | {"n_selected": len(fitted.selections[family]), "model": str(out)})


# ---------------------------------------------------------------------------
# Whole runs


def _report_out(out_path):
    out = Path(out_path)
    return out.parent if out.suffix == ".json" else out


@cli.command()
@config_option
@click.option("--manifest", type=click.Path(), help="Dataset manifest (replaces 'synthetic').")
@click.option("--features", "features_dir", type=click.Path(file_okay=False),
              help="Reuse a feature table instead of processing raw sessions.")
@click.option("--out", "out_path", type=click.Path(),
              help="Report path (report.json) or output directory.")
@seed_option
@workers_option
@click.option("--families", help="Comma-separated classifier families.")
@click.option("--permute-labels/--no-permute-labels", default=None,
              help="Label-permuted control run.")
@click.option("--balance-eval/--no-balance-eval", default=None,
              help="Balance validation and test rows like the training rows.")
@click.option("--no-pilot", is_flag=True, default=None, help="Skip the multi-class pilot.")
def auth(config_path, manifest, features_dir, out_path, seed, workers, families,
         permute_labels, balance_eval, no_pilot):
    """Full pipeline: features, per-user authentication, aggregates, stats and pilot."""
    from .pipeline import REPORT_NAME, run

    cfg = _config(config_path, manifest=manifest, seed=seed, workers=workers,
                  families=families.split(",") if families else None,
                  permute_labels=permute_labels, balance_eval=balance_eval,
                  output_dir=str(_report_out(out_path)) if out_path else None,
                  **{"pilot.enabled": False if no_pilot else None})
    if features_dir is None:
        cfg.require_source()
    fm = load_feature_matrix(features_dir)[0] if features_dir else None
    report = run(cfg, features=fm)
    summary = {fam: {m: body["aggregate"][m]["average"]
                     for m in ("val_accuracy", "test_accuracy", "test_f1", "n_selected")}
               for fam, body in report["families"].items()}
    _echo_json({"complete": report["complete"], "summary": summary,
                "report": str(cfg.output_path() / REPORT_NAME) if cfg.output_dir else None})
    if not report["complete"]:
        raise IncompleteRun("run finished with failed users; see 'failures' in the report")


@cli.command()
@config_option
@click.option("--classifier", required=True, type=click.Choice(["lda", "svm"]))
@click.option("--manifest", type=click.Path())
@click.option("--features", "features_dir", type=click.Path(file_okay=False))
@click.option("--train-fraction", type=float)
@click.option("--shuffle", is_flag=True, help="Random rather than chronological split.")
@seed_option
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
def pilot(config_path, classifier, manifest, features_dir, train_fraction, shuffle, seed,
          out_path):
    """Multi-class identification pilot over all users."""
    from .pipeline import extract
    from .protocol import run_pilot

    cfg = _config(config_path, manifest=manifest, seed=seed,
                  **{"pilot.train_fraction": train_fraction,
                     "pilot.chronological": False if shuffle else None})
    fm = load_feature_matrix(features_dir)[0] if features_dir else extract(cfg)[0]
    result = run_pilot(fm, classifier, cfg.pilot.train_fraction, cfg.pilot.chronological,
                       cfg.seed)
    result["seed"] = cfg.seed
    if out_path:
        Path(out_path).write_text(json.dumps(result, indent=2) + "\n")
    _echo_json({k: result[k] for k in ("classifier", "accuracy", "n_train", "n_test", "labels",
                                       "confusion")})


@cli.command()
@click.option("--report", "report_path", required=True, type=click.Path(dir_okay=False))
@click.option("--welch", is_flag=True, help="Welch t-test instead of pooled variance.")
def stats(report_path, welch):
    """Recompute the hypothesis-test block from a report's per-user rows and store it."""
    from .pipeline import dumps_report, load_report, per_family_values
    from .stats import hypothesis_block

    report = load_report(report_path)
    if not report.get("families"):
        raise DataError("report has no per-user rows")
    block = hypothesis_block(per_family_values(report["families"]), equal_var=not welch)
    report["hypothesis_tests"] = block
    Path(report_path).write_text(dumps_report(report))
    _echo_json(block)


@cli.command()
@click.option("--report", "report_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              help="Where to write the plot tables (default: next to the report).")
def report(report_path, out_dir):
    """Check the aggregates against the rows and write the plot-data tables."""
    from .pipeline import load_report, plot_tables, recompute_aggregates

    doc = load_report(report_path)
    fresh = recompute_aggregates(doc)
    mismatched = [fam for fam, agg in fresh.items()
                  if agg != doc["families"][fam]["aggregate"]]
    if mismatched:
        raise DataError(f"aggregates disagree with the per-user rows for {mismatched}")
    out = Path(out_dir) if out_dir else Path(report_path).parent
    out.mkdir(parents=True, exist_ok=True)
    tables = plot_tables(doc)
    for name, text in tables.items():
        (out / name).write_text(text)
    click.echo(tables.get("summary.csv", ""), nl=False)
    click.echo(f"wrote {len(tables)} tables to {out}", err=True)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="neuroauth", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_USAGE
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except (StageError, NeuroAuthError) as exc:
        click.echo(f"stage failure: {exc}", err=True)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
