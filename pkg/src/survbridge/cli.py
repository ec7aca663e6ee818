"""Command-line front end for reproducible batch runs.

Subcommands: simulate, fit, tune, reproduce, stability, predict. Every run
writes a manifest.json with the fully resolved configuration, the seed, and
the tool version; outputs are UTF-8 CSV/JSON and stdout only carries a
human-readable summary.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .cohort import DataError, filter_missing, load_csv
from .evaluate import (
    CORRELATION_ROWS,
    TABLE_SETTINGS,
    FitSettings,
    fit_study,
    occurrence_index,
    predict_evaluate,
    reproduce_table,
)
from .simulate import SimDesign, generate_study, write_study

SHARING_CODE = {"hetero25": "h25", "hetero50": "h50", "homogeneous": "hom"}
CORRELATION_KEYS = {key: (kind, param) for key, _, kind, param in CORRELATION_ROWS}


def _build_presets():
    presets = {}
    for table, (case, sharing) in TABLE_SETTINGS.items():
        for key, _, kind, param in CORRELATION_ROWS:
            name = f"table{table}-{key}-case{case}-{SHARING_CODE[sharing]}"
            presets[name] = {
                "correlation_kind": kind, "correlation_param": param,
                "coeff_case": case, "sharing": sharing,
            }
    return presets


PRESETS = _build_presets()


def _resolve_threads(threads):
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("BRIDGE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise click.UsageError(f"BRIDGE_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _parse_gammas(text):
    try:
        gammas = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise click.UsageError(f"--gamma expects comma-separated numbers, got {text!r}")
    for g in gammas:
        if not 0 < g < 1:
            raise click.UsageError(f"gamma values must be in (0, 1), got {g}")
    return gammas


def _write_manifest(outdir, command, options, seed):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "options": {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(options.items())},
        "seed": seed,
        "version": __version__,
    }
    with open(outdir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _load_dataset(data_dir, subject_missing, snp_missing):
    data_dir = Path(data_dir)
    paths = [data_dir / name for name in ("genotype.csv", "survival.csv", "gene_map.csv")]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise click.UsageError(f"dataset directory is incomplete, missing: {', '.join(missing)}")
    try:
        ms = load_csv(*paths)
        return filter_missing(ms, subject_missing, snp_missing)
    except DataError as exc:
        raise click.UsageError(str(exc))


def _settings(gammas, lambda_grid, use_pca):
    return FitSettings(gammas=gammas, lambda_grid_size=lambda_grid, use_pca=use_pca)


def _run(func):
    try:
        func()
    except click.UsageError:
        raise
    except Exception as exc:  # runtime failure -> exit 1, config errors exit 2 above
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


@click.group()
@click.version_option(version=__version__)
def main():
    """Multi-subtype survival gene selection with a composite bridge penalty."""


@main.command()
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None,
              help="Named simulation cell (encodes correlation/case/sharing).")
@click.option("--correlation", type=click.Choice(sorted(CORRELATION_KEYS)), default="ar05")
@click.option("--case", type=click.Choice(["1", "2"]), default="1")
@click.option("--sharing", type=click.Choice(sorted(SHARING_CODE)), default="hetero25")
@click.option("--n-genes", type=int, default=200, show_default=True)
@click.option("--snps-per-gene", type=int, default=5, show_default=True)
@click.option("--n-per-subtype", type=int, default=100, show_default=True)
@click.option("--error-sd", type=float, default=1.0, show_default=True)
@click.option("--coef-scale", type=float, default=1.0, show_default=True)
@click.option("--replicate", type=int, default=0, show_default=True,
              help="Replicate substream index.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def simulate(preset, correlation, case, sharing, n_genes, snps_per_gene, n_per_subtype,
             error_sd, coef_scale, replicate, seed, out):
    """Generate one synthetic dataset (CSV triple + truth.json)."""
    def body():
        fields = {
            "n_genes": n_genes, "snps_per_gene": snps_per_gene,
            "n_per_subtype": n_per_subtype, "error_sd": error_sd,
            "coef_scale": coef_scale, "seed": seed,
        }
        if preset:
            fields.update(PRESETS[preset])
        else:
            kind, param = CORRELATION_KEYS[correlation]
            fields.update({"correlation_kind": kind, "correlation_param": param,
                           "coeff_case": int(case), "sharing": sharing})
        design = SimDesign(**fields)
        ms, truth = generate_study(design, replicate)
        _write_manifest(out, "simulate", {**fields, "replicate": replicate, "preset": preset}, seed)
        write_study(ms, truth, out)
        click.echo(f"wrote {ms.n} subjects x {ms.structure.dim // ms.structure.n_subtypes} SNPs "
                   f"({ms.structure.n_genes} genes, {ms.structure.n_subtypes} subtypes) to {out}")
    _run(body)


fit_options = [
    click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True),
    click.option("--gamma", default="0.5,0.7,0.9", show_default=True,
                 help="Comma-separated bridge exponents to tune over."),
    click.option("--lambda-grid", type=int, default=50, show_default=True),
    click.option("--use-pca", is_flag=True, default=False),
    click.option("--subject-missing", type=float, default=0.2, show_default=True),
    click.option("--snp-missing", type=float, default=0.2, show_default=True),
    click.option("--out", type=click.Path(), required=True),
]


def _with_options(options):
    def wrap(func):
        for opt in reversed(options):
            func = opt(func)
        return func
    return wrap


def _tune_dataset(data_dir, gamma, lambda_grid, use_pca, subject_missing, snp_missing):
    ms = _load_dataset(data_dir, subject_missing, snp_missing)
    settings = _settings(_parse_gammas(gamma), lambda_grid, use_pca)
    design, report = fit_study(ms, settings)
    return ms, design, report, settings


def _write_tuning(outdir, report):
    outdir = Path(outdir)
    report.to_csv(outdir / "tuning.csv")
    report.to_json(outdir / "tuning.json")
    frame = report.frame()
    frame[["gamma", "lam", "bic"]].to_csv(outdir / "bic_curves.tsv", sep="\t", index=False)


def _selection_table(fit, structure):
    """Wide gene x subtype table of block L2 norms for the selected pairs."""
    import pandas as pd

    norms = {}
    for gene, subtype, value in fit.block_norm_table():
        norms.setdefault(gene, {})[subtype] = value
    rows = [{"gene": g, **{s: norms[g].get(s, np.nan) for s in structure.subtype_ids}}
            for g in structure.gene_ids if g in norms]
    return pd.DataFrame(rows)


@main.command()
@_with_options(fit_options)
def fit(data_dir, gamma, lambda_grid, use_pca, subject_missing, snp_missing, out):
    """Tune and fit on a dataset directory; write the tuning report, the best
    fit, and the selected (gene, subtype) pairs with their block norms."""
    def body():
        ms, design, report, settings = _tune_dataset(
            data_dir, gamma, lambda_grid, use_pca, subject_missing, snp_missing)
        _write_manifest(out, "fit", {
            "data": str(data_dir), "gamma": list(settings.gammas),
            "lambda_grid": lambda_grid, "use_pca": use_pca,
            "subject_missing": subject_missing, "snp_missing": snp_missing,
        }, seed=None)
        _write_tuning(out, report)
        best = report.best_fit()
        with open(Path(out) / "fit.json", "w", encoding="utf-8") as fh:
            json.dump(best.to_dict(), fh, indent=2, sort_keys=True)
        table = _selection_table(best, design.structure)
        table.to_csv(Path(out) / "selection.csv", index=False)
        point = report.best_point()
        click.echo(f"best fit: gamma={point.gamma} lambda={point.lam:.6g} "
                   f"BIC={point.bic:.4f} selected={point.n_selected}")
        if len(table):
            click.echo(table.to_string(index=False))
        else:
            click.echo("no (gene, subtype) pair selected")
    _run(body)


@main.command()
@_with_options(fit_options)
def tune(data_dir, gamma, lambda_grid, use_pca, subject_missing, snp_missing, out):
    """Evaluate the BIC over the full (gamma, lambda) grid and report it."""
    def body():
        _, _, report, settings = _tune_dataset(
            data_dir, gamma, lambda_grid, use_pca, subject_missing, snp_missing)
        _write_manifest(out, "tune", {
            "data": str(data_dir), "gamma": list(settings.gammas),
            "lambda_grid": lambda_grid, "use_pca": use_pca,
            "subject_missing": subject_missing, "snp_missing": snp_missing,
        }, seed=None)
        _write_tuning(out, report)
        point = report.best_point()
        click.echo(f"grid points: {len(report.points)}; best gamma={point.gamma} "
                   f"lambda={point.lam:.6g} BIC={point.bic:.4f}")
    _run(body)


@main.command()
@click.option("--table", "table_id", type=click.Choice(["2", "3", "5", "6", "7", "8"]), required=True)
@click.option("--replicates", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--gamma", default="0.5,0.7,0.9", show_default=True)
@click.option("--lambda-grid", type=int, default=50, show_default=True)
@click.option("--threads", type=int, default=None, help="Defaults to BRIDGE_THREADS or all cores.")
@click.option("--out", type=click.Path(), required=True)
def reproduce(table_id, replicates, seed, gamma, lambda_grid, threads, out):
    """Re-run one reproduction table (every correlation row) and write the
    summary CSV with the reference values alongside."""
    def body():
        gammas = _parse_gammas(gamma)
        if replicates < 2:
            click.echo("warning: fewer than 2 replicates; SD columns will be empty", err=True)
        nthreads = _resolve_threads(threads)
        _write_manifest(out, "reproduce", {
            "table": int(table_id), "replicates": replicates, "gamma": list(gammas),
            "lambda_grid": lambda_grid, "threads": nthreads,
        }, seed)
        settings = _settings(gammas, lambda_grid, use_pca=False)
        frame, _ = reproduce_table(int(table_id), replicates, seed, gammas=gammas,
                                   settings=settings, threads=nthreads)
        path = Path(out) / f"table{table_id}.csv"
        frame.to_csv(path, index=False)
        click.echo(frame.to_string(index=False))
        click.echo(f"wrote {path}")
    _run(body)


@main.command()
@_with_options(fit_options)
@click.option("--subsamples", "-B", type=int, default=100, show_default=True)
@click.option("--fraction", type=float, default=0.75, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def stability(data_dir, gamma, lambda_grid, use_pca, subject_missing, snp_missing, out,
              subsamples, fraction, seed):
    """Occurrence index of every (gene, subtype) pair over repeated
    subject subsampling."""
    def body():
        ms = _load_dataset(data_dir, subject_missing, snp_missing)
        settings = _settings(_parse_gammas(gamma), lambda_grid, use_pca)
        _write_manifest(out, "stability", {
            "data": str(data_dir), "gamma": list(settings.gammas), "lambda_grid": lambda_grid,
            "use_pca": use_pca, "subsamples": subsamples, "fraction": fraction,
            "subject_missing": subject_missing, "snp_missing": snp_missing,
        }, seed)
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        report = occurrence_index(ms, settings, subsamples, fraction, rng)
        report.to_csv(Path(out) / "stability.csv")
        top = report.frame.sort_values("occurrence_index", ascending=False).head(15)
        click.echo(f"completed {report.completed}/{report.subsamples} subsamples")
        click.echo(top.to_string(index=False))
    _run(body)


@main.command()
@_with_options(fit_options)
@click.option("--rounds", "-B", type=int, default=100, show_default=True)
@click.option("--fraction", type=float, default=0.75, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def predict(data_dir, gamma, lambda_grid, use_pca, subject_missing, snp_missing, out,
            rounds, fraction, seed):
    """Train/test logrank evaluation: fit on a random fraction, split the
    held-out subjects into risk groups at the median linear predictor."""
    def body():
        ms = _load_dataset(data_dir, subject_missing, snp_missing)
        settings = _settings(_parse_gammas(gamma), lambda_grid, use_pca)
        _write_manifest(out, "predict", {
            "data": str(data_dir), "gamma": list(settings.gammas), "lambda_grid": lambda_grid,
            "use_pca": use_pca, "rounds": rounds, "fraction": fraction,
            "subject_missing": subject_missing, "snp_missing": snp_missing,
        }, seed)
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        report = predict_evaluate(ms, settings, rounds, rng, fraction=fraction)
        report.to_frame().to_csv(Path(out) / "prediction.csv", index=False)
        with open(Path(out) / "prediction.json", "w", encoding="utf-8") as fh:
            json.dump({
                "mean_statistic": report.mean_statistic, "p_value": report.p_value,
                "rounds_completed": len(report.rounds), "rounds_skipped": report.skipped,
                "per_subtype_mean": report.per_subtype_mean,
            }, fh, indent=2, sort_keys=True)
        if report.rounds:
            click.echo(f"mean logrank statistic {report.mean_statistic:.4f} "
                       f"(p={report.p_value:.4g}) over {len(report.rounds)} rounds"
                       + (f", {report.skipped} skipped" if report.skipped else ""))
        else:
            click.echo("non-informative: every round was skipped (constant predictors)")
    _run(body)


if __name__ == "__main__":
    main()
