"""Scoring and evaluation protocols: true-positive/model-size tables over
replicated simulations, selection stability under subject subsampling, and
logrank-scored survival prediction on held-out subjects."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.stats import chi2

from .cohort import GeneStructure, MultiStudy, SubtypeCohort
from .design import DesignError, build_stacked
from .simulate import SimDesign, generate_study
from .solver import fit_glasso_bic
from .tuning import tune_fit

log = logging.getLogger(__name__)


@dataclass
class ReplicateScore:
    """Selection accuracy of one fitted replicate at (gene, subtype) level."""

    true_positives: int
    model_size: int
    replicate_id: int = 0
    method: str = ""

    @property
    def false_positives(self):
        return self.model_size - self.true_positives


def score_selection(selected, truth, replicate_id=0, method=""):
    """Count selected (gene, subtype) pairs and how many are truly associated."""
    chosen = set(tuple(p) for p in selected)
    tp = len(chosen & truth.pair_set)
    return ReplicateScore(true_positives=tp, model_size=len(chosen),
                          replicate_id=replicate_id, method=method)


def logrank_two_group(times, events, group):
    """Two-sample logrank chi-square statistic (1 df) and its p-value.

    Tallies observed vs expected events over the distinct event times with
    the hypergeometric variance; tied events share one risk-set table. With
    no events (or zero variance) the statistic is 0 and p is 1.
    """
    t = np.asarray(times, dtype=float)
    d = np.asarray(events, dtype=np.int64)
    g = np.asarray(group, dtype=np.int64)
    if not (np.any(g == 0) and np.any(g == 1)):
        raise ValueError("both groups must be non-empty")

    event_times = np.unique(t[d == 1])
    o_minus_e = 0.0
    var = 0.0
    for et in event_times:
        at_risk = t >= et
        n_t = int(at_risk.sum())
        n1_t = int((at_risk & (g == 1)).sum())
        dead = (t == et) & (d == 1)
        d_t = int(dead.sum())
        d1_t = int((dead & (g == 1)).sum())
        if n_t < 1:
            continue
        e1 = d_t * n1_t / n_t
        o_minus_e += d1_t - e1
        if n_t > 1:
            var += d_t * (n1_t / n_t) * (1 - n1_t / n_t) * (n_t - d_t) / (n_t - 1)
    if var <= 0:
        return 0.0, 1.0
    stat = o_minus_e**2 / var
    return float(stat), float(chi2.sf(stat, 1))


@dataclass
class FitSettings:
    """Knobs shared by every fitting entry point."""

    gammas: tuple = (0.5, 0.7, 0.9)
    lambda_grid_size: int = 50
    use_pca: bool = False
    variance_fraction: float = 0.9
    tol_outer: float = 1e-3
    max_outer: int = 500
    tol_inner: float = 1e-7
    grid_span: float = 100.0
    glasso_span: float | None = None   # defaults to grid_span


def fit_study(ms, settings):
    """Build the stacked design and tune the composite-bridge fit; returns the
    TuningReport (its overall best fit drives selection)."""
    design = build_stacked(ms, use_pca=settings.use_pca,
                           variance_fraction=settings.variance_fraction)
    report = tune_fit(
        design, gammas=settings.gammas, lambda_grid_size=settings.lambda_grid_size,
        tol_outer=settings.tol_outer, max_outer=settings.max_outer,
        tol_inner=settings.tol_inner, grid_span=settings.grid_span)
    return design, report


def single_subtype_study(ms, subtype_id):
    """Restrict a MultiStudy to one subtype (for the per-subtype comparator)."""
    cohort = ms.cohort(subtype_id)
    st = ms.structure
    m = st.subtype_ids.index(str(subtype_id))
    sizes = {}
    b0, b1 = st.subtype_block_range[m]
    for b in range(b0, b1):
        g, s = st.pair_label(b)
        sizes[(g, s)] = st.blocks[b].size
    genes = [g for g in st.gene_ids if (g, str(subtype_id)) in sizes]
    sub_structure = GeneStructure(genes, [str(subtype_id)], sizes)
    return MultiStudy([cohort], sub_structure, gene_of_snp=dict(ms.gene_of_snp))


def glasso_selected_pairs(ms, settings):
    """Analyze each subtype separately with the gene-grouped Lasso and pool
    the per-subtype gene lists into (gene, subtype) pairs."""
    pairs = []
    certified = True
    for sub in ms.structure.subtype_ids:
        study = single_subtype_study(ms, sub)
        design = build_stacked(study, use_pca=settings.use_pca,
                               variance_fraction=settings.variance_fraction)
        fit = fit_glasso_bic(design, grid_size=settings.lambda_grid_size,
                             grid_span=settings.glasso_span or settings.grid_span,
                             tol=settings.tol_inner)
        certified = certified and fit.inner_certified
        pairs.extend(fit.selected)
    return tuple(pairs), certified


# ---------------------------------------------------------------------------
# replicated simulation tables
# ---------------------------------------------------------------------------

CORRELATION_ROWS = (
    ("ar02", "AR rho=0.2", "ar", 0.2),
    ("ar05", "AR rho=0.5", "ar", 0.5),
    ("ar08", "AR rho=0.8", "ar", 0.8),
    ("banded1", "Banded 1", "banded", 1),
    ("banded2", "Banded 2", "banded", 2),
    ("banded3", "Banded 3", "banded", 3),
)

TABLE_SETTINGS = {
    2: (1, "hetero25"),
    3: (1, "hetero50"),
    5: (2, "hetero25"),
    6: (2, "hetero50"),
    7: (1, "homogeneous"),
    8: (2, "homogeneous"),
}

# Reference summary values per table cell, used to annotate reproduction
# output for diffing: (tp_mean, tp_sd, size_mean, size_sd).
REFERENCE_TABLES = {
    2: {
        "ar02": {"glasso": (5.7, 2.4, 36.4, 16.5), "gamma05": (6.7, 5.2, 9.5, 7.6),
                 "gamma07": (7.4, 4.6, 10.7, 6.6), "gamma09": (8.9, 2.8, 20.1, 6.3)},
        "ar05": {"glasso": (6.7, 2.4, 39.7, 19.3), "gamma05": (10.7, 3.0, 14.4, 4.5),
                 "gamma07": (10.8, 2.8, 14.7, 4.0), "gamma09": (11.0, 1.9, 17.1, 4.5)},
        "ar08": {"glasso": (9.4, 2.3, 50.2, 19.3), "gamma05": (12.0, 0.2, 14.4, 1.9),
                 "gamma07": (12.0, 0.2, 14.6, 1.9), "gamma09": (11.9, 0.2, 15.6, 2.7)},
        "banded1": {"glasso": (5.3, 2.6, 33.8, 16.2), "gamma05": (7.8, 5.0, 11.0, 7.1),
                    "gamma07": (8.6, 4.4, 11.9, 5.9), "gamma09": (8.9, 3.6, 20.5, 7.0)},
        "banded2": {"glasso": (7.5, 2.8, 45.5, 21.7), "gamma05": (10.6, 3.3, 14.6, 4.8),
                    "gamma07": (11.2, 2.2, 15.5, 3.7), "gamma09": (11.3, 1.7, 21.1, 7.0)},
        "banded3": {"glasso": (7.9, 2.4, 44.2, 17.7), "gamma05": (11.5, 1.9, 15.4, 3.0),
                    "gamma07": (11.5, 1.5, 15.4, 2.7), "gamma09": (11.6, 1.1, 18.8, 5.2)},
    },
    3: {
        "ar02": {"glasso": (4.6, 2.3, 30.7, 16.9), "gamma05": (3.7, 4.1, 5.4, 7.0),
                 "gamma07": (5.8, 3.8, 10.3, 6.9), "gamma09": (8.3, 2.1, 22.2, 6.8)},
        "ar05": {"glasso": (6.5, 3.0, 36.1, 20.1), "gamma05": (9.6, 3.5, 16.8, 7.5),
                 "gamma07": (9.7, 3.1, 17.2, 6.9), "gamma09": (10.1, 2.3, 21.1, 6.8)},
        "ar08": {"glasso": (9.7, 2.2, 54.5, 17.5), "gamma05": (11.5, 0.9, 19.4, 3.9),
                 "gamma07": (11.5, 0.7, 18.4, 4.1), "gamma09": (11.6, 0.7, 20.2, 5.8)},
        "banded1": {"glasso": (4.7, 2.4, 34.5, 17.6), "gamma05": (4.4, 4.1, 6.7, 7.2),
                    "gamma07": (5.9, 3.8, 10.8, 7.7), "gamma09": (7.7, 2.9, 20.8, 9.2)},
        "banded2": {"glasso": (7.5, 2.5, 47.1, 19.4), "gamma05": (8.4, 3.9, 14.4, 7.7),
                    "gamma07": (9.1, 3.1, 15.9, 6.1), "gamma09": (10.0, 1.7, 23.5, 7.1)},
        "banded3": {"glasso": (7.3, 2.4, 43.2, 19.6), "gamma05": (9.5, 2.9, 16.6, 6.7),
                    "gamma07": (9.9, 2.6, 17.7, 5.9), "gamma09": (10.1, 2.2, 22.9, 7.6)},
    },
    5: {
        "ar02": {"glasso": (3.8, 2.1, 32.7, 17.5), "gamma05": (2.4, 4.2, 3.5, 6.2),
                 "gamma07": (4.5, 4.6, 7.9, 7.7), "gamma09": (5.4, 3.4, 18.0, 9.9)},
        "ar05": {"glasso": (6.0, 2.4, 36.7, 16.1), "gamma05": (9.4, 4.1, 13.3, 5.9),
                 "gamma07": (10.2, 3.2, 14.7, 4.7), "gamma09": (10.3, 2.5, 20.0, 7.7)},
        "ar08": {"glasso": (8.0, 2.4, 46.9, 18.5), "gamma05": (11.7, 0.9, 15.3, 2.3),
                 "gamma07": (11.8, 0.6, 15.6, 3.0), "gamma09": (11.7, 0.8, 19.4, 6.2)},
        "banded1": {"glasso": (3.8, 2.1, 31.8, 17.0), "gamma05": (2.9, 4.5, 4.3, 6.6),
                    "gamma07": (4.4, 4.5, 7.0, 7.0), "gamma09": (5.8, 3.4, 18.1, 9.9)},
        "banded2": {"glasso": (5.2, 2.4, 32.7, 18.8), "gamma05": (9.2, 4.5, 13.2, 6.3),
                    "gamma07": (9.8, 3.7, 14.4, 5.3), "gamma09": (9.5, 3.0, 20.8, 7.7)},
        "banded3": {"glasso": (5.7, 2.5, 35.1, 17.5), "gamma05": (9.4, 4.1, 13.0, 5.6),
                    "gamma07": (9.7, 3.4, 14.7, 5.2), "gamma09": (10.4, 2.3, 22.8, 8.7)},
    },
    6: {
        "ar02": {"glasso": (3.7, 2.0, 30.3, 16.9), "gamma05": (1.8, 3.3, 2.8, 5.4),
                 "gamma07": (3.8, 3.8, 7.6, 7.8), "gamma09": (6.1, 2.5, 21.4, 8.2)},
        "ar05": {"glasso": (5.3, 2.6, 33.5, 20.1), "gamma05": (8.0, 3.8, 13.6, 7.8),
                 "gamma07": (9.4, 2.7, 17.4, 6.3), "gamma09": (9.5, 1.7, 22.9, 6.7)},
        "ar08": {"glasso": (8.2, 2.3, 47.8, 19.2), "gamma05": (10.6, 2.2, 18.1, 5.5),
                 "gamma07": (10.9, 1.0, 18.3, 3.7), "gamma09": (11.0, 1.3, 21.8, 6.6)},
        "banded1": {"glasso": (3.9, 2.0, 31.2, 18.5), "gamma05": (1.9, 3.0, 3.1, 5.3),
                    "gamma07": (3.4, 3.6, 6.3, 7.0), "gamma09": (5.8, 3.1, 18.5, 9.0)},
        "banded2": {"glasso": (5.1, 2.4, 31.6, 15.6), "gamma05": (6.4, 4.0, 10.4, 7.4),
                    "gamma07": (8.6, 3.0, 15.7, 6.8), "gamma09": (8.6, 2.8, 21.7, 8.8)},
        "banded3": {"glasso": (5.8, 2.4, 36.2, 18.5), "gamma05": (8.3, 3.5, 13.9, 7.4),
                    "gamma07": (9.0, 2.7, 15.6, 5.4), "gamma09": (9.4, 2.1, 21.7, 7.2)},
    },
    7: {
        "ar02": {"glasso": (5.4, 2.3, 37.6, 17.2), "gamma05": (9.5, 4.0, 9.8, 3.8),
                 "gamma07": (9.5, 4.2, 10.5, 4.3), "gamma09": (9.1, 3.8, 16.9, 8.1)},
        "ar05": {"glasso": (7.1, 2.7, 41.8, 21.5), "gamma05": (11.6, 1.9, 11.8, 1.4),
                 "gamma07": (11.6, 1.6, 11.8, 1.3), "gamma09": (11.5, 1.7, 15.2, 4.4)},
        "ar08": {"glasso": (9.7, 2.4, 48.3, 17.8), "gamma05": (11.9, 0.4, 12.0, 0.4),
                 "gamma07": (12.0, 0.0, 12.1, 0.6), "gamma09": (12.0, 0.0, 14.0, 2.1)},
        "banded1": {"glasso": (5.1, 2.0, 33.8, 16.2), "gamma05": (9.9, 4.1, 10.2, 3.9),
                    "gamma07": (10.1, 3.8, 11.2, 3.6), "gamma09": (9.9, 3.2, 17.9, 6.9)},
        "banded2": {"glasso": (7.5, 2.7, 45.5, 19.3), "gamma05": (12.0, 0.0, 12.0, 0.0),
                    "gamma07": (12.0, 0.0, 12.3, 1.1), "gamma09": (11.6, 1.1, 17.1, 5.5)},
        "banded3": {"glasso": (8.3, 2.3, 50.5, 18.5), "gamma05": (11.8, 0.9, 11.8, 0.9),
                    "gamma07": (11.9, 0.8, 12.0, 0.9), "gamma09": (11.9, 0.5, 15.9, 3.7)},
    },
    8: {
        "ar02": {"glasso": (4.1, 2.4, 33.0, 18.8), "gamma05": (6.0, 5.1, 6.2, 5.1),
                 "gamma07": (6.9, 4.8, 8.9, 5.8), "gamma09": (7.9, 3.6, 19.9, 7.7)},
        "ar05": {"glasso": (6.5, 2.5, 39.2, 18.2), "gamma05": (11.2, 2.3, 11.6, 2.1),
                 "gamma07": (11.4, 1.7, 12.4, 2.0), "gamma09": (11.3, 1.6, 18.3, 6.5)},
        "ar08": {"glasso": (8.2, 2.6, 46.9, 21.9), "gamma05": (11.9, 0.4, 12.0, 0.6),
                 "gamma07": (11.9, 0.4, 12.4, 1.5), "gamma09": (11.9, 0.6, 16.4, 5.8)},
        "banded1": {"glasso": (4.0, 2.2, 33.5, 16.2), "gamma05": (5.3, 5.3, 5.5, 5.3),
                    "gamma07": (7.0, 4.7, 8.1, 5.3), "gamma09": (7.8, 3.5, 19.6, 7.9)},
        "banded2": {"glasso": (6.0, 2.2, 38.1, 16.8), "gamma05": (10.6, 3.6, 10.9, 3.2),
                    "gamma07": (11.1, 2.5, 12.8, 3.6), "gamma09": (11.2, 1.8, 19.1, 6.2)},
        "banded3": {"glasso": (6.5, 2.1, 39.9, 16.8), "gamma05": (11.4, 1.9, 11.7, 1.3),
                    "gamma07": (11.2, 2.0, 12.5, 2.1), "gamma09": (11.3, 2.1, 19.3, 5.7)},
    },
}


def gamma_method(gamma):
    """Method tag for one bridge exponent: 0.5 -> 'gamma05'."""
    text = f"{gamma:g}".replace("0.", "0").replace(".", "")
    return f"gamma{text}"


def _replicate_scores(design, replicate, gammas, include_glasso, settings):
    """Fit one simulated replicate with every method and score it."""
    ms, truth = generate_study(design, replicate)
    out = {}
    certified = True
    st_design = build_stacked(ms, use_pca=settings.use_pca,
                              variance_fraction=settings.variance_fraction)
    report = tune_fit(st_design, gammas=gammas,
                      lambda_grid_size=settings.lambda_grid_size,
                      tol_outer=settings.tol_outer, max_outer=settings.max_outer,
                      tol_inner=settings.tol_inner, grid_span=settings.grid_span)
    certified = certified and report.all_certified
    for gamma in gammas:
        fit = report.best_fit_for(gamma)
        out[gamma_method(gamma)] = score_selection(
            fit.selected, truth, replicate_id=replicate, method=gamma_method(gamma))
    if include_glasso:
        pairs, ok = glasso_selected_pairs(ms, settings)
        certified = certified and ok
        out["glasso"] = score_selection(pairs, truth, replicate_id=replicate, method="glasso")
    return replicate, out, certified


@dataclass
class RunTableResult:
    """Replicate scores for one simulation cell (one correlation design)."""

    design: SimDesign
    replicates: int
    scores: dict = field(default_factory=dict)   # method -> list[ReplicateScore]
    all_certified: bool = True
    failures: int = 0

    def summary(self):
        rows = []
        for method, scores in self.scores.items():
            tp = np.array([s.true_positives for s in scores], dtype=float)
            size = np.array([s.model_size for s in scores], dtype=float)
            rows.append({
                "method": method,
                "tp_mean": tp.mean(), "tp_sd": tp.std(ddof=1) if tp.size > 1 else np.nan,
                "size_mean": size.mean(), "size_sd": size.std(ddof=1) if size.size > 1 else np.nan,
                "replicates": int(tp.size),
            })
        return pd.DataFrame(rows)

    def mean(self, method, what="tp"):
        scores = self.scores[method]
        vals = [s.true_positives if what == "tp" else s.model_size for s in scores]
        return float(np.mean(vals))


def run_table(design, replicates, gammas=(0.5, 0.7, 0.9), include_glasso=True,
              settings=None, threads=1):
    """Score every method over seeded replicates of one simulation design.

    Replicates draw independent substreams, so the result is independent of
    `threads` and bit-reproducible for a fixed (design, seed, replicates).
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    settings = settings or FitSettings(gammas=gammas)
    result = RunTableResult(design=design, replicates=replicates)
    tasks = list(range(replicates))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            done = list(pool.map(_replicate_worker,
                                 [(design, r, tuple(gammas), include_glasso, settings) for r in tasks]))
    else:
        done = [_replicate_worker((design, r, tuple(gammas), include_glasso, settings)) for r in tasks]

    for replicate, scores, certified in sorted(done, key=lambda item: item[0]):
        if scores is None:
            result.failures += 1
            continue
        result.all_certified = result.all_certified and certified
        for method, score in scores.items():
            result.scores.setdefault(method, []).append(score)
    return result


def _replicate_worker(args):
    design, replicate, gammas, include_glasso, settings = args
    try:
        return _replicate_scores(design, replicate, gammas, include_glasso, settings)
    except (DesignError, np.linalg.LinAlgError) as exc:  # pragma: no cover - defensive
        log.warning("replicate %d failed: %s", replicate, exc)
        return replicate, None, True


def reproduce_table(table_id, replicates, seed, gammas=(0.5, 0.7, 0.9),
                    include_glasso=True, settings=None, threads=1):
    """Run every correlation row of one reproduction table and assemble the
    summary frame with the reference values alongside."""
    if table_id not in TABLE_SETTINGS:
        raise KeyError(f"unknown table id {table_id}; choose from {sorted(TABLE_SETTINGS)}")
    case, sharing = TABLE_SETTINGS[table_id]
    rows = []
    results = {}
    for key, label, kind, param in CORRELATION_ROWS:
        design = SimDesign(correlation_kind=kind, correlation_param=param,
                           coeff_case=case, sharing=sharing, seed=seed)
        res = run_table(design, replicates, gammas=gammas, include_glasso=include_glasso,
                        settings=settings, threads=threads)
        results[key] = res
        summary = res.summary().set_index("method")
        for method in summary.index:
            ref = REFERENCE_TABLES[table_id].get(key, {}).get(method)
            row = {
                "correlation": label, "correlation_key": key, "method": method,
                "tp_mean": round(float(summary.loc[method, "tp_mean"]), 6),
                "tp_sd": round(float(summary.loc[method, "tp_sd"]), 6),
                "size_mean": round(float(summary.loc[method, "size_mean"]), 6),
                "size_sd": round(float(summary.loc[method, "size_sd"]), 6),
                "replicates": int(summary.loc[method, "replicates"]),
            }
            if ref:
                row.update({"reference_tp": ref[0], "reference_tp_sd": ref[1],
                            "reference_size": ref[2], "reference_size_sd": ref[3]})
            else:
                row.update({"reference_tp": np.nan, "reference_tp_sd": np.nan,
                            "reference_size": np.nan, "reference_size_sd": np.nan})
            rows.append(row)
    return pd.DataFrame(rows), results


# ---------------------------------------------------------------------------
# stability and prediction protocols
# ---------------------------------------------------------------------------

def stratified_subsample(ms, fraction, rng):
    """Sample floor(fraction * n_m) subjects per subtype without replacement;
    returns (train study, held-out study)."""
    train, test = [], []
    for c in ms.cohorts:
        k = int(np.floor(fraction * c.n))
        if k < 1 or k >= c.n:
            raise DesignError(f"subtype {c.subtype_id}: subsample of {k} out of {c.n} is degenerate")
        chosen = np.sort(rng.choice(c.n, size=k, replace=False))
        mask = np.zeros(c.n, dtype=bool)
        mask[chosen] = True
        for subset, rows in ((train, mask), (test, ~mask)):
            subset.append(SubtypeCohort(
                subtype_id=c.subtype_id,
                log_time=c.log_time[rows],
                event=c.event[rows],
                genotype=c.genotype[rows],
                subject_ids=tuple(np.array(c.subject_ids, dtype=object)[rows]),
                snp_ids=c.snp_ids,
                time_years=c.time_years[rows],
            ))
    mk = lambda cohorts: MultiStudy(cohorts, ms.structure, gene_of_snp=dict(ms.gene_of_snp))
    return mk(train), mk(test)


@dataclass
class StabilityReport:
    """Per-(gene, subtype) selection frequency over repeated subsampling."""

    frame: pd.DataFrame
    subsamples: int
    completed: int
    fraction: float

    def index_of(self, gene_id, subtype_id):
        hit = self.frame[(self.frame.gene == str(gene_id)) & (self.frame.subtype == str(subtype_id))]
        return float(hit["occurrence_index"].iloc[0]) if len(hit) else 0.0

    def to_csv(self, path):
        self.frame.to_csv(path, index=False)


def occurrence_index(ms, settings, B, fraction, rng):
    """Refit on B stratified subsamples and report each pair's selection
    frequency. Degenerate subsamples are skipped and the denominator adjusted."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    if B < 1:
        raise ValueError("B must be >= 1")
    st = ms.structure
    counts = {st.pair_label(b): 0 for b in range(st.n_blocks)}
    completed = 0
    for _ in range(B):
        try:
            train, _ = stratified_subsample(ms, fraction, rng)
            _, report = fit_study(train, settings)
        except DesignError as exc:
            log.warning("subsample skipped: %s", exc)
            continue
        completed += 1
        for pair in report.best_fit().selected:
            counts[pair] += 1
    if completed == 0:
        raise DesignError("every subsample was degenerate")
    frame = pd.DataFrame(
        [{"gene": g, "subtype": s, "occurrence_index": counts[(g, s)] / completed}
         for (g, s) in sorted(counts)])
    return StabilityReport(frame=frame, subsamples=B, completed=completed, fraction=fraction)


@dataclass
class PredictionReport:
    """Logrank-scored held-out risk grouping over repeated train/test splits."""

    mean_statistic: float
    p_value: float
    rounds: list
    skipped: int
    per_subtype_mean: dict

    def to_frame(self):
        return pd.DataFrame(self.rounds)


def predict_evaluate(ms, settings, B, rng, fraction=0.75):
    """Train on a stratified fraction, compute held-out linear predictors,
    split the pooled held-out subjects at the median, and compare the two
    risk groups by logrank. Reports the mean statistic over rounds and its
    chi-square(1) p-value; also per-subtype means for diagnostics."""
    if B < 1:
        raise ValueError("B must be >= 1")
    rounds = []
    skipped = 0
    per_subtype = {s: [] for s in ms.structure.subtype_ids}
    for b in range(B):
        try:
            train, test = stratified_subsample(ms, fraction, rng)
            design, report = fit_study(train, settings)
        except DesignError as exc:
            log.warning("prediction round %d skipped: %s", b, exc)
            skipped += 1
            continue
        fit = report.best_fit()
        coefs = design.original_coefficients(fit.beta.values)
        lp, times, events, subtype_of = [], [], [], []
        for m, c in enumerate(test.cohorts):
            lp.append(c.genotype @ coefs[m])
            times.append(c.log_time)
            events.append(c.event)
            subtype_of.extend([c.subtype_id] * c.n)
        lp = np.concatenate(lp)
        times = np.concatenate(times)
        events = np.concatenate(events)
        subtype_of = np.array(subtype_of)
        med = np.median(lp)
        group = (lp > med).astype(int)
        if group.min() == group.max():
            log.warning("prediction round %d skipped: constant linear predictor", b)
            skipped += 1
            continue
        stat, p = logrank_two_group(times, events, group)
        row = {"round": b, "statistic": stat, "p_value": p,
               "selected": len(fit.selected), "gamma": getattr(fit.config, "gamma", None)}
        for s in per_subtype:
            keep = subtype_of == s
            if keep.any() and group[keep].min() != group[keep].max():
                s_stat, _ = logrank_two_group(times[keep], events[keep], group[keep])
                per_subtype[s].append(s_stat)
        rounds.append(row)
    if not rounds:
        return PredictionReport(mean_statistic=0.0, p_value=1.0, rounds=[], skipped=skipped,
                                per_subtype_mean={s: np.nan for s in per_subtype})
    mean_stat = float(np.mean([r["statistic"] for r in rounds]))
    return PredictionReport(
        mean_statistic=mean_stat,
        p_value=float(chi2.sf(mean_stat, 1)),
        rounds=rounds,
        skipped=skipped,
        per_subtype_mean={s: (float(np.mean(v)) if v else np.nan) for s, v in per_subtype.items()},
    )
