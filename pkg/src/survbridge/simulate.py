"""Seeded generation of synthetic multi-subtype survival/genotype studies.

Genotypes are thresholded correlated Gaussians (cut at the quartiles, so SNP
values 0/1/2 occur with probability 1/4, 1/2, 1/4), log event times follow a
linear model with Gaussian errors, and log censoring times are uniform with
an upper bound calibrated by bisection on a large pilot sample so the
expected censoring rate is close to the target.

Replicate r of a design draws from a counter-based Philox stream keyed by
``seed XOR r``, so any replicate is reproducible in isolation.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .cohort import GeneStructure, MultiStudy, SubtypeCohort, save_csv

THRESHOLD = float(norm.ppf(0.75))  # cut points +-c give marginal cell probabilities (1/4, 1/2, 1/4)
BETWEEN_GENE_BASE = 0.2            # SNPs from different genes correlate as 0.2^|distance|
PILOT_SIZE = 100_000
PILOT_SALT = 0x9E3779B97F4A7C15
CENSORING_WINDOW = 0.02            # calibrated rate must land in target +- window

BANDED_SCENARIOS = {1: (0.2, 0.1), 2: (0.5, 0.25), 3: (0.6, 0.33)}

# Nonzero coefficient patterns laid over each subtype's four susceptibility
# genes (20 SNP slots, in gene order).
CASE_COEFS = {
    1: (
        (0.15, 0.15, 0.15, 0.15, 0.15, 0.1, 0.1, 0.1, 0.1, 0.1,
         0.15, 0.15, 0.15, 0.15, 0.15, 0.1, 0.1, 0.1, 0.1, 0.1),
        (0.15, 0.15, 0.15, 0.15, 0.15, 0.1, 0.1, 0.1, 0.1, 0.1,
         0.15, 0.15, 0.15, 0.15, 0.15, 0.1, 0.1, 0.1, 0.1, 0.1),
        (0.1, 0.1, 0.1, 0.1, 0.1, 0.15, 0.15, 0.15, 0.15, 0.15,
         0.15, 0.15, 0.15, 0.15, 0.15, 0.1, 0.1, 0.1, 0.1, 0.1),
    ),
    2: (
        (0.15, 0.15, 0.15, 0.15, 0.0, 0.0, 0.1, 0.1, 0.1, 0.1,
         0.15, 0.15, 0.15, 0.15, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1),
        (0.15, 0.15, 0.15, 0.15, 0.0, 0.0, 0.1, 0.1, 0.1, 0.1,
         0.15, 0.15, 0.15, 0.15, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1),
        (0.1, 0.1, 0.1, 0.1, 0.1, 0.15, 0.15, 0.15, 0.15, 0.0,
         0.15, 0.15, 0.15, 0.15, 0.0, 0.0, 0.1, 0.1, 0.1, 0.1),
    ),
}


class CalibrationError(RuntimeError):
    """Censoring calibration could not bracket the target rate."""


@dataclass(frozen=True)
class SimDesign:
    """Design of one synthetic study. Defaults give three subtypes of 100
    subjects over 200 five-SNP genes; every field is overridable for
    smaller or reshaped runs."""

    n_subtypes: int = 3
    n_per_subtype: object = 100           # int or per-subtype tuple
    n_genes: int = 200
    snps_per_gene: int = 5
    gene_sizes: tuple | None = None       # ragged per-gene SNP counts, overrides the two above
    correlation_kind: str = "ar"          # "ar" or "banded"
    correlation_param: float = 0.5        # rho for AR, scenario 1..3 for banded
    coeff_case: int = 1
    sharing: str = "hetero25"             # "hetero25" | "hetero50" | "homogeneous"
    intercept: float = 0.5
    error_sd: float = 1.0
    target_censoring: float = 0.30
    flat_coef: float | None = None        # constant coefficient on every susceptibility SNP slot
    coef_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.correlation_kind not in ("ar", "banded"):
            raise ValueError(f"unknown correlation kind {self.correlation_kind!r}")
        if self.correlation_kind == "banded" and int(self.correlation_param) not in BANDED_SCENARIOS:
            raise ValueError(f"banded scenario must be 1..3, got {self.correlation_param}")
        if self.coeff_case not in CASE_COEFS:
            raise ValueError(f"coefficient case must be 1 or 2, got {self.coeff_case}")
        if self.sharing not in ("hetero25", "hetero50", "homogeneous"):
            raise ValueError(f"unknown sharing pattern {self.sharing!r}")
        if self.gene_sizes is not None:
            object.__setattr__(self, "gene_sizes", tuple(int(d) for d in self.gene_sizes))
            object.__setattr__(self, "n_genes", len(self.gene_sizes))
        if not np.isscalar(self.n_per_subtype):
            sizes = tuple(int(v) for v in self.n_per_subtype)
            if len(sizes) != self.n_subtypes:
                raise ValueError("n_per_subtype tuple length must equal n_subtypes")
            object.__setattr__(self, "n_per_subtype", sizes)

    def sizes(self):
        if self.gene_sizes is not None:
            return self.gene_sizes
        return (self.snps_per_gene,) * self.n_genes

    def subtype_sizes(self):
        if np.isscalar(self.n_per_subtype):
            return (int(self.n_per_subtype),) * self.n_subtypes
        return self.n_per_subtype

    @property
    def n_snps(self):
        return int(sum(self.sizes()))

    @property
    def n_total(self):
        return int(sum(self.subtype_sizes()))

    def gene_ids(self):
        return tuple(f"G{j + 1:03d}" for j in range(self.n_genes))

    def subtype_ids(self):
        return tuple(str(m + 1) for m in range(self.n_subtypes))

    def snp_ids(self):
        out = []
        for g, d in zip(self.gene_ids(), self.sizes()):
            out.extend(f"{g}_s{k + 1}" for k in range(d))
        return tuple(out)


@dataclass(frozen=True)
class TruthSet:
    """Which (gene, subtype) pairs truly carry signal, and the per-subtype
    coefficient vectors over all SNP columns."""

    pairs: tuple
    coef: tuple          # per subtype: length-p coefficient array
    gene_ids: tuple
    subtype_ids: tuple
    snp_ids: tuple

    @property
    def pair_set(self):
        return frozenset(self.pairs)

    @property
    def n_nonzero_slots(self):
        return int(sum(np.count_nonzero(c) for c in self.coef))

    def to_dict(self):
        out = {"pairs": [{"gene": g, "subtype": s} for g, s in self.pairs], "coefficients": {}}
        for s, c in zip(self.subtype_ids, self.coef):
            nz = {self.snp_ids[i]: float(c[i]) for i in np.flatnonzero(c)}
            out["coefficients"][s] = nz
        return out


def sharing_gene_lists(sharing, n_subtypes=3):
    """Per-subtype susceptibility gene indices under the sharing pattern."""
    if sharing == "hetero25":
        common, specific = 3, 1
    elif sharing == "hetero50":
        common, specific = 2, 2
    elif sharing == "homogeneous":
        common, specific = 4, 0
    else:
        raise ValueError(f"unknown sharing pattern {sharing!r}")
    lists = []
    for m in range(n_subtypes):
        own = [common + specific * m + i for i in range(specific)]
        lists.append(tuple(range(common)) + tuple(own))
    return lists


def within_gene_correlation(kind, param, d):
    idx = np.arange(d)
    dist = np.abs(idx[:, None] - idx[None, :])
    if kind == "ar":
        return float(param) ** dist
    c1, c2 = BANDED_SCENARIOS[int(param)]
    return np.eye(d) + c1 * (dist == 1) + c2 * (dist == 2)


def latent_correlation(design):
    """The full latent correlation: the within-gene structure on each gene's
    diagonal block, 0.2^|i-j| between SNPs of different genes."""
    p = design.n_snps
    idx = np.arange(p)
    corr = BETWEEN_GENE_BASE ** np.abs(idx[:, None] - idx[None, :])
    start = 0
    for d in design.sizes():
        corr[start:start + d, start:start + d] = within_gene_correlation(
            design.correlation_kind, design.correlation_param, d)
        start += d
    return corr


_chol_cache = {}


def _cholesky_factor(design):
    key = (design.correlation_kind, design.correlation_param, design.sizes())
    if key not in _chol_cache:
        corr = latent_correlation(design)
        try:
            factor = np.linalg.cholesky(corr)
        except np.linalg.LinAlgError:
            factor = None
            for eps in 1e-8 * 10.0 ** np.arange(6):
                try:
                    factor = np.linalg.cholesky(corr + eps * np.eye(corr.shape[0]))
                    warnings.warn(
                        f"latent correlation not positive definite; added diagonal jitter {eps:g}",
                        stacklevel=2)
                    break
                except np.linalg.LinAlgError:
                    continue
            if factor is None:
                raise
        _chol_cache[key] = (corr, factor)
    return _chol_cache[key]


def _threshold(z):
    return (z >= -THRESHOLD).astype(float) + (z > THRESHOLD)


def gen_genotypes(design, rng):
    """Per-subtype genotype matrices with values in {0, 1, 2}."""
    _, factor = _cholesky_factor(design)
    out = []
    for nm in design.subtype_sizes():
        z = rng.standard_normal((nm, design.n_snps)) @ factor.T
        out.append(_threshold(z))
    return out


def gen_truth(design):
    """True coefficient vectors and the truly associated (gene, subtype) pairs.

    With ``flat_coef`` unset, each subtype's four susceptibility genes carry
    the case-1/case-2 coefficient patterns (this requires 20 SNP slots, i.e.
    five SNPs per susceptibility gene); with ``flat_coef`` set, every slot of
    every susceptibility gene gets that constant, which supports arbitrary
    gene sizes.
    """
    sizes = design.sizes()
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    gene_lists = sharing_gene_lists(design.sharing, design.n_subtypes)
    gene_ids = design.gene_ids()
    subtype_ids = design.subtype_ids()

    coef = []
    pairs = []
    for m, genes in enumerate(gene_lists):
        if max(genes) >= design.n_genes:
            raise ValueError("design has too few genes for the sharing pattern")
        vec = np.zeros(design.n_snps)
        slots = np.concatenate([np.arange(offsets[j], offsets[j + 1]) for j in sorted(genes)])
        if design.flat_coef is not None:
            vec[slots] = design.flat_coef * design.coef_scale
        else:
            if design.n_subtypes != 3:
                raise ValueError("case coefficient patterns are defined for three subtypes")
            pattern = np.asarray(CASE_COEFS[design.coeff_case][m])
            if slots.size != pattern.size:
                raise ValueError(
                    f"susceptibility genes span {slots.size} SNP slots; the case patterns "
                    f"need exactly {pattern.size} (five SNPs per susceptibility gene)")
            vec[slots] = pattern * design.coef_scale
        coef.append(vec)
        pairs.extend((gene_ids[j], subtype_ids[m]) for j in sorted(genes))
    return TruthSet(pairs=tuple(pairs), coef=tuple(coef), gene_ids=gene_ids,
                    subtype_ids=subtype_ids, snp_ids=design.snp_ids())


_censor_cache = {}


def censor_bound(design):
    """Upper bound of the uniform log-censoring distribution, calibrated by
    bisection on a pilot sample of log event times so the expected censoring
    rate lands within CENSORING_WINDOW of the target."""
    key = design
    if key in _censor_cache:
        return _censor_cache[key]

    rng = np.random.Generator(np.random.Philox(key=np.uint64(design.seed) ^ np.uint64(PILOT_SALT)))
    truth = gen_truth(design)
    corr, _ = _cholesky_factor(design)
    sizes = design.subtype_sizes()
    total = sum(sizes)
    pilot_t = []
    for m, nm in enumerate(sizes):
        draws = max(int(round(PILOT_SIZE * nm / total)), 1000)
        active = np.flatnonzero(truth.coef[m])
        if active.size:
            sub = corr[np.ix_(active, active)]
            factor = np.linalg.cholesky(sub + 1e-12 * np.eye(active.size))
            z = rng.standard_normal((draws, active.size)) @ factor.T
            eta = _threshold(z) @ truth.coef[m][active]
        else:
            eta = np.zeros(draws)
        pilot_t.append(design.intercept + eta + rng.normal(0.0, design.error_sd, draws))
    t = np.concatenate(pilot_t)

    def rate(u):
        return float(np.mean(np.clip(t / u, 0.0, 1.0)))

    target = design.target_censoring
    lo, hi = 1e-9, 1.0
    if rate(lo) < target - CENSORING_WINDOW:
        raise CalibrationError(
            f"cannot reach censoring {target}: even immediate censoring gives {rate(lo):.3f}")
    for _ in range(200):
        if rate(hi) <= target:
            break
        hi *= 2.0
    else:
        raise CalibrationError(f"no censoring bound below rate {target} in (0, {hi:g}]")
    u = hi
    for _ in range(200):
        if abs(rate(u) - target) <= CENSORING_WINDOW / 4:
            break
        if rate(u) > target:
            lo = u
        else:
            hi = u
        u = 0.5 * (lo + hi)
    got = rate(u)
    if abs(got - target) > CENSORING_WINDOW:
        raise CalibrationError(
            f"censoring calibration stalled at rate {got:.3f} (target {target}; searched up to u={hi:g})")
    _censor_cache[key] = u
    return u


def gen_survival(genotypes, truth, design, rng):
    """Per-subtype (log observed time, event indicator) under the linear
    log-time model with calibrated uniform log censoring."""
    u = censor_bound(design)
    out = []
    for m, x in enumerate(genotypes):
        if x.shape[1] != truth.coef[m].shape[0]:
            raise ValueError("genotype and truth dimensions disagree")
        n = x.shape[0]
        t = design.intercept + x @ truth.coef[m] + rng.normal(0.0, design.error_sd, n)
        logc = rng.uniform(0.0, u, n)
        observed = np.minimum(t, logc)
        event = (t <= logc).astype(np.int64)
        out.append((observed, event))
    return out


def generate_study(design, replicate=0):
    """Deterministically generate one replicate: (MultiStudy, TruthSet)."""
    rng = replicate_rng(design.seed, replicate)
    genotypes = gen_genotypes(design, rng)
    truth = gen_truth(design)
    survival = gen_survival(genotypes, truth, design, rng)

    gene_ids = design.gene_ids()
    subtype_ids = design.subtype_ids()
    snp_ids = design.snp_ids()
    structure = GeneStructure.uniform(gene_ids, subtype_ids, design.sizes())
    gene_of_snp = {}
    for g, d in zip(gene_ids, design.sizes()):
        for k in range(d):
            gene_of_snp[f"{g}_s{k + 1}"] = g

    cohorts = []
    for m, sub in enumerate(subtype_ids):
        log_t, event = survival[m]
        cohorts.append(SubtypeCohort(
            subtype_id=sub,
            log_time=log_t,
            event=event,
            genotype=genotypes[m],
            subject_ids=tuple(f"s{sub}_{i + 1:04d}" for i in range(len(log_t))),
            snp_ids=snp_ids,
            time_years=np.exp(log_t),
        ))
    return MultiStudy(cohorts, structure, gene_of_snp=gene_of_snp), truth


def replicate_rng(seed, replicate):
    """Counter-based substream for one replicate: Philox keyed by seed XOR r."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed) ^ np.uint64(replicate)))


def write_study(ms, truth, directory):
    """Emit the CSV triple plus truth.json into a directory."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_csv(ms, directory / "genotype.csv", directory / "survival.csv", directory / "gene_map.csv")
    with open(directory / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth.to_dict(), fh, indent=2, sort_keys=True)
    return directory
