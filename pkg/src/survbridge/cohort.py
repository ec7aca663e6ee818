"""Data model for multi-subtype survival/genotype studies, CSV ingestion, and
missing-genotype filtering.

File formats
------------
genotype CSV : header ``subject_id,subtype,<snp_id>...``; cells in {0,1,2} or ``NA``.
survival CSV : header ``subject_id,subtype,time,event``; time in years (> 0),
               event in {0,1} (1 = death observed).
gene map CSV : header ``snp_id,gene_id``; row order defines column order.

Subtype order throughout the package is the sorted order of the subtype ids
found in the files. Within each subtype, genotype columns are grouped
contiguously by gene, genes in gene-map order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd


class DataError(ValueError):
    """Input files are malformed or mutually inconsistent."""


@dataclass(frozen=True)
class Block:
    gene: int       # index into GeneStructure.gene_ids
    subtype: int    # index into GeneStructure.subtype_ids
    size: int       # number of columns (SNPs or components) in this block
    offset: int     # start of the block in the flat coefficient vector
    local_start: int  # start column within the owning subtype's matrix


class GeneStructure:
    """The gene/SNP/subtype hierarchy.

    Records, for every gene, which subtypes measure it and how many columns
    the (gene, subtype) block spans. Blocks are laid out subtype-major (all of
    subtype 1's gene blocks first, genes in gene-map order), matching the
    column layout of the per-subtype genotype matrices; the flat coefficient
    vector follows the same layout.
    """

    def __init__(self, gene_ids, subtype_ids, block_sizes):
        """``block_sizes`` maps (gene_id, subtype_id) -> column count; pairs
        absent from the mapping are unmeasured (coefficient fixed at zero by
        omission)."""
        self.gene_ids = tuple(str(g) for g in gene_ids)
        self.subtype_ids = tuple(str(s) for s in subtype_ids)
        if len(set(self.gene_ids)) != len(self.gene_ids):
            raise DataError("duplicate gene ids")
        if len(set(self.subtype_ids)) != len(self.subtype_ids):
            raise DataError("duplicate subtype ids")
        gene_pos = {g: i for i, g in enumerate(self.gene_ids)}
        sub_pos = {s: i for i, s in enumerate(self.subtype_ids)}

        sizes = {}
        for (g, s), d in block_sizes.items():
            g, s = str(g), str(s)
            if g not in gene_pos:
                raise DataError(f"block references unknown gene {g!r}")
            if s not in sub_pos:
                raise DataError(f"block references unknown subtype {s!r}")
            d = int(d)
            if d < 1:
                raise DataError(f"block ({g}, {s}) has non-positive size {d}")
            sizes[(gene_pos[g], sub_pos[s])] = d

        blocks = []
        offset = 0
        self.subtype_block_range = []
        self.subtype_ncols = []
        self.subtype_offsets = []
        for m in range(len(self.subtype_ids)):
            b0 = len(blocks)
            local = 0
            self.subtype_offsets.append(offset)
            for j in range(len(self.gene_ids)):
                d = sizes.get((j, m))
                if d is None:
                    continue
                blocks.append(Block(j, m, d, offset, local))
                offset += d
                local += d
            self.subtype_block_range.append((b0, len(blocks)))
            self.subtype_ncols.append(local)
        if not blocks:
            raise DataError("structure has no measured (gene, subtype) blocks")

        self.blocks = tuple(blocks)
        self.dim = offset
        self.n_blocks = len(blocks)
        self.block_gene = np.array([b.gene for b in blocks], dtype=np.int64)
        self.block_subtype = np.array([b.subtype for b in blocks], dtype=np.int64)
        self.block_size = np.array([b.size for b in blocks], dtype=np.int64)
        self.block_offset = np.array([b.offset for b in blocks], dtype=np.int64)
        self.block_local_start = np.array([b.local_start for b in blocks], dtype=np.int64)
        self.sqrt_d = np.sqrt(self.block_size.astype(float))
        self.gene_blocks = [[] for _ in self.gene_ids]
        for i, b in enumerate(blocks):
            self.gene_blocks[b.gene].append(i)
        self.subtypes_per_gene = np.array([len(bs) for bs in self.gene_blocks], dtype=np.int64)
        if np.any(self.subtypes_per_gene == 0):
            missing = self.gene_ids[int(np.argmin(self.subtypes_per_gene))]
            raise DataError(f"gene {missing!r} is measured in no subtype")
        self._block_index = {
            (self.gene_ids[b.gene], self.subtype_ids[b.subtype]): i for i, b in enumerate(blocks)
        }

    @property
    def n_genes(self):
        return len(self.gene_ids)

    @property
    def n_subtypes(self):
        return len(self.subtype_ids)

    def block_id(self, gene_id, subtype_id):
        try:
            return self._block_index[(str(gene_id), str(subtype_id))]
        except KeyError:
            raise KeyError(f"({gene_id}, {subtype_id}) is not a measured block") from None

    def flat_slice(self, b):
        """Slice of block ``b`` in the flat coefficient vector."""
        blk = self.blocks[b]
        return slice(blk.offset, blk.offset + blk.size)

    def local_slice(self, b):
        """Column slice of block ``b`` within its subtype's matrix."""
        blk = self.blocks[b]
        return slice(blk.local_start, blk.local_start + blk.size)

    def pair_label(self, b):
        blk = self.blocks[b]
        return self.gene_ids[blk.gene], self.subtype_ids[blk.subtype]

    @classmethod
    def uniform(cls, gene_ids, subtype_ids, snps_per_gene):
        """Every gene measured in every subtype. ``snps_per_gene`` is an int
        or a per-gene sequence."""
        gene_ids = [str(g) for g in gene_ids]
        if np.isscalar(snps_per_gene):
            sizes = {g: int(snps_per_gene) for g in gene_ids}
        else:
            sizes = {g: int(d) for g, d in zip(gene_ids, snps_per_gene, strict=True)}
        block_sizes = {(g, str(s)): sizes[g] for g in gene_ids for s in subtype_ids}
        return cls(gene_ids, subtype_ids, block_sizes)


@dataclass
class SubtypeCohort:
    """One subtype's observations.

    ``genotype`` may contain NaN for missing cells before filtering;
    ``filter_missing`` removes or imputes them. ``time_years`` keeps the
    original follow-up times so that CSV round-trips are exact.
    """

    subtype_id: str
    log_time: np.ndarray
    event: np.ndarray
    genotype: np.ndarray
    subject_ids: tuple = ()
    snp_ids: tuple = ()
    time_years: np.ndarray | None = None

    def __post_init__(self):
        self.subtype_id = str(self.subtype_id)
        self.log_time = np.asarray(self.log_time, dtype=float)
        self.event = np.asarray(self.event)
        self.genotype = np.asarray(self.genotype, dtype=float)
        n = self.log_time.shape[0]
        if self.event.shape[0] != n or self.genotype.shape[0] != n:
            raise DataError(f"subtype {self.subtype_id}: row counts disagree")
        if not np.isin(self.event, (0, 1)).all():
            raise DataError(f"subtype {self.subtype_id}: event indicators must be 0/1")
        self.event = self.event.astype(np.int64)
        if not self.subject_ids:
            self.subject_ids = tuple(f"{self.subtype_id}_{i}" for i in range(n))
        if not self.snp_ids:
            self.snp_ids = tuple(f"c{j}" for j in range(self.genotype.shape[1]))
        if len(self.subject_ids) != n or len(self.snp_ids) != self.genotype.shape[1]:
            raise DataError(f"subtype {self.subtype_id}: label counts disagree with data shape")
        if self.time_years is None:
            self.time_years = np.exp(self.log_time)
        else:
            self.time_years = np.asarray(self.time_years, dtype=float)

    @property
    def n(self):
        return self.log_time.shape[0]


@dataclass
class MultiStudy:
    """All subtypes of one study plus the gene structure tying columns to genes."""

    cohorts: list
    structure: GeneStructure
    gene_of_snp: dict = field(default_factory=dict)

    def __post_init__(self):
        by_id = {c.subtype_id: c for c in self.cohorts}
        if set(by_id) != set(self.structure.subtype_ids):
            raise DataError("cohort subtype ids do not match the gene structure")
        self.cohorts = [by_id[s] for s in self.structure.subtype_ids]
        for m, c in enumerate(self.cohorts):
            want = self.structure.subtype_ncols[m]
            if c.genotype.shape[1] != want:
                raise DataError(
                    f"subtype {c.subtype_id}: genotype has {c.genotype.shape[1]} columns, "
                    f"structure expects {want}"
                )
        if not self.gene_of_snp:
            st = self.structure
            b0, b1 = st.subtype_block_range[0]
            snp_ids = self.cohorts[0].snp_ids
            for b in range(b0, b1):
                gene = st.gene_ids[st.blocks[b].gene]
                for col in range(*st.local_slice(b).indices(len(snp_ids))):
                    self.gene_of_snp[snp_ids[col]] = gene

    @property
    def n(self):
        return sum(c.n for c in self.cohorts)

    @property
    def n_per_subtype(self):
        return tuple(c.n for c in self.cohorts)

    def cohort(self, subtype_id):
        return self.cohorts[self.structure.subtype_ids.index(str(subtype_id))]


def _read_gene_map(path):
    gm = pd.read_csv(path, dtype=str)
    if list(gm.columns[:2]) != ["snp_id", "gene_id"]:
        raise DataError(f"{path}: gene map must start with columns snp_id,gene_id")
    if gm["snp_id"].duplicated().any():
        dup = gm.loc[gm["snp_id"].duplicated(), "snp_id"].iloc[0]
        raise DataError(f"{path}: duplicate SNP id {dup!r} in gene map")
    gene_order = list(dict.fromkeys(gm["gene_id"]))
    return dict(zip(gm["snp_id"], gm["gene_id"])), gene_order


def load_csv(genotype_path, survival_path, gene_map_path):
    """Read the genotype/survival/gene-map CSV triple into a MultiStudy.

    Columns come out grouped contiguously by gene within each subtype, genes
    in gene-map order. Missing genotypes stay as NaN; run ``filter_missing``
    before building a regression design.
    """
    gene_of_snp, gene_order = _read_gene_map(gene_map_path)

    try:
        geno = pd.read_csv(genotype_path, dtype={"subject_id": str, "subtype": str},
                           na_values=["NA"], keep_default_na=False)
        surv = pd.read_csv(survival_path, dtype={"subject_id": str, "subtype": str},
                           na_values=["NA"], keep_default_na=False)
    except (pd.errors.ParserError, ValueError) as exc:
        raise DataError(f"parse error: {exc}") from exc
    for name, frame, cols in (("genotype", geno, ["subject_id", "subtype"]),
                              ("survival", surv, ["subject_id", "subtype", "time", "event"])):
        if list(frame.columns[: len(cols)]) != cols:
            raise DataError(f"{name} CSV must start with columns {','.join(cols)}")

    snp_cols = [c for c in geno.columns if c not in ("subject_id", "subtype")]
    unmapped = [c for c in snp_cols if c not in gene_of_snp]
    if unmapped:
        raise DataError(f"unmapped SNP column(s) in genotype file: {', '.join(unmapped[:5])}")

    times = pd.to_numeric(surv["time"], errors="coerce")
    if times.isna().any() or (times <= 0).any():
        bad = surv.loc[times.isna() | (times <= 0), "subject_id"].iloc[0]
        raise DataError(f"non-positive time for subject {bad!r}")
    events = pd.to_numeric(surv["event"], errors="coerce")
    if events.isna().any() or ~events.isin((0, 1)).all():
        raise DataError("event column must be 0/1")

    gmap = dict(zip(geno["subject_id"], geno["subtype"]))
    smap = dict(zip(surv["subject_id"], surv["subtype"]))
    if len(gmap) != len(geno) or len(smap) != len(surv):
        raise DataError("duplicate subject ids")
    if gmap != smap:
        raise DataError("subject-id mismatch between genotype and survival files")

    values = geno[snp_cols].apply(pd.to_numeric, errors="coerce")
    observed = values.to_numpy(dtype=float)
    if not np.isin(observed[~np.isnan(observed)], (0.0, 1.0, 2.0)).all():
        raise DataError("genotype cells must be 0, 1, 2 or NA")

    # gene-map order, restricted to the SNPs actually present, grouped by gene
    present = set(snp_cols)
    ordered, sizes = [], {}
    for snp, gene in gene_of_snp.items():
        if snp in present:
            ordered.append(snp)
            sizes[gene] = sizes.get(gene, 0) + 1
    genes = [g for g in gene_order if g in sizes]

    subtype_ids = sorted(set(geno["subtype"]))
    structure = GeneStructure.uniform(genes, subtype_ids, [sizes[g] for g in genes])

    surv = surv.set_index("subject_id")
    cohorts = []
    for s in subtype_ids:
        rows = geno[geno["subtype"] == s]
        sv = surv.loc[rows["subject_id"]]
        t = pd.to_numeric(sv["time"]).to_numpy(dtype=float)
        cohorts.append(SubtypeCohort(
            subtype_id=s,
            log_time=np.log(t),
            event=pd.to_numeric(sv["event"]).to_numpy(dtype=np.int64),
            genotype=rows[ordered].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float),
            subject_ids=tuple(rows["subject_id"]),
            snp_ids=tuple(ordered),
            time_years=t,
        ))
    return MultiStudy(cohorts, structure, gene_of_snp={s: gene_of_snp[s] for s in ordered})


def _format_cell(v):
    if np.isnan(v):
        return "NA"
    if v == int(v):
        return str(int(v))
    return repr(float(v))


def save_csv(ms, genotype_path, survival_path, gene_map_path):
    """Write a MultiStudy back to the CSV triple. Values loaded by
    ``load_csv`` round-trip exactly."""
    snp_ids = ms.cohorts[0].snp_ids
    with open(gene_map_path, "w", encoding="utf-8") as fh:
        fh.write("snp_id,gene_id\n")
        for snp in snp_ids:
            fh.write(f"{snp},{ms.gene_of_snp[snp]}\n")

    with open(genotype_path, "w", encoding="utf-8") as fh:
        fh.write("subject_id,subtype," + ",".join(snp_ids) + "\n")
        for c in ms.cohorts:
            for i, sid in enumerate(c.subject_ids):
                cells = ",".join(_format_cell(v) for v in c.genotype[i])
                fh.write(f"{sid},{c.subtype_id},{cells}\n")

    with open(survival_path, "w", encoding="utf-8") as fh:
        fh.write("subject_id,subtype,time,event\n")
        for c in ms.cohorts:
            for i, sid in enumerate(c.subject_ids):
                fh.write(f"{sid},{c.subtype_id},{repr(float(c.time_years[i]))},{int(c.event[i])}\n")


def _column_mode(col):
    """Most frequent value among non-missing entries; ties go to the smallest."""
    vals = col[~np.isnan(col)]
    if vals.size == 0:
        return np.nan
    uniq, counts = np.unique(vals, return_counts=True)
    return uniq[np.argmax(counts)]


def filter_missing(ms, subject_threshold=0.2, snp_threshold=0.2):
    """Drop subjects with too many missing SNPs, then SNPs with too many
    missing subjects, then impute the rest by per-subtype per-SNP mode.

    Subjects are filtered within their own subtype; SNP missingness is pooled
    over the remaining subjects of all subtypes so every subtype keeps the
    same column set. Idempotent on fully observed data.
    """
    for name, thr in (("subject_threshold", subject_threshold), ("snp_threshold", snp_threshold)):
        if not 0 < thr < 1:
            raise ValueError(f"{name} must be in (0, 1), got {thr}")

    kept = []
    for c in ms.cohorts:
        frac = np.isnan(c.genotype).mean(axis=1) if c.genotype.size else np.zeros(c.n)
        keep = frac <= subject_threshold
        if not keep.any():
            raise DataError(f"subtype {c.subtype_id}: all subjects exceed the missingness threshold")
        kept.append(SubtypeCohort(
            subtype_id=c.subtype_id,
            log_time=c.log_time[keep],
            event=c.event[keep],
            genotype=c.genotype[keep],
            subject_ids=tuple(np.array(c.subject_ids, dtype=object)[keep]),
            snp_ids=c.snp_ids,
            time_years=c.time_years[keep],
        ))

    pooled = np.vstack([c.genotype for c in kept])
    snp_frac = np.isnan(pooled).mean(axis=0)
    keep_snp = snp_frac <= snp_threshold
    if not keep_snp.any():
        raise DataError("all SNPs exceed the missingness threshold")

    snp_ids = tuple(np.array(kept[0].snp_ids, dtype=object)[keep_snp])
    pooled_modes = np.array([_column_mode(pooled[:, j]) for j in np.flatnonzero(keep_snp)])

    cohorts = []
    for c in kept:
        geno = c.genotype[:, keep_snp].copy()
        for j in range(geno.shape[1]):
            col = geno[:, j]
            miss = np.isnan(col)
            if miss.any():
                mode = _column_mode(col)
                if np.isnan(mode):  # entire column missing within this subtype
                    mode = pooled_modes[j]
                col[miss] = mode
        cohorts.append(SubtypeCohort(
            subtype_id=c.subtype_id,
            log_time=c.log_time,
            event=c.event,
            genotype=geno,
            subject_ids=c.subject_ids,
            snp_ids=snp_ids,
            time_years=c.time_years,
        ))

    gene_of_snp = {s: ms.gene_of_snp[s] for s in snp_ids}
    sizes = {}
    for s in snp_ids:
        g = gene_of_snp[s]
        sizes[g] = sizes.get(g, 0) + 1
    genes = [g for g in ms.structure.gene_ids if g in sizes]
    structure = GeneStructure.uniform(genes, ms.structure.subtype_ids, [sizes[g] for g in genes])
    return MultiStudy(cohorts, structure, gene_of_snp=gene_of_snp)
