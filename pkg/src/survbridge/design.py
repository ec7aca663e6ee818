"""Kaplan-Meier weighting and assembly of the stacked least-squares design.

Each subtype's censored responses are weighted by the jumps of the
Kaplan-Meier estimator of its log-time distribution, weighted-centered (which
absorbs the intercept), optionally reduced by within-gene PCA, rescaled by
sqrt(n / n_m), and stacked into a block-diagonal regression problem whose
normalized quadratic loss equals the sum of per-subtype normalized losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohort import GeneStructure

# a gene block triggers automatic PCA when its smallest covariance eigenvalue
# falls below this fraction of its largest
PCA_CONDITION_TRIGGER = 1e-8


class DesignError(ValueError):
    """The weighting or design assembly preconditions are violated."""


@dataclass
class KmWeights:
    """Kaplan-Meier jump weights in time-sorted order.

    ``order`` maps sorted position -> original index. Ties are broken events
    first, then by original index, the standard convention for these weights.
    """

    order: np.ndarray
    weights: np.ndarray

    @property
    def total(self):
        return float(self.weights.sum())


def km_weights(log_time, event):
    """Per-observation jumps of the Kaplan-Meier distribution estimator.

    With observations sorted ascending in time, the weight of observation i is
    delta_(i)/(n-i+1) * prod_{j<i} ((n-j)/(n-j+1))^delta_(j); censored
    observations get zero weight and the weights sum to at most 1.
    """
    t = np.asarray(log_time, dtype=float)
    d = np.asarray(event, dtype=np.int64)
    n = t.shape[0]
    if n == 0:
        raise DesignError("empty input")
    if d.shape[0] != n:
        raise DesignError("log_time and event lengths differ")

    order = np.lexsort((np.arange(n), 1 - d, t))
    ds = d[order]

    i = np.arange(1, n + 1, dtype=float)
    # survival factor contributed by observation j onto later weights
    factors = np.where(ds == 1, (n - i) / (n - i + 1), 1.0)
    running = np.concatenate(([1.0], np.cumprod(factors[:-1])))
    w = ds * running / (n - i + 1)
    return KmWeights(order=order, weights=w)


def center_and_weight(cohort, w):
    """Weighted-center the sorted responses/covariates and scale rows by the
    square root of their weights. Zero-weight rows come out all-zero."""
    total = w.weights.sum()
    if not total > 0:
        raise DesignError(f"subtype {cohort.subtype_id}: all Kaplan-Meier weights are zero")
    x = cohort.genotype[w.order]
    y = cohort.log_time[w.order]
    xbar = w.weights @ x / total
    ybar = w.weights @ y / total
    root = np.sqrt(w.weights)[:, None]
    return root[:, 0] * (y - ybar), root * (x - xbar), xbar, ybar


def pca_within_gene(block, variance_fraction):
    """Reduce one column-centered gene block to the fewest leading principal
    component scores explaining at least ``variance_fraction`` of the total
    variation. Returns (scores, loadings); loadings map centered original
    columns to scores for held-out subjects."""
    if not 0 < variance_fraction <= 1:
        raise DesignError(f"variance_fraction must be in (0, 1], got {variance_fraction}")
    block = np.asarray(block, dtype=float)
    u, s, vt = np.linalg.svd(block, full_matrices=False)
    total = float(np.sum(s**2))
    if total <= 0:
        raise DesignError("zero-variance block")
    rank = int(np.sum(s > s[0] * 1e-12))
    explained = np.cumsum(s[:rank] ** 2) / total
    k = int(np.searchsorted(explained, variance_fraction * (1 - 1e-12)) + 1)
    k = min(k, rank)
    # fix the SVD sign ambiguity so repeated runs agree
    signs = np.sign(vt[:k][np.arange(k), np.argmax(np.abs(vt[:k]), axis=1)])
    signs[signs == 0] = 1.0
    loadings = (vt[:k] * signs[:, None]).T
    return block @ loadings, loadings


class StackedDesign:
    """The weighted, centered, subtype-rescaled block-diagonal problem.

    Stores one dense matrix per subtype (rows of other subtypes are implicit
    zeros). ``structure`` reflects any PCA-reduced block sizes. The flat
    coefficient layout matches ``structure``.
    """

    def __init__(self, structure, xs, ys, n_per_subtype, scales,
                 centers=None, response_centers=None, loadings=None, pca_blocks=(),
                 effective_rows=None):
        self.structure = structure
        self.xs = [np.ascontiguousarray(x, dtype=float) for x in xs]
        self.ys = [np.ascontiguousarray(y, dtype=float) for y in ys]
        self.n_per_subtype = tuple(int(v) for v in n_per_subtype)
        self.n = int(sum(self.n_per_subtype))
        self.scales = tuple(float(s) for s in scales)
        # rows carrying positive weight; the quadratic loss is informative on
        # these only, so tuning restricts model size against this count
        if effective_rows is None:
            effective_rows = self.n_per_subtype
        self.effective_rows = tuple(int(v) for v in effective_rows)
        self.centers = centers            # per subtype: weighted covariate means (original columns)
        self.response_centers = response_centers
        self.loadings = loadings or {}    # block id -> PCA loadings, identity when absent
        self.pca_blocks = tuple(pca_blocks)
        self._xts = None
        self._lipschitz = None
        self._grams = None

    @property
    def dim(self):
        return self.structure.dim

    @property
    def y(self):
        """The full stacked response vector."""
        return np.concatenate(self.ys)

    def transposed(self):
        """Per-subtype transposed design matrices (cached, C-contiguous)."""
        if self._xts is None:
            self._xts = [np.ascontiguousarray(x.T) for x in self.xs]
        return self._xts

    def lipschitz(self):
        """Per-block majorization constants: the top eigenvalue of each block
        Gram matrix divided by n, found by power iteration (cached)."""
        if self._lipschitz is None:
            st = self.structure
            grams, offsets = self.gram_pack()
            lips = np.empty(st.n_blocks)
            for b in range(st.n_blocks):
                d = st.blocks[b].size
                gram = grams[offsets[b]:offsets[b] + d * d].reshape(d, d)
                lips[b] = _power_top_eigenvalue(gram) / self.n
            self._lipschitz = lips
        return self._lipschitz

    def gram_pack(self):
        """All block Gram matrices X_b' X_b packed flat, with per-block
        offsets (cached)."""
        if self._grams is None:
            st = self.structure
            offsets = np.zeros(st.n_blocks, dtype=np.int64)
            total = int(np.sum(st.block_size**2))
            grams = np.empty(total)
            pos = 0
            for b in range(st.n_blocks):
                blk = self.xs[st.blocks[b].subtype][:, st.local_slice(b)]
                d = blk.shape[1]
                offsets[b] = pos
                grams[pos:pos + d * d] = (blk.T @ blk).ravel()
                pos += d * d
            self._grams = (grams, offsets)
        return self._grams

    def eig_pack(self):
        """Eigendecompositions of every block's A = X_b'X_b / n: eigenvalues
        aligned with the flat coefficient layout, eigenvector matrices packed
        flat row-major (cached; the sweep kernel consumes these)."""
        if getattr(self, "_eigs", None) is None:
            st = self.structure
            grams, offsets = self.gram_pack()
            eigvals = np.zeros(st.dim)
            eigvecs = np.empty(grams.shape[0])
            for b in range(st.n_blocks):
                d = st.blocks[b].size
                gram = grams[offsets[b]:offsets[b] + d * d].reshape(d, d)
                vals, vecs = np.linalg.eigh(gram / self.n)
                eigvals[st.flat_slice(b)] = np.maximum(vals, 0.0)
                eigvecs[offsets[b]:offsets[b] + d * d] = vecs.ravel()
            self._eigs = (eigvals, eigvecs, offsets)
        return self._eigs

    def block_matrix(self, b):
        """One block's column group as a full n-row matrix (zeros outside the
        owning subtype's rows). Intended for inspection and tests."""
        st = self.structure
        blk = st.blocks[b]
        out = np.zeros((self.n, blk.size))
        r0 = sum(self.n_per_subtype[:blk.subtype])
        out[r0:r0 + self.n_per_subtype[blk.subtype]] = self.xs[blk.subtype][:, st.local_slice(b)]
        return out

    def stacked_matrix(self):
        """The full dense design; small problems and tests only."""
        st = self.structure
        out = np.zeros((self.n, st.dim))
        r0 = 0
        for m, x in enumerate(self.xs):
            c0 = st.subtype_offsets[m]
            out[r0:r0 + x.shape[0], c0:c0 + x.shape[1]] = x
            r0 += x.shape[0]
        return out

    def residuals(self, flat_beta):
        """Per-subtype residual vectors y_m - X_m beta_m."""
        st = self.structure
        out = []
        for m, x in enumerate(self.xs):
            c0 = st.subtype_offsets[m]
            out.append(self.ys[m] - x @ flat_beta[c0:c0 + x.shape[1]])
        return out

    def quadratic_loss(self, flat_beta):
        """(1/2n) * squared residual norm of the stacked problem."""
        return sum(float(r @ r) for r in self.residuals(flat_beta)) / (2 * self.n)

    def gradient_norms(self, residuals):
        """Per-block norms of (1/n) X_b' r, for KKT checks and penalty bounds."""
        st = self.structure
        out = np.empty(st.n_blocks)
        for m, xt in enumerate(self.transposed()):
            g = xt @ residuals[m] / self.n
            b0, b1 = st.subtype_block_range[m]
            for b in range(b0, b1):
                seg = g[st.local_slice(b)]
                out[b] = np.sqrt(seg @ seg)
        return out

    def original_coefficients(self, flat_beta):
        """Map a coefficient vector back to original (pre-PCA) columns per
        subtype, for linear predictors on held-out subjects."""
        st = self.structure
        out = []
        for m in range(len(self.xs)):
            cols = []
            b0, b1 = st.subtype_block_range[m]
            for b in range(b0, b1):
                seg = flat_beta[st.flat_slice(b)]
                load = self.loadings.get(b)
                cols.append(seg if load is None else load @ seg)
            out.append(np.concatenate(cols) if cols else np.zeros(0))
        return out

    def dump_csv(self, directory):
        """Debug dump of the weighted response and design blocks."""
        from pathlib import Path

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for m, sub in enumerate(self.structure.subtype_ids):
            np.savetxt(directory / f"y_{sub}.csv", self.ys[m], delimiter=",")
            np.savetxt(directory / f"x_{sub}.csv", self.xs[m], delimiter=",")


def _power_top_eigenvalue(gram, tol=1e-10, max_iter=1000):
    """Largest eigenvalue of a small PSD matrix by power iteration."""
    d = gram.shape[0]
    if not np.any(gram):
        return 0.0
    v = 1.0 + np.arange(d) * 1e-6
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        gv = gram @ v
        norm = np.linalg.norm(gv)
        if norm == 0:
            return 0.0
        v = gv / norm
        new = float(v @ gram @ v)
        if abs(new - lam) <= tol * max(abs(new), 1.0):
            return new
        lam = new
    return lam


def build_stacked(ms, use_pca=False, variance_fraction=0.9):
    """Assemble the stacked design from a MultiStudy.

    Every cohort is Kaplan-Meier weighted, weighted-centered and scaled by
    sqrt(n / n_m). Gene blocks are PCA-reduced when ``use_pca`` is set, and
    regardless of the flag when a block's covariance is numerically singular
    (condition trigger ``PCA_CONDITION_TRIGGER``).
    """
    st = ms.structure
    n = ms.n
    xs, ys, scales, centers, response_centers = [], [], [], [], []
    loadings = {}
    pca_blocks = []
    new_sizes = {}

    per_sub_blocks = []
    effective_rows = []
    for m, cohort in enumerate(ms.cohorts):
        w = km_weights(cohort.log_time, cohort.event)
        effective_rows.append(int(np.sum(w.weights > 0)))
        y_w, x_w, xbar, ybar = center_and_weight(cohort, w)
        scale = np.sqrt(n / cohort.n)
        cols = []
        b0, b1 = st.subtype_block_range[m]
        for b in range(b0, b1):
            blk = x_w[:, st.local_slice(b)]
            gene_id, subtype_id = st.pair_label(b)
            reduce = use_pca
            if not reduce and blk.shape[1] > 1:
                s = np.linalg.svd(blk, compute_uv=False)
                reduce = s[0] > 0 and (s[-1] / s[0]) ** 2 < PCA_CONDITION_TRIGGER
            if reduce and np.any(blk):
                scores, load = pca_within_gene(blk, variance_fraction)
                cols.append(scores)
                new_sizes[(gene_id, subtype_id)] = scores.shape[1]
                pca_blocks.append(b)
                loadings[b] = load
            else:
                cols.append(blk)
                new_sizes[(gene_id, subtype_id)] = blk.shape[1]
        per_sub_blocks.append(cols)
        ys.append(scale * y_w)
        scales.append(scale)
        centers.append(xbar)
        response_centers.append(float(ybar))
        xs.append(scale * np.hstack(cols))

    new_structure = GeneStructure(st.gene_ids, st.subtype_ids, new_sizes)
    # loadings were keyed by old block ids; re-key to the new structure's ids
    rekeyed = {}
    for b_old, load in loadings.items():
        gene_id, subtype_id = st.pair_label(b_old)
        rekeyed[new_structure.block_id(gene_id, subtype_id)] = load
    pca_new = tuple(
        new_structure.block_id(*st.pair_label(b)) for b in pca_blocks
    )
    return StackedDesign(
        new_structure, xs, ys, ms.n_per_subtype, scales,
        centers=centers, response_centers=response_centers,
        loadings=rekeyed, pca_blocks=pca_new, effective_rows=effective_rows,
    )
