"""BIC-based tuning of the composite-bridge penalty over (gamma, lambda) grids.

BIC = log(||Y - X beta||^2 / n) + log(n) df / n, with the degrees of freedom
approximated from the per-block shrinkage ratios against single-block least
squares fits. The lambda grid is log-spaced over [lambda_max / 100,
lambda_max], where lambda_max (the smallest level giving the empty model) is
located by bisection.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .bridge import BridgeConfig, fit_bridge

RIDGE_FRACTION = 1e-6   # rank-deficient single-block least squares fallback
RSS_FLOOR = 1e-12       # keeps BIC finite on a perfect fit


def ls_block_norms(design):
    """Coefficient norm of the weighted least squares fit of each block alone.

    Uses each subtype's weighted, centered design. Rank-deficient block Gram
    matrices are ridged by RIDGE_FRACTION * trace / d; returns (norms,
    ridged mask) so reports can flag the fallback.
    """
    st = design.structure
    norms = np.zeros(st.n_blocks)
    ridged = np.zeros(st.n_blocks, dtype=bool)
    for b in range(st.n_blocks):
        blk = st.blocks[b]
        x = design.xs[blk.subtype][:, st.local_slice(b)]
        y = design.ys[blk.subtype]
        gram = x.T @ x
        trace = float(np.trace(gram))
        if trace <= 0:
            continue
        eigs = np.linalg.eigvalsh(gram)
        if eigs[0] < 1e-10 * eigs[-1]:
            gram = gram + (RIDGE_FRACTION * trace / blk.size) * np.eye(blk.size)
            ridged[b] = True
        coef = np.linalg.solve(gram, x.T @ y)
        norms[b] = float(np.linalg.norm(coef))
    return norms, ridged


def df_approx(beta, ls_norms):
    """Degrees-of-freedom approximation: one per active block plus the
    shrinkage ratio ||beta_b|| / ||beta_b^LS|| times (d_b - 1). Ratios are
    clamped to [0, 1] (a zero least-squares norm counts as ratio 1), so the
    total never exceeds the active coordinate count."""
    st = beta.structure
    norms = beta.block_norms()
    active = norms > 0
    if not active.any():
        return 0.0
    ls = np.asarray(ls_norms, dtype=float)
    ratio = np.ones(int(active.sum()))
    pos = ls[active] > 0
    ratio[pos] = np.minimum(norms[active][pos] / ls[active][pos], 1.0)
    return float(active.sum() + np.sum(ratio * (st.block_size[active] - 1)))


def bic_value(rss, n, df):
    """log(rss / n) + log(n) * df / n with the residual floored at RSS_FLOOR."""
    if n <= 0:
        raise ValueError("n must be positive")
    return float(np.log(max(rss, RSS_FLOOR) / n) + np.log(n) * df / n)


def bic(fit, design, df):
    """BIC of a fitted model on its design."""
    rss = 2.0 * design.n * design.quadratic_loss(fit.beta.values)
    return bic_value(rss, design.n, df)


def df_active(beta):
    """Active coordinate count: the degrees of freedom of the (essentially
    unshrunk) concave-penalty fit on its selected blocks."""
    st = beta.structure
    return float(st.block_size[beta.block_norms() > 0].sum())


def bridge_lambda_max(design, gamma, precision=0.01, tol_outer=1e-3, max_outer=500,
                      tol_inner=1e-7):
    """Smallest penalty level at which the bridge fit selects nothing, located
    by geometric bisection to the given relative precision. The returned level
    is verified empty."""

    def is_empty(lam):
        cfg = BridgeConfig(gamma=gamma, lam=lam, tol_outer=tol_outer,
                           max_outer=max_outer, tol_inner=tol_inner)
        return len(fit_bridge(design, cfg).selected) == 0

    from .solver import glasso_lambda_max

    start = max(glasso_lambda_max(design), 1e-12)
    hi = start
    for _ in range(80):
        if is_empty(hi):
            break
        hi *= 2.0
    else:
        raise RuntimeError("no empty model found while expanding the penalty level")
    lo = hi / 2.0
    for _ in range(80):
        if not is_empty(lo):
            break
        hi = lo
        lo /= 2.0
    else:
        return hi  # empty all the way down: degenerate (e.g. null) data
    while hi / lo > 1.0 + precision:
        mid = float(np.sqrt(lo * hi))
        if is_empty(mid):
            hi = mid
        else:
            lo = mid
    return hi


def lambda_grid(lmax, size=50, span=100.0):
    """Log-spaced descending grid from lmax down to lmax / span."""
    if size < 1:
        raise ValueError("grid size must be >= 1")
    if size == 1:
        return np.array([float(lmax)])
    return np.geomspace(lmax, lmax / span, int(size))


@dataclass
class TuningPoint:
    gamma: float
    lam: float
    bic: float
    df: float
    rss: float
    n_selected: int
    active_coords: int
    eligible: bool
    converged: bool
    certified: bool
    kkt_gap: float
    objective: float


@dataclass
class TuningReport:
    """Every (gamma, lambda) grid point with its BIC, plus the chosen fits."""

    points: list = field(default_factory=list)
    best_index: int = -1
    best_per_gamma: dict = field(default_factory=dict)   # gamma -> index into points
    fits: dict = field(default_factory=dict)             # index -> FitResult (best points only)
    lambda_max: dict = field(default_factory=dict)       # gamma -> located lambda_max
    all_certified: bool = True

    def frame(self):
        return pd.DataFrame([asdict(p) for p in self.points])

    def best_point(self):
        return self.points[self.best_index]

    def best_fit(self):
        return self.fits[self.best_index]

    def best_fit_for(self, gamma):
        return self.fits[self.best_per_gamma[float(gamma)]]

    def to_csv(self, path):
        self.frame().to_csv(path, index=False)

    def to_json(self, path=None):
        payload = {
            "points": [asdict(p) for p in self.points],
            "best_index": self.best_index,
            "best_per_gamma": {str(g): i for g, i in self.best_per_gamma.items()},
            "lambda_max": {str(g): v for g, v in self.lambda_max.items()},
            "all_certified": self.all_certified,
            "best": self.best_fit().to_dict() if self.best_index >= 0 else None,
        }
        if path is None:
            return payload
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
        return payload


def _best_of(points, indices):
    """Index minimizing BIC over the eligible points; ties resolve toward
    larger lambda (sparser fit)."""
    best = None
    for i in indices:
        if not points[i].eligible:
            continue
        if best is None or points[i].bic < points[best].bic - 1e-15:
            best = i
        elif abs(points[i].bic - points[best].bic) <= 1e-15 and points[i].lam > points[best].lam:
            best = i
    return best


def tune_fit(design, gammas=(0.5, 0.7, 0.9), lambda_grid_size=50, tol_outer=1e-3,
             max_outer=500, tol_inner=1e-7, grid_span=100.0):
    """Fit the composite bridge over the full (gamma, lambda) grid and pick the
    BIC minimizer per gamma and overall. Each fit starts from the all-ones
    initializer; grid points are independent.

    The concave penalty leaves selected blocks essentially unshrunk, so the
    BIC uses the active coordinate count as its degrees of freedom, and only
    grid points whose active coordinates stay within the design's effective
    row count compete (beyond it the residual is an interpolation artifact).
    """
    gammas = tuple(float(g) for g in gammas)
    for g in gammas:
        if not 0 < g < 1:
            raise ValueError(f"gamma must be in (0, 1), got {g}")
    report = TuningReport()
    max_coords = int(sum(design.effective_rows))

    for gamma in gammas:
        lmax = bridge_lambda_max(design, gamma, tol_outer=tol_outer,
                                 max_outer=max_outer, tol_inner=tol_inner)
        report.lambda_max[gamma] = lmax
        grid = lambda_grid(lmax, lambda_grid_size, grid_span)
        indices = []
        for lam in grid:
            cfg = BridgeConfig(gamma=gamma, lam=float(lam), tol_outer=tol_outer,
                               max_outer=max_outer, tol_inner=tol_inner)
            fit = fit_bridge(design, cfg)
            rss = 2.0 * design.n * design.quadratic_loss(fit.beta.values)
            df = df_active(fit.beta)
            idx = len(report.points)
            indices.append(idx)
            report.points.append(TuningPoint(
                gamma=gamma, lam=float(lam), bic=bic_value(rss, design.n, df),
                df=df, rss=rss, n_selected=len(fit.selected),
                active_coords=int(df), eligible=df <= max_coords,
                converged=fit.converged, certified=fit.inner_certified,
                kkt_gap=fit.kkt_gap, objective=float(fit.objective_trace[-1])))
            report.all_certified = report.all_certified and fit.inner_certified
            report.fits[idx] = fit
        report.best_per_gamma[gamma] = _best_of(report.points, indices)

    report.best_index = _best_of(report.points, list(range(len(report.points))))
    # keep full fit objects only where they matter
    keep = set(report.best_per_gamma.values()) | {report.best_index}
    report.fits = {i: f for i, f in report.fits.items() if i in keep}
    return report
