import numpy as np
import pytest

from survbridge.cohort import GeneStructure
from survbridge.design import StackedDesign
from survbridge.solver import CoefficientSet
from survbridge.tuning import (
    TuningReport,
    bic,
    bic_value,
    bridge_lambda_max,
    df_active,
    df_approx,
    lambda_grid,
    ls_block_norms,
    tune_fit,
)


def design_with(rng, genes=3, subtypes=1, d=2, n=25, y=None, xs=None):
    st = GeneStructure.uniform([f"G{j}" for j in range(genes)],
                               [str(m + 1) for m in range(subtypes)], d)
    xs = xs or [rng.normal(size=(n, st.subtype_ncols[m])) for m in range(subtypes)]
    ys = y or [rng.normal(size=n) for _ in range(subtypes)]
    return StackedDesign(st, xs, ys, (n,) * subtypes, (1.0,) * subtypes)


def test_df_approx_empty_model():
    st = GeneStructure.uniform(["G0"], ["1"], 3)
    assert df_approx(CoefficientSet.zeros(st), np.array([1.0])) == 0.0


def test_df_approx_single_snp_block():
    st = GeneStructure.uniform(["G0"], ["1"], 1)
    beta = CoefficientSet(st, np.array([0.4]))
    # d=1 kills the ratio term regardless of the least squares norm
    assert df_approx(beta, np.array([0.01])) == pytest.approx(1.0)


def test_df_approx_direct_arithmetic():
    st = GeneStructure.uniform(["G0"], ["1"], 3)
    beta = CoefficientSet(st, np.array([0.5, 0.0, 0.0]))  # block norm 0.5
    assert df_approx(beta, np.array([1.0])) == pytest.approx(1 + 0.5 * 2)


def test_df_approx_zero_ls_norm_clamps():
    st = GeneStructure.uniform(["G0"], ["1"], 3)
    beta = CoefficientSet(st, np.array([0.5, 0.0, 0.0]))
    assert df_approx(beta, np.array([0.0])) == pytest.approx(1 + 1.0 * 2)


def test_df_approx_never_exceeds_active_coords():
    rng = np.random.default_rng(0)
    st = GeneStructure.uniform(["G0", "G1"], ["1", "2"], 3)
    for _ in range(20):
        beta = CoefficientSet(st, rng.normal(size=st.dim) * (rng.random(st.dim) > 0.3))
        ls = np.abs(rng.normal(size=st.n_blocks)) * (rng.random(st.n_blocks) > 0.2)
        assert df_approx(beta, ls) <= df_active(beta) + 1e-12


def test_bic_value_examples():
    rng = np.random.default_rng(1)
    design = design_with(rng)
    y2 = sum(float(y @ y) for y in design.ys)
    assert bic_value(y2, design.n, 0.0) == pytest.approx(np.log(y2 / design.n))
    assert bic_value(1.0, 100, 1.0) - bic_value(1.0, 100, 0.0) == pytest.approx(
        np.log(100) / 100)
    assert bic_value(2.0, 50, 3.0) > bic_value(1.0, 50, 3.0)  # monotone in rss
    # nested fits with equal residuals: smaller df wins
    assert bic_value(1.0, 50, 2.0) < bic_value(1.0, 50, 3.0)


def test_bic_perfect_fit_floored():
    assert np.isfinite(bic_value(0.0, 100, 5.0))


def test_ls_block_norms_orthonormal_closed_form():
    rng = np.random.default_rng(2)
    n, d = 30, 3
    st = GeneStructure.uniform(["G0"], ["1"], d)
    q, _ = np.linalg.qr(rng.normal(size=(n, d)))
    x = q * np.sqrt(n)
    y = rng.normal(size=n)
    design = StackedDesign(st, [x], [y], (n,), (1.0,))
    norms, ridged = ls_block_norms(design)
    assert not ridged.any()
    assert norms[0] == pytest.approx(np.linalg.norm(x.T @ y / n), rel=1e-10)


def test_ls_block_norms_rank_deficient_ridged():
    rng = np.random.default_rng(3)
    n = 20
    st = GeneStructure.uniform(["G0"], ["1"], 2)
    col = rng.normal(size=n)
    x = np.column_stack([col, col])  # exactly collinear
    y = rng.normal(size=n)
    design = StackedDesign(st, [x], [y], (n,), (1.0,))
    norms, ridged = ls_block_norms(design)
    assert ridged[0]
    assert np.isfinite(norms[0]) and norms[0] > 0


def test_ls_block_norms_null_gene_near_zero():
    rng = np.random.default_rng(4)
    n = 2000
    st = GeneStructure.uniform(["G0", "G1"], ["1"], 2)
    x = rng.normal(size=(n, 4))
    y = x[:, :2] @ np.array([1.0, -0.5]) + 0.5 * rng.normal(size=n)
    design = StackedDesign(st, [x], [y], (n,), (1.0,))
    norms, _ = ls_block_norms(design)
    assert norms[0] > 0.5
    assert norms[1] < 0.1  # G1 is independent of the response


def test_lambda_grid_shapes():
    g = lambda_grid(2.0, 5, span=100.0)
    assert g[0] == pytest.approx(2.0)
    assert g[-1] == pytest.approx(0.02)
    assert np.all(np.diff(g) < 0)
    assert lambda_grid(3.0, 1).tolist() == [3.0]
    with pytest.raises(ValueError):
        lambda_grid(1.0, 0)


def signal_design(rng, n=40):
    st = GeneStructure.uniform(["G0", "G1", "G2"], ["1"], 2)
    x = rng.normal(size=(n, 6))
    y = x[:, 0] * 1.0 + x[:, 1] * 0.6 + 0.4 * rng.normal(size=n)
    return StackedDesign(st, [x], [y], (n,), (1.0,))


def test_bridge_lambda_max_top_is_empty():
    rng = np.random.default_rng(5)
    design = signal_design(rng)
    lmax = bridge_lambda_max(design, 0.5)
    from survbridge.bridge import BridgeConfig, fit_bridge

    assert fit_bridge(design, BridgeConfig(gamma=0.5, lam=lmax)).selected == ()
    # within 1% below, the model is nonempty
    assert fit_bridge(design, BridgeConfig(gamma=0.5, lam=lmax / 1.02)).selected != ()


def test_tune_fit_reports_per_gamma_and_overall():
    rng = np.random.default_rng(6)
    design = signal_design(rng)
    report = tune_fit(design, gammas=(0.5, 0.7, 0.9), lambda_grid_size=8)
    assert set(report.best_per_gamma) == {0.5, 0.7, 0.9}
    assert set(report.lambda_max) == {0.5, 0.7, 0.9}
    assert len(report.points) == 24
    assert report.points[0].n_selected == 0  # top of every grid is empty
    best = report.best_point()
    assert best.bic == min(p.bic for p in report.points if p.eligible)
    assert ("G0", "1") in report.best_fit().selected


def test_tune_fit_degenerate_single_point_grid():
    rng = np.random.default_rng(7)
    design = signal_design(rng)
    report = tune_fit(design, gammas=(0.5,), lambda_grid_size=1)
    assert len(report.points) == 1
    assert report.best_index == 0


def test_tune_fit_deterministic():
    rng = np.random.default_rng(8)
    design = signal_design(rng)
    r1 = tune_fit(design, gammas=(0.5,), lambda_grid_size=6)
    r2 = tune_fit(design, gammas=(0.5,), lambda_grid_size=6)
    b1 = [(p.lam, p.bic) for p in r1.points]
    b2 = [(p.lam, p.bic) for p in r2.points]
    assert b1 == b2  # bit-identical curve


def test_tune_fit_rejects_bad_gamma():
    rng = np.random.default_rng(9)
    design = signal_design(rng)
    with pytest.raises(ValueError):
        tune_fit(design, gammas=(1.2,))


def test_tuning_report_serialization(tmp_path):
    rng = np.random.default_rng(10)
    design = signal_design(rng)
    report = tune_fit(design, gammas=(0.5,), lambda_grid_size=5)
    csv_path = tmp_path / "tuning.csv"
    report.to_csv(csv_path)
    text = csv_path.read_text()
    assert "bic" in text.splitlines()[0]
    assert len(text.splitlines()) == 6
    payload = report.to_json(tmp_path / "tuning.json")
    assert payload["best"]["config"]["gamma"] == 0.5
