import numpy as np
import pytest
from scipy.optimize import minimize

from survbridge.bridge import (
    BridgeConfig,
    bridge_block_weights,
    composite_objective,
    fit_bridge,
    lambda_to_tau,
    surrogate_objective,
    tau_to_lambda,
    theta_to_group_weights,
    theta_update,
)
from survbridge.cohort import GeneStructure
from survbridge.design import StackedDesign
from survbridge.solver import CoefficientSet


def test_lambda_tau_examples():
    assert lambda_to_tau(2.0, 0.5) == pytest.approx(1.0, rel=1e-14)
    assert lambda_to_tau(4.0, 0.5) == pytest.approx(4.0, rel=1e-14)


def test_lambda_tau_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(100):
        gamma = rng.uniform(0.05, 0.95)
        tau = 10 ** rng.uniform(-4, 3)
        back = lambda_to_tau(tau_to_lambda(tau, gamma), gamma)
        assert back == pytest.approx(tau, rel=1e-14)


def test_lambda_tau_validation():
    with pytest.raises(ValueError):
        lambda_to_tau(1.0, 1.0)
    with pytest.raises(ValueError):
        lambda_to_tau(-1.0, 0.5)
    with pytest.raises(ValueError):
        tau_to_lambda(0.0, 0.5)


def single_block_structure(d=1, subtypes=1):
    return GeneStructure.uniform(["G0"], [str(m + 1) for m in range(subtypes)], d)


def test_theta_zero_for_zero_gene():
    st = GeneStructure.uniform(["G0", "G1"], ["1", "2"], 2)
    beta = CoefficientSet.zeros(st)
    beta.block("G1", "1")[:] = [1.0, 2.0]
    cfg = BridgeConfig(gamma=0.5, lam=1.0)
    theta = theta_update(beta, cfg)
    assert theta[0] == 0.0
    assert theta[1] > 0.0


def test_theta_unit_example():
    # single gene, single subtype (c_j = 1), d=1, beta=1, gamma=0.5, tau=1
    st = single_block_structure()
    beta = CoefficientSet(st, np.array([1.0]))
    cfg = BridgeConfig(gamma=0.5, lam=tau_to_lambda(1.0, 0.5))
    assert cfg.tau == pytest.approx(1.0, rel=1e-12)
    theta = theta_update(beta, cfg)
    assert theta[0] == pytest.approx(1.0, rel=1e-12)


def test_theta_homogeneous_scaling():
    st = GeneStructure.uniform(["G0"], ["1", "2"], 3)
    rng = np.random.default_rng(1)
    beta = CoefficientSet(st, rng.normal(size=st.dim))
    doubled = CoefficientSet(st, 2 * beta.values)
    for gamma in (0.3, 0.5, 0.9):
        cfg = BridgeConfig(gamma=gamma, lam=0.7)
        assert theta_update(doubled, cfg)[0] == pytest.approx(
            2**gamma * theta_update(beta, cfg)[0], rel=1e-12)


def test_group_weights_unit_example():
    # theta=1, c=1 (single subtype), d=4 -> w = sqrt(4) = 2
    st = single_block_structure(d=4)
    cfg = BridgeConfig(gamma=0.5, lam=1.0)
    w = theta_to_group_weights(np.array([1.0]), cfg, st)
    assert w.values[0] == pytest.approx(2.0)


def test_group_weights_zero_theta_locks():
    st = single_block_structure(d=2)
    cfg = BridgeConfig(gamma=0.5, lam=1.0)
    w = theta_to_group_weights(np.array([0.0]), cfg, st)
    assert np.isinf(w.values[0])


def test_group_weights_gamma_half_exponents():
    # at gamma = 0.5: w = theta^-1 * c^2 * sqrt(d)
    st = GeneStructure.uniform(["G0"], ["1", "2"], 3)  # c = 2^0.5
    cfg = BridgeConfig(gamma=0.5, lam=1.0)
    theta = np.array([0.25])
    w = theta_to_group_weights(theta, cfg, st)
    c = 2**0.5
    assert np.allclose(w.values, (1 / 0.25) * c**2 * np.sqrt(3))


def toy_design(rng, genes=2, subtypes=2, d=2, n=20):
    st = GeneStructure.uniform([f"G{j}" for j in range(genes)],
                               [str(m + 1) for m in range(subtypes)], d)
    xs = [rng.normal(size=(n, st.subtype_ncols[m])) for m in range(subtypes)]
    ys = [rng.normal(size=n) for _ in range(subtypes)]
    return StackedDesign(st, xs, ys, (n,) * subtypes, (1.0,) * subtypes)


def test_composite_objective_at_zero():
    rng = np.random.default_rng(2)
    design = toy_design(rng)
    cfg = BridgeConfig(gamma=0.5, lam=0.3)
    beta = CoefficientSet.zeros(design.structure)
    expected = sum(float(y @ y) for y in design.ys) / (2 * design.n)
    assert composite_objective(beta, design, cfg) == pytest.approx(expected, rel=1e-12)


def test_composite_objective_penalty_homogeneity():
    rng = np.random.default_rng(3)
    design = toy_design(rng)
    for gamma in (0.3, 0.7):
        cfg = BridgeConfig(gamma=gamma, lam=0.4)
        beta = CoefficientSet(design.structure, rng.normal(size=design.dim))
        scaled = CoefficientSet(design.structure, 3.0 * beta.values)
        pen = composite_objective(beta, design, cfg) - design.quadratic_loss(beta.values)
        pen_scaled = composite_objective(scaled, design, cfg) - design.quadratic_loss(scaled.values)
        assert pen_scaled == pytest.approx(3.0**gamma * pen, rel=1e-10)


def test_surrogate_matches_composite_at_optimal_theta():
    # partial minimization over theta recovers the composite objective
    rng = np.random.default_rng(4)
    design = toy_design(rng, genes=3, subtypes=2, d=2)
    for gamma in (0.3, 0.5, 0.7, 0.9):
        cfg = BridgeConfig(gamma=gamma, lam=10 ** rng.uniform(-2, 0.5))
        beta = CoefficientSet(design.structure, rng.normal(size=design.dim))
        theta = theta_update(beta, cfg)
        s_val = surrogate_objective(beta, theta, design, cfg)
        assert s_val == pytest.approx(composite_objective(beta, design, cfg), rel=1e-10)
        # any other nonnegative theta does no better
        for _ in range(5):
            other = theta * np.exp(rng.normal(scale=0.5, size=theta.shape))
            assert surrogate_objective(beta, other, design, cfg) >= s_val - 1e-12


def test_fit_bridge_overpenalized_is_empty():
    rng = np.random.default_rng(5)
    design = toy_design(rng)
    fit = fit_bridge(design, BridgeConfig(gamma=0.5, lam=1e3))
    assert fit.selected == ()
    assert fit.converged
    assert np.allclose(fit.beta.values, 0.0)


def test_fit_bridge_trace_non_increasing():
    rng = np.random.default_rng(6)
    design = toy_design(rng, genes=4, d=2, n=30)
    fit = fit_bridge(design, BridgeConfig(gamma=0.5, lam=0.02))
    diffs = np.diff(fit.objective_trace)
    assert np.all(diffs <= 1e-10 * (1 + np.abs(fit.objective_trace[:-1])))


def test_fit_bridge_two_level_selection_semantics():
    rng = np.random.default_rng(7)
    design = toy_design(rng, genes=3, subtypes=2, d=2, n=25)
    fit = fit_bridge(design, BridgeConfig(gamma=0.5, lam=0.05))
    norms = fit.beta.block_norms()
    st = design.structure
    gene_active = {g: False for g in st.gene_ids}
    for b in np.flatnonzero(norms > 0):
        gene_active[st.gene_ids[st.blocks[b].gene]] = True
    for gene, sub in fit.selected:
        assert gene_active[gene]
    # pairs of inactive genes are never selected
    for g in st.gene_ids:
        if not gene_active[g]:
            assert all(gene != g for gene, _ in fit.selected)


def support_enumeration_oracle(design, cfg, seed=0):
    """Best objective over every (gene, subtype) support pattern, minimizing
    the composite objective restricted to each support with a generic smooth
    optimizer from several starts."""
    st = design.structure
    rng = np.random.default_rng(seed)
    best = np.inf
    n_blocks = st.n_blocks
    for mask in range(2**n_blocks):
        support = [(mask >> b) & 1 for b in range(n_blocks)]
        cols = [c for b in range(n_blocks) if support[b]
                for c in range(*st.flat_slice(b).indices(st.dim))]
        if not cols:
            val = composite_objective(CoefficientSet.zeros(st), design, cfg)
            best = min(best, val)
            continue
        cols = np.array(cols)

        def objective(free):
            flat = np.zeros(st.dim)
            flat[cols] = free
            return composite_objective(CoefficientSet(st, flat), design, cfg)

        starts = [np.zeros(cols.size) + 0.05, rng.normal(size=cols.size)]
        # least squares on the support is usually the best start
        x = design.stacked_matrix()[:, cols]
        ls, *_ = np.linalg.lstsq(x, design.y, rcond=None)
        starts.append(ls)
        for s0 in starts:
            res = minimize(objective, s0, method="Nelder-Mead",
                           options={"maxiter": 4000, "fatol": 1e-12, "xatol": 1e-10})
            best = min(best, res.fun)
    return best


def test_fit_bridge_beats_support_enumeration_oracle():
    rng = np.random.default_rng(8)
    design = toy_design(rng, genes=2, subtypes=2, d=2, n=40)
    # plant signal so the solution is interesting
    design.ys[0] = design.xs[0][:, 0] * 0.8 + 0.2 * rng.normal(size=40)
    design.ys[1] = design.xs[1][:, 2] * 0.6 + 0.2 * rng.normal(size=40)
    cfg = BridgeConfig(gamma=0.5, lam=0.05)
    fit = fit_bridge(design, cfg)
    oracle = support_enumeration_oracle(design, cfg)
    assert fit.objective_trace[-1] <= oracle + 1e-4


def test_fit_bridge_gamma_near_one_degenerates_to_group_lasso_weights():
    st = GeneStructure.uniform(["G0", "G1"], ["1", "2"], 3)
    gamma = 1 - 1e-6
    lam = 0.37
    cfg = BridgeConfig(gamma=gamma, lam=lam)
    beta = CoefficientSet.ones(st)
    weights = bridge_block_weights(beta, cfg, st)
    c = cfg.gene_constants(st)
    expected = lam * st.sqrt_d * (c ** (1 / gamma))[st.block_gene]
    assert np.allclose(weights.values, expected, rtol=1e-4)


def test_fused_weights_match_theta_composition():
    st = GeneStructure.uniform(["G0", "G1", "G2"], ["1", "2"], 2)
    rng = np.random.default_rng(11)
    beta = CoefficientSet(st, rng.normal(size=st.dim))
    beta.block("G2", "1")[:] = 0.0
    beta.block("G2", "2")[:] = 0.0
    for gamma in (0.3, 0.5, 0.7, 0.9):
        cfg = BridgeConfig(gamma=gamma, lam=0.21)
        via_theta = theta_to_group_weights(theta_update(beta, cfg), cfg, st)
        fused = bridge_block_weights(beta, cfg, st)
        both = np.isfinite(via_theta.values) & np.isfinite(fused.values)
        assert np.allclose(via_theta.values[both], fused.values[both], rtol=1e-10)
        assert np.array_equal(np.isinf(via_theta.values), np.isinf(fused.values))


def test_fit_bridge_multi_start_keeps_best():
    rng = np.random.default_rng(9)
    design = toy_design(rng, genes=2, subtypes=1, d=2, n=25)
    single = fit_bridge(design, BridgeConfig(gamma=0.5, lam=0.03))
    multi = fit_bridge(design, BridgeConfig(gamma=0.5, lam=0.03, multi_start=True))
    assert multi.objective_trace[-1] <= single.objective_trace[-1] + 1e-12


def test_fit_result_json_round_trip():
    import json

    rng = np.random.default_rng(10)
    design = toy_design(rng)
    fit = fit_bridge(design, BridgeConfig(gamma=0.5, lam=0.05))
    payload = json.loads(json.dumps(fit.to_dict()))
    assert payload["config"]["gamma"] == 0.5
    assert isinstance(payload["selected"], list)
    assert payload["objective_trace"][0] >= payload["objective_trace"][-1]
