import numpy as np
import pytest
from scipy.stats import chi2, hypergeom

from survbridge.evaluate import (
    FitSettings,
    PredictionReport,
    ReplicateScore,
    RunTableResult,
    gamma_method,
    glasso_selected_pairs,
    logrank_two_group,
    occurrence_index,
    predict_evaluate,
    run_table,
    score_selection,
    single_subtype_study,
    stratified_subsample,
)
from survbridge.simulate import SimDesign, gen_truth, generate_study, replicate_rng


def easy_design(**kw):
    base = dict(n_genes=8, snps_per_gene=5, n_per_subtype=60, flat_coef=0.6,
                correlation_param=0.5, seed=21)
    base.update(kw)
    return SimDesign(**base)


FAST = FitSettings(gammas=(0.5,), lambda_grid_size=10)


def test_score_selection_exact_match():
    truth = gen_truth(easy_design())
    score = score_selection(truth.pairs, truth)
    assert score.true_positives == 12 and score.model_size == 12
    assert score.false_positives == 0


def test_score_selection_empty_and_extras():
    truth = gen_truth(easy_design())
    assert score_selection((), truth).true_positives == 0
    padded = truth.pairs + (("G007", "1"), ("G008", "2"), ("G008", "3"))
    score = score_selection(padded, truth)
    assert score.true_positives == 12 and score.model_size == 15


def logrank_oracle(times, events, group):
    """Direct hypergeometric tally over distinct event times."""
    times = np.asarray(times, float)
    events = np.asarray(events, int)
    group = np.asarray(group, int)
    num, var = 0.0, 0.0
    for t in np.unique(times[events == 1]):
        at_risk = times >= t
        n1 = int((at_risk & (group == 1)).sum())
        n = int(at_risk.sum())
        d = int(((times == t) & (events == 1)).sum())
        d1 = int(((times == t) & (events == 1) & (group == 1)).sum())
        num += d1 - hypergeom.mean(n, n1, d)
        if n > 1:
            var += hypergeom.var(n, n1, d)
    return (num**2 / var if var > 0 else 0.0)


def test_logrank_identical_groups_zero():
    t = np.array([1.0, 2.0, 3.0, 4.0])
    d = np.array([1, 0, 1, 1])
    times = np.concatenate([t, t])
    events = np.concatenate([d, d])
    group = np.array([0] * 4 + [1] * 4)
    stat, p = logrank_two_group(times, events, group)
    assert stat == pytest.approx(0.0, abs=1e-12)
    assert p == pytest.approx(1.0)


def test_logrank_separated_groups_match_oracle():
    times = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    events = np.ones(6, dtype=int)
    group = np.array([1, 1, 1, 0, 0, 0])
    stat, p = logrank_two_group(times, events, group)
    assert stat == pytest.approx(logrank_oracle(times, events, group), rel=1e-12)
    assert 0 < p < 0.05


def test_logrank_random_fixtures_match_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(8, 40))
        times = np.round(rng.exponential(size=n), 1)  # induce ties
        events = rng.integers(0, 2, n)
        group = rng.integers(0, 2, n)
        if group.min() == group.max():
            continue
        stat, _ = logrank_two_group(times, events, group)
        assert stat == pytest.approx(logrank_oracle(times, events, group), rel=1e-10, abs=1e-12)


def test_logrank_chi2_quantile():
    # the 5% critical value of chi-square(1)
    stat = 3.841458820694124
    _, p = logrank_two_group(
        np.array([1.0, 2.0]), np.array([1, 1]), np.array([0, 1]))
    assert chi2.sf(stat, 1) == pytest.approx(0.05, abs=1e-4)


def test_logrank_invariances():
    rng = np.random.default_rng(4)
    times = rng.exponential(size=30)
    events = rng.integers(0, 2, 30)
    group = rng.integers(0, 2, 30)
    s1, _ = logrank_two_group(times, events, group)
    s2, _ = logrank_two_group(times, events, 1 - group)          # relabeling
    s3, _ = logrank_two_group(np.exp(times), events, group)      # monotone transform
    assert s1 == pytest.approx(s2, rel=1e-12)
    assert s1 == pytest.approx(s3, rel=1e-12)


def test_logrank_no_events():
    stat, p = logrank_two_group(np.array([1.0, 2.0]), np.array([0, 0]), np.array([0, 1]))
    assert (stat, p) == (0.0, 1.0)


def test_logrank_requires_two_groups():
    with pytest.raises(ValueError):
        logrank_two_group(np.array([1.0, 2.0]), np.array([1, 1]), np.array([1, 1]))


def test_stratified_subsample_sizes_and_disjoint():
    ms, _ = generate_study(easy_design(), 0)
    rng = replicate_rng(0, 99)
    train, test = stratified_subsample(ms, 0.75, rng)
    for c_tr, c_te, c in zip(train.cohorts, test.cohorts, ms.cohorts):
        assert c_tr.n == int(np.floor(0.75 * c.n))
        assert c_tr.n + c_te.n == c.n
        assert not set(c_tr.subject_ids) & set(c_te.subject_ids)


def test_single_subtype_study_block_columns():
    ms, _ = generate_study(easy_design(), 0)
    study = single_subtype_study(ms, "2")
    assert study.structure.subtype_ids == ("2",)
    assert study.structure.n_genes == ms.structure.n_genes
    assert study.cohorts[0].n == ms.cohort("2").n


def test_run_table_summary_math():
    res = RunTableResult(design=easy_design(), replicates=2)
    res.scores["gamma05"] = [ReplicateScore(10, 14, 0, "gamma05"),
                             ReplicateScore(10, 14, 1, "gamma05")]
    frame = res.summary()
    assert frame.loc[0, "tp_sd"] == 0.0  # equal scores give zero SD
    assert frame.loc[0, "size_mean"] == 14.0


def test_run_table_deterministic_and_scores():
    design = easy_design(n_genes=6, n_per_subtype=50)
    r1 = run_table(design, replicates=2, gammas=(0.5,), settings=FAST, threads=1)
    r2 = run_table(design, replicates=2, gammas=(0.5,), settings=FAST, threads=2)
    for method in r1.scores:
        a = [(s.true_positives, s.model_size) for s in r1.scores[method]]
        b = [(s.true_positives, s.model_size) for s in r2.scores[method]]
        assert a == b  # thread count cannot change results
    assert r1.mean("gamma05", "tp") >= 10  # strong signal: nearly all pairs found


def test_gamma_method_tags():
    assert gamma_method(0.5) == "gamma05"
    assert gamma_method(0.9) == "gamma09"


def test_occurrence_index_b1_binary_and_deterministic():
    design = easy_design(n_genes=6, n_per_subtype=50)
    ms, truth = generate_study(design, 0)
    rep1 = occurrence_index(ms, FAST, B=1, fraction=0.75, rng=replicate_rng(5, 0))
    assert set(np.unique(rep1.frame["occurrence_index"])) <= {0.0, 1.0}
    rep2 = occurrence_index(ms, FAST, B=1, fraction=0.75, rng=replicate_rng(5, 0))
    assert rep1.frame.equals(rep2.frame)


def test_occurrence_index_strong_signal_high():
    design = easy_design(n_genes=6, n_per_subtype=80, flat_coef=0.9)
    ms, truth = generate_study(design, 0)
    report = occurrence_index(ms, FAST, B=4, fraction=0.75, rng=replicate_rng(6, 0))
    for gene, sub in truth.pairs:
        assert report.index_of(gene, sub) >= 0.75
    assert report.completed == 4


def test_occurrence_index_validation():
    ms, _ = generate_study(easy_design(), 0)
    with pytest.raises(ValueError):
        occurrence_index(ms, FAST, B=0, fraction=0.75, rng=replicate_rng(1, 0))
    with pytest.raises(ValueError):
        occurrence_index(ms, FAST, B=1, fraction=1.5, rng=replicate_rng(1, 0))


def test_predict_evaluate_strong_signal():
    design = easy_design(n_genes=6, n_per_subtype=80, flat_coef=0.9)
    ms, _ = generate_study(design, 0)
    report = predict_evaluate(ms, FAST, B=3, rng=replicate_rng(7, 0))
    assert len(report.rounds) == 3
    assert report.mean_statistic > 3.84
    assert report.p_value < 0.05
    assert set(report.per_subtype_mean) == {"1", "2", "3"}


def test_predict_evaluate_all_rounds_skipped(monkeypatch):
    # an empty fit gives constant predictors: every round must be skipped
    design = easy_design(n_genes=6, n_per_subtype=50)
    ms, _ = generate_study(design, 0)

    import survbridge.evaluate as ev

    class EmptyFit:
        selected = ()
        config = None

        def __init__(self, dim):
            self.beta = type("B", (), {"values": np.zeros(dim)})()

    class EmptyReport:
        def __init__(self, fit):
            self._fit = fit

        def best_fit(self):
            return self._fit

    def fake_fit_study(train, settings):
        from survbridge.design import build_stacked

        design_ = build_stacked(train)
        return design_, EmptyReport(EmptyFit(design_.dim))

    monkeypatch.setattr(ev, "fit_study", fake_fit_study)
    report = predict_evaluate(ms, FAST, B=2, rng=replicate_rng(8, 0))
    assert report.rounds == []
    assert report.skipped == 2
    assert report.mean_statistic == 0.0 and report.p_value == 1.0


def test_glasso_selected_pairs_tags_subtypes():
    design = easy_design(n_genes=6, n_per_subtype=60, flat_coef=0.8)
    ms, truth = generate_study(design, 0)
    pairs, certified = glasso_selected_pairs(ms, FAST)
    assert certified
    subtypes = {s for _, s in pairs}
    assert subtypes <= {"1", "2", "3"}
    assert len(set(pairs) & truth.pair_set) >= 9
