"""Integrative penalized gene selection for multi-subtype censored survival data.

Fits accelerated-failure-time models by Kaplan-Meier-weighted least squares,
stacked across cancer subtypes, with a composite bridge / group-Lasso penalty
that selects genes first and (gene, subtype) associations second.
"""

__version__ = "0.1.0"

from .cohort import DataError, GeneStructure, MultiStudy, SubtypeCohort, filter_missing, load_csv, save_csv
from .design import KmWeights, StackedDesign, build_stacked, center_and_weight, km_weights, pca_within_gene
from .solver import CoefficientSet, FitResult, GroupWeights, block_update, fit_glasso_bic, solve_weighted_glasso
from .bridge import (
    BridgeConfig,
    composite_objective,
    fit_bridge,
    lambda_to_tau,
    surrogate_objective,
    tau_to_lambda,
    theta_to_group_weights,
    theta_update,
)
from .tuning import TuningReport, bic, df_approx, ls_block_norms, tune_fit
from .simulate import SimDesign, TruthSet, gen_genotypes, gen_survival, gen_truth, generate_study
from .evaluate import (
    ReplicateScore,
    StabilityReport,
    logrank_two_group,
    occurrence_index,
    predict_evaluate,
    run_table,
    score_selection,
)
