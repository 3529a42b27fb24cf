"""Functional model-X knockoffs for FDR-controlled selection in
scalar-on-function regression, function-on-function regression, and
functional Gaussian graphical models."""

from funknock.basis import (
    BasisSystem,
    CurvePanel,
    make_basis,
    project_curve,
    project_panel,
    evaluate,
)
from funknock.fpca import FpcaModel, fit_fpca, choose_truncation, transform_scores
from funknock.knockoff import (
    ThetaModel,
    KnockoffPanel,
    estimate_theta_c,
    solve_R,
    sample_knockoffs,
)
from funknock.grouplasso import (
    GroupDesign,
    GroupLassoFit,
    fit_group_lasso,
    lambda_max,
    hbic,
    tune_lambda,
)
from funknock.filter import (
    KnockoffStats,
    SelectionResult,
    knockoff_threshold,
    select,
    fggm_global_thresholds,
    fggm_edges,
    evaluate_metrics,
)
from funknock.smoothing import (
    RawCurve,
    local_linear_smooth,
    default_bandwidth,
    smooth_curves,
)
from funknock.simgen import (
    SimConfig,
    SimData,
    gen_covariance,
    gen_curves,
    gen_sflr,
    gen_fflr,
    gen_fggm,
    moralize,
    corrupt_partial,
)
from funknock.cli import ExperimentSpec, run_pipeline, run_experiment, aggregate

__version__ = "0.1.0"
