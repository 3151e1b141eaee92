"""Split-and-smoothing inference for sparse high-dimensional linear models."""

__version__ = "0.1.0"

from .core import (CoverageReport, InferenceTable, OneSplitResult, Scenario, SplitPlan, SSHDIFit,
                   VarianceEstimate, coverage_experiment, infer, one_split, sshdi_fit, variance_estimate,
                   z_test)
from .datagen import CovarianceKind, Dataset, SimulationTruth, build_covariance, draw_truth, generate_dataset
from .numerics import RngStream, cholesky, mvn_sample, ols_fit
from .selection import SelectedSet, SelectorConfig, cv_select_lambda, lasso_fit, lasso_path, select, sis_screen
