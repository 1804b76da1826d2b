"""Autoregressive panel models for random sums of positive variables.

Simulation, exponential quasi-likelihood estimation with sandwich standard
errors, Monte Carlo replication studies, QAIC model comparison, and tree
ring ingestion utilities, with a command line under the same name.
"""

from .dataio import (
    AGE_BREAKS,
    DesignSpec,
    RawTreeSeries,
    aggregate_panel,
    build_design,
    read_covariates_csv,
    read_panel_csv,
    read_rings_csv,
    ring_width_to_bai,
    split_age_classes,
    write_panel_csv,
)
from .estimate import (
    FitOptions,
    FitResult,
    default_init,
    fit,
    loss,
    loss_gradient,
    qaic,
    sandwich,
)
from .link import (
    LinkSpec,
    relative_growth_limit,
    softplus,
    softplus_deriv,
    softplus_inverse,
)
from .mcstudy import McStudyResult, run_mc_study
from .model import (
    MeanPath,
    PanelSeries,
    ParameterVector,
    check_stability,
    compute_mean_path,
)
from .simulate import (
    SimulationConfig,
    UnitDistribution,
    conditional_moments,
    resolve,
    scenario1_study_config,
    simulate_panel,
    simulate_panel_detailed,
)

__version__ = "0.1.0"

__all__ = [
    "AGE_BREAKS",
    "DesignSpec",
    "FitOptions",
    "FitResult",
    "LinkSpec",
    "McStudyResult",
    "MeanPath",
    "PanelSeries",
    "ParameterVector",
    "RawTreeSeries",
    "SimulationConfig",
    "UnitDistribution",
    "aggregate_panel",
    "build_design",
    "check_stability",
    "compute_mean_path",
    "conditional_moments",
    "default_init",
    "fit",
    "loss",
    "loss_gradient",
    "qaic",
    "read_covariates_csv",
    "read_panel_csv",
    "read_rings_csv",
    "relative_growth_limit",
    "resolve",
    "ring_width_to_bai",
    "run_mc_study",
    "sandwich",
    "scenario1_study_config",
    "simulate_panel",
    "simulate_panel_detailed",
    "softplus",
    "softplus_deriv",
    "softplus_inverse",
    "split_age_classes",
    "write_panel_csv",
    "__version__",
]
