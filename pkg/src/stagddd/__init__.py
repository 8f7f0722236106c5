"""Triple-differences estimation for staggered adoption panels."""

from .aggregate import AggregationError, EventStudyResult, cohort_share, event_study, overall_average
from .cells import AttCell, Estimand
from .estimators import (
    EstimationError,
    att_3wfe_two_period_baselines,
    att_diff_of_drdids_baseline,
    att_dr,
    att_ipw,
    att_no_covariates,
    att_pooled_nyt_baseline,
    att_ra,
    estimate_cell,
)
from .inference import InferenceError, InferenceResult, analytic_se, multiplier_bootstrap
from .influence import CombinationError, gmm_combine, weighted_combine
from .panel import (
    NEVER,
    ColumnSchema,
    CohortIndex,
    PanelDataError,
    PanelDataset,
    cohort_index,
    from_frame,
    load_csv,
    save_csv,
    trim_to_effective_sample,
)
from .pipeline import att_gt

__all__ = [
    "NEVER",
    "AggregationError",
    "AttCell",
    "CohortIndex",
    "ColumnSchema",
    "CombinationError",
    "Estimand",
    "EstimationError",
    "EventStudyResult",
    "InferenceError",
    "InferenceResult",
    "PanelDataError",
    "PanelDataset",
    "analytic_se",
    "att_3wfe_two_period_baselines",
    "att_diff_of_drdids_baseline",
    "att_dr",
    "att_gt",
    "att_ipw",
    "att_no_covariates",
    "att_pooled_nyt_baseline",
    "att_ra",
    "cohort_index",
    "cohort_share",
    "estimate_cell",
    "event_study",
    "from_frame",
    "gmm_combine",
    "load_csv",
    "multiplier_bootstrap",
    "overall_average",
    "save_csv",
    "trim_to_effective_sample",
    "weighted_combine",
]
