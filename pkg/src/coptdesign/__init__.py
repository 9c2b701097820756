"""c-optimal experimental designs for mixed models with correlated observations."""

__version__ = "0.1.0"

from .covariance import CovarianceSpec, ObservationMeta, build_sigma, cov_entry
from .design import (
    INFEASIBLE,
    DesignProblem,
    DesignSpace,
    DesignState,
    ExperimentalUnit,
    add_obs_update,
    c_objective,
    detect_duplicates,
    is_infeasible,
    remove_obs_downdate,
)
from .families import (
    FamilyLink,
    LinearIndicatorMean,
    PointSourceMean,
    attenuate_eta,
    derivative_row,
    glm_weight,
)
from .model import ModelSpec, ModelWorkspace
from .oracle import brute_force_best, exact_info_small, mc_variance, oracle_model
from .problems import (
    cluster_trial_space,
    load_config,
    parse_config,
    spatial_lattice_space,
    stepped_wedge_pattern,
)
from .rounding import WeightedDesign, best_rounded_design, round_weights
from .search import (
    ObjectiveReport,
    SearchConfig,
    greedy_search,
    local_search,
    multi_start,
    reverse_greedy_search,
    robust_objective,
)
