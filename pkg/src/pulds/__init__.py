"""Estimation and control of linear systems with Gaussian random parameter matrices."""

from .tensor_stats import (
    MomentSet,
    bilinear_contract,
    cross_vec_contract,
    dual_contract,
    gram3_perm,
    pack_psd_check,
    quad_contract,
    sample_joint,
    trace_pair,
)
from .lds_model import (
    CostSpec,
    LdsModel,
    PriorSpec,
    Scenario,
    ScenarioError,
    build_scenario,
    load_scenario,
    measure,
    prior_to_moments,
    step_truth,
    theta_system,
)
from .estimation import (
    InfoStateIrreducible,
    InfoStateReducible,
    adequacy,
    predict_irreducible,
    predict_reducible,
    update_irreducible,
    update_reducible,
)
from .info_metrics import InfoPrediction, info_accumulate, info_multistep, info_one_step
from .controllers import (
    GainSchedule,
    NominalTrajectory,
    average_cost,
    control_at,
    nominal_trajectory,
    solve_cautious,
    solve_ce,
    solve_dual,
)
from .harness import EpisodeResult, Variant, VariantStats, run_benchmark, run_episode, run_set

__version__ = "0.1.0"
