"""Mesh adaptive direct search for mixed-variable hyperparameter optimization,
with static early-stopping and ranking surrogates."""

from .blackbox import (
    EvaluationRequest,
    EvaluationResult,
    ProcessAdapter,
    SimulatedBlackbox,
    evaluate,
    external_evaluate,
    simulate_curve,
)
from .campaign import CampaignSettings, resume, run
from .early_stop import (
    BaselineEnvelope,
    StoppingMonitor,
    StopVerdict,
    TrainingHistory,
    check_default,
    check_envelope,
    check_last_success,
    combined_verdict,
    scheduler_step,
    update_baseline,
)
from .ledger import LedgerRecord, export_convergence, read_ledger, write_ledger
from .mads import (
    CampaignResult,
    IterationOutcome,
    Mesh,
    PollSet,
    RunPlan,
    generate_poll,
    opportunistic_evaluate,
    run_campaign,
    update_mesh,
)
from .space import (
    Configuration,
    ConvLayerHP,
    SpaceBounds,
    default_bounds,
    deserialize,
    dimension,
    make_config,
    neighbors,
    preset_config,
    project_to_mesh,
    serialize,
    validate,
)
from .surrogates import (
    SurrogateSpec,
    custom_surrogate,
    estimate,
    rank_candidates,
    surrogate_by_name,
    surrogate_cost,
)

__version__ = "0.1.0"
