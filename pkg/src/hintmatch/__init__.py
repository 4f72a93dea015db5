"""Deterministic simulator for hinted multi-agent bandits on a collision channel."""

from .central import (
    CENTRAL_POLICIES,
    EdgeStats,
    PolicyDecision,
    ProfileStats,
    apply_observations,
    ghcla_step,
    gphcla_step,
    hcla_step,
)
from .decentral import (
    DecentralEngine,
    EliminationParams,
    bit_width,
    comm_phase_length,
    decode_diff,
    encode_diff,
    hdetc_stop_threshold,
    quantization_level,
    quantize,
    run_rank_assignment,
)
from .errors import (
    DegenerateInstanceError,
    GenerationFailureError,
    HintmatchError,
    InvalidArgumentError,
    ProtocolFailureError,
    TooLargeError,
)
from .harness import (
    ExperimentConfig,
    checkpoint_grid,
    diagnostics,
    regret_accumulate,
    run_experiment,
    run_replication,
)
from .instances import (
    AssignmentProfile,
    InstanceSummary,
    Matching,
    RewardMatrix,
    RoundOutcome,
    generate_instance,
    sample_round,
    summarize,
    utility,
)
from .klucb import exploration_rate, kl_bernoulli, klucb_index, klucb_indices, profile_index
from .matching import (
    CoveringSet,
    covering_index,
    covering_matchings,
    enumerate_matchings,
    enumerate_profiles,
    hungarian,
    hungarian_excluding,
    is_level_ordered,
    is_level_ordered_exhaustive,
    second_best_matching,
)

__version__ = "0.1.0"
