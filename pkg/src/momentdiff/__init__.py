"""Guided diffusion sampling on per-block moment manifolds."""

from .schedule import (
    Schedule,
    build_linear_schedule,
    build_respaced_schedule,
    default_schedule,
)
from .manifold import (
    BlockPartition,
    BlockStats,
    MomentManifold,
    DegenerateBlockError,
    OffManifoldError,
    block_stats,
    manifold_at,
    manifold_distance,
    badain_project,
    normal_basis,
    tangent_project,
    normal_project,
    adjacent_map_v,
    low_pass_filter,
    is_on_manifold,
)
from .scores import (
    GaussianDomain,
    GaussianScore,
    KdeScore,
    BridgeScore,
    BridgeError,
    BridgeConnectionError,
    BridgeProtocolError,
    BridgeShapeError,
    schedule_hash,
)
from .energy import (
    FeatureExtractor,
    extractor_from_seed,
    load_extractor,
    save_extractor,
    extract,
    BadainFeatureEnergy,
)
from .moo import MinNormSolution, normalize_guidances, min_norm_2, min_norm_fw, min_norm
from .sampler import (
    SamplerConfig,
    StepTrace,
    SamplerBridgeError,
    epsilon_policy_iters,
    optimize_on_manifold,
    transfer_step,
    generate,
    ilvr_generate,
    pni,
)
from .metrics import (
    VerificationReport,
    concentration_suite,
    separability_suite,
    lowpass_expectation_suite,
    decomposition_suite,
    ssim,
    trace_norm_profile,
)

__version__ = "0.1.0"
