"""livepipe: deterministic streaming-diffusion inference engines.

A desk-scale model of pipelined autoregressive diffusion inference: a
sequential reference engine, a timestep-pinned concurrent pipeline that
reproduces it bit-for-bit, a clean-cache baseline, and a virtual-clock
simulator for throughput/latency arithmetic.
"""

from .denoiser import (
    BlockCond,
    DenoiseOutput,
    DenoiserWeights,
    KvEntry,
    OracleDenoiser,
    TimestepForcingError,
    ToyDenoiser,
    attention_bruteforce,
    build_weights,
)
from .engine import (
    EngineConfig,
    EngineConfigError,
    PipelineInvariantError,
    RolloutResult,
    StageMessage,
    count_nfe,
    noise_block,
    run,
    run_clean_kv,
    run_sequential,
    run_simulation,
    run_tpp,
)
from .harness import (
    ConfigError,
    ScenarioOutcome,
    export_timeline,
    frames_digest,
    latents_digest,
    load_scenario,
    parse_timeline,
    read_latents,
    run_scenario,
    scenario_path,
    verify_equivalence,
    write_latents,
)
from .kvcache import (
    RollingKvCache,
    SinkLockedError,
    SinkSlot,
    aas_update,
    cache_push,
    corrupt_history,
    rolling_rope_index,
)
from .latent import (
    Conditions,
    LatentBlock,
    TimestepSchedule,
    ToyVideoCodec,
    flow_step,
    interpolate,
    synthetic_conditions,
    true_velocity,
)
from .metrics import (
    MetricsBundle,
    TimelineEvent,
    compute_fps,
    compute_ttff,
    drift_metric,
    metrics_from_timeline,
    stage_utilization,
)
from .numerics import Prng, gaussian, matmul, rope_rotate, softmax
from .simulate import SimResult, simulate

__version__ = "0.1.0"
