"""Temporally consistent factuality probing harness.

Generates forward/backward temporal probes from a subject-relation corpus,
evaluates completions with seven consistency/factuality metrics, and scores
generations with discrete or smooth rewards for external RL trainers.
"""

from .analysis import DivergenceReport, compare_reports, kl_divergence, paraphrase_divergence_study
from .backends import (
    Backend,
    GenConfig,
    HTTPBackend,
    ModelResponse,
    OracleBackend,
    OracleConfig,
    normalize_output,
)
from .corpus import (
    CandidateSet,
    Corpus,
    CorpusStats,
    Direction,
    EntityRecord,
    Pattern,
    SubjectRelationEntry,
    candidate_set,
    load_resource,
    save_resource,
    stats,
    validate,
    vertical_split,
)
from .metrics import (
    MetricReport,
    ProbeResult,
    evaluate,
    group_consistency,
    soft_accuracy,
    temporally_consistent_factuality,
)
from .probegen import (
    InstructionSample,
    ProbeInstance,
    PromptText,
    enumerate_probes,
    gen_it_samples,
    render_prompt,
    sample_paraphrase_pairs,
)
from .reward import (
    RewardRequest,
    RewardScore,
    discrete_reward,
    locate_time_step,
    score_batch,
    serve,
    smooth_reward,
)

__version__ = "0.1.0"
