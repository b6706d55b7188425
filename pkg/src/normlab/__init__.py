"""normlab: pattern-completing actors, linguistic environments, and probes
for conventions, sanctions, and norms."""

from .actor import (
    Actor,
    DecisionLogic,
    FramingFunction,
    LOGIC_A,
    LOGIC_B,
    LogicStep,
    StepKind,
    act_cycle,
    chain_length,
    deliberate,
    policy_distribution,
)
from .consolidation import (
    ConsolidationConfig,
    GapReport,
    PrecedenceReport,
    consolidate,
    implicit_explicit_gap,
    precedence_test,
)
from .core import (
    Assembly,
    GlobalWorkspace,
    MemoryRecord,
    Role,
    Sanction,
    SeedStream,
    SymbolSeq,
    Valence,
    make_record,
    normalize,
    parse_rendering,
    render_record,
)
from .env import (
    Event,
    JointDistribution,
    LMAE,
    SanctionClause,
    TransitionRule,
    collective_policy,
    insert_actor,
    pattern_matches,
    run,
    tick,
    write_log,
)
from .errors import (
    BackendError,
    BackendUnsupported,
    CandidateRejected,
    ConfigError,
    InsufficientData,
    NormlabError,
    ParseError,
    RemoteUnavailable,
    SchemaError,
)
from .memory import (
    JACCARD,
    MemoryBank,
    SimilarityMetric,
    dump_jsonl,
    load_jsonl,
    retrieve,
    retrieve_top_k,
    write,
)
from .pcn import (
    CompletionDistribution,
    PatternCompleter,
    RemotePCN,
    TablePCN,
    extract_features,
    population_average,
    sample,
    score,
)
from .probes import (
    EditSpec,
    NormReport,
    NormThresholds,
    SensitivityReport,
    classify_norm,
    convention_sensitivity_contextfree,
    convention_sensitivity_contextual,
    counterfactual_edit,
    epsilon_similar,
    kl_divergence,
    pipeline_distribution,
    sanction_sensitivity,
    sanction_test,
    substitute,
    total_variation,
)

__version__ = "0.1.0"
