"""Corpus conditioning and evaluation pipeline.

Partitions a quality-scored corpus into tiers, rewrites subsets into
four target styles through a chat-completion service, assembles the four
budget-matched training conditions, and analyzes checkpoint NPM curves.
"""

from .corpus import (
    Document,
    Origin,
    OriginKind,
    QualityScores,
    QualityTier,
    RecordIssue,
    RewriteStyle,
    load_documents,
    read_corpus,
    write_documents,
)
from .curves import (
    CONDITION_ORDER,
    CurveSummary,
    MissingCheckpointError,
    TrainingCurve,
    build_curves,
    emit_plot_data,
    gap,
    load_curves,
    peak,
    saturation_point,
    summary_table,
)
from .errors import ConfigError, ForgeError, ValidationError
from .llm_client import (
    ChatClient,
    ChatMessage,
    ChatRequest,
    RateLimit,
    RetryPolicy,
)
from .mixture import (
    ConditionDataset,
    ConditionSpec,
    TrainingConfig,
    build_condition,
    emit_training_config,
    materialize_condition,
    read_shards,
    shard_dataset,
)
from .npm import (
    TaskResult,
    TaskSpec,
    category_average,
    checkpoint_report,
    macro_average,
    npm,
)
from .partition import (
    LowBandRule,
    SubsetManifest,
    TierPolicy,
    classify_tier,
    select_subset,
)
from .rewrite import (
    DEFAULT_TEMPLATES,
    SamplingParams,
    StyleTemplate,
    build_prompt,
    rewrite_document,
    run_rewrite_job,
    synthetic_id,
)
from .tokens import (
    BudgetLedger,
    BytesDiv4,
    CountingScheme,
    VocabularyFile,
    WhitespaceWords,
    count_tokens,
    parse_scheme,
    tally_corpus,
)
from .version import ARTIFACT_VERSION

__version__ = ARTIFACT_VERSION
