"""Exemplar-driven program repair: collect verified chain-of-thought fixes,
then repair target bugs with few-shot prompting and test-failure feedback."""

from .domain import (
    CandidatePatch,
    CoTSample,
    KnowledgePool,
    Message,
    SourceFunction,
    lexical_match,
    normalize_code,
    pool_insert,
    pool_load,
    pool_save,
)
from .gateway import (
    ChatSession,
    GenerationParams,
    HashingEmbedder,
    HttpChatBackend,
    HttpEmbeddingProvider,
    ScriptedChatBackend,
    chat_complete,
    embed,
)
from .orchestrator import (
    BudgetPolicy,
    FixResult,
    FixStatus,
    collect,
    fix,
    fix_many,
    fix_with_manual_exemplars,
)
from .prompts import (
    ParsedResponse,
    build_collection_prompt,
    build_feedback_turn,
    build_fixing_prompt,
    parse_response,
)
from .selection import (
    Bm25Index,
    bm25_score,
    build_bm25_index,
    kmeans,
    select_cluster_cosine,
    select_ir,
    select_random,
    tokenize_code,
)
from .verify import (
    AdapterRegistry,
    OutcomeKind,
    ProjectAdapter,
    VerificationOutcome,
    WorkspaceVerifier,
    apply_patch,
    format_failure_message,
    run_and_classify,
)

__version__ = "0.1.0"
