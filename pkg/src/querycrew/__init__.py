"""querycrew: a multi-agent text-to-SQL engine for SQLite.

A question travels through retrieval (keyword extraction, LSH-backed value
matching, semantic description lookup), optional schema pruning with
linking-column retention, candidate SQL generation with execution-guided
revision, and unit-test based selection. A benchmark harness measures
execution accuracy, Pass@k, and schema-selection precision/recall.
"""

from .agents import CandidateQuery, Cluster, Keyword, RetrievedContext, UnitTest, Verdict
from .catalog import (
    CatalogError,
    ColumnInfo,
    FkEdge,
    ProjectionError,
    SchemaCatalog,
    SubSchema,
    TableInfo,
    full_projection,
    ingest_catalog_descriptions,
    introspect_database,
    project,
    render_schema_prompt,
)
from .context_store import (
    ContextStore,
    DescriptionHit,
    HashingEmbedder,
    RemoteEmbedder,
    build_context_store,
    retrieve_context,
)
from .executor import (
    ExecutionResult,
    FaultReport,
    ResultFingerprint,
    canonicalize,
    classify_fault,
    execute,
    fingerprint,
    results_match,
)
from .gateway import (
    Completion,
    Gateway,
    GatewayError,
    HttpChatBackend,
    MockBackend,
    ParseError,
    SamplingParams,
    complete,
    parse_structured,
)
from .harness import (
    BenchmarkItem,
    Report,
    SchemaPR,
    execution_accuracy,
    extract_gold_schema_items,
    load_dataset,
    pass_at_k,
    run_benchmark,
    schema_selection_pr,
    subsample_dev,
    synthesize_large_schema,
)
from .pipeline import (
    DbArtifacts,
    PipelineConfig,
    PipelineError,
    RunTrace,
    cluster_by_result,
    ensure_artifacts,
    revise_loop,
    run,
    score_and_select,
)
from .templates import PromptTemplate, RenderError, render_template
from .value_index import (
    EntityMatch,
    IndexConfig,
    ValueIndex,
    build_value_index,
    edit_distance,
    lsh_query,
    minhash_signature,
    retrieve_entities,
)

__version__ = "0.1.0"
