//! Agent-based claim verification with an offline-reproducible experiment
//! harness.
//!
//! The pipeline verifies a claim by letting a chat model phrase search
//! queries, observe filtered web results, and commit to a final verdict on
//! an ordinal truthfulness scale, with bounded iterations and a single
//! forced finalization. Around that loop sit dataset standardization,
//! condition matrices, and evaluation metrics (grouped/exact accuracy,
//! binary-group F1, rolling series, bootstrap standard errors), all
//! deterministic against fixture backends.
//!
//! See the `book/` guide for a narrative walkthrough of each subsystem.

pub mod agent;
pub mod cli;
pub mod corpus;
pub mod gateway;
pub mod metrics;
pub mod retrieval;
pub mod taxonomy;
pub mod util;

pub use agent::{
    build_prompt, condition_label, run_condition, verify_claim, AgentConfig, AgentResult,
    AgentStep, PredictionRow, PredictionWriter, SessionEnv, SessionTrace, VerdictVocabulary,
};
pub use corpus::{
    balanced_sample, filter_languages, load_claimreview, load_politifact,
    standardize_multilingual, translate_claims, FactCheckRecord, LanguageSubset,
};
pub use gateway::{
    BackendFactory, ChatBackend, ChatMessage, CompletionRequest, Gateway, ScriptedBackend,
    TraceLog,
};
pub use metrics::{
    bootstrap_se, build_report, exact_accuracy, f1_scores, grouped_accuracy, rolling_accuracy,
    EvaluationReport, LabeledPrediction, MetricKind, ReportOptions,
};
pub use retrieval::{
    extract_domain, filter_blocked, render_observation, DomainBlocklist, FixtureSearchProvider,
    SearchProvider, SearchResult, Searcher,
};
pub use taxonomy::{
    binarize, coarse_binarize, map_publisher_verdict, parse_final_answer, AgentVerdict,
    BinaryGroup, Claim, CoarseVerdict, FinalAnswer, MappingTable, SixLevelVerdict,
};
