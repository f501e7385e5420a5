//! The retrieve-reason-answer verification loop: prompt, iterative search,
//! observation feedback, and a single forced finalization when the iteration
//! budget runs out.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    BackendFactory, ChatMessage, CompletionRequest, Gateway, TraceLog,
    DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_TEMPERATURE,
};
use crate::retrieval::{
    filter_blocked, render_observation_with, DomainBlocklist, SearchResult, Searcher, YearMonth,
    DEFAULT_PAGE_SIZE, DEFAULT_SNIPPET_BUDGET,
};
use crate::taxonomy::{parse_final_answer, Claim, FinalAnswer};
use crate::util::{format_prompt_date, now_rfc3339, RateLimiter};

pub const DEFAULT_MAX_ITERATIONS: usize = 3;

/// Prompt sent once when the iteration budget is exhausted without a final
/// answer.
pub const FINALIZATION_PROMPT: &str =
    "Based on all of your previous Google searches, provide a final answer now in the required format.";

/// Which verdict labels the prompt offers the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictVocabulary {
    SixLevel,
    Coarse,
}

impl VerdictVocabulary {
    fn prompt_fragment(self) -> &'static str {
        match self {
            // The six-level list keeps the source formatting quirks
            // (no space after the first comma).
            VerdictVocabulary::SixLevel => {
                "('pants-fire','false', 'mostly-false', 'half-true', 'mostly-true', or 'true')"
            }
            VerdictVocabulary::Coarse => {
                "('false', 'mostly-false', 'mostly-true', or 'true')"
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    /// Maximum number of search iterations before forced finalization.
    pub max_iterations: usize,
    pub results_per_iteration: usize,
    /// When false the session performs zero searches.
    pub context_enabled: bool,
    pub blocklist: DomainBlocklist,
    pub model_id: String,
    pub vocabulary: VerdictVocabulary,
    pub snippet_budget: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Optional guard dropping results published after this month.
    pub max_result_date: Option<YearMonth>,
}

impl AgentConfig {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            results_per_iteration: DEFAULT_PAGE_SIZE,
            context_enabled: true,
            blocklist: DomainBlocklist::default(),
            model_id: model_id.into(),
            vocabulary: VerdictVocabulary::SixLevel,
            snippet_budget: DEFAULT_SNIPPET_BUDGET,
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            max_result_date: None,
        }
    }

    pub fn without_context(mut self) -> Self {
        self.context_enabled = false;
        self
    }

    pub fn with_blocklist(mut self, blocklist: DomainBlocklist) -> Self {
        self.blocklist = blocklist;
        self
    }
}

/// One executed search iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
    pub query: String,
    pub observation: String,
    /// Post-filter results backing the observation.
    pub raw_results: Vec<SearchResult>,
}

/// Session outcome. `final_answer == None` is the unparseable disposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResult {
    pub claim_id: String,
    pub condition: String,
    pub steps: Vec<AgentStep>,
    #[serde(rename = "final")]
    pub final_answer: Option<FinalAnswer>,
    pub forced_finalization: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_error: Option<String>,
}

impl AgentResult {
    pub fn is_unparseable(&self) -> bool {
        self.final_answer.is_none()
    }

    pub fn queries(&self) -> Vec<String> {
        self.steps.iter().map(|s| s.query.clone()).collect()
    }
}

/// Full session record: the result plus the exact message transcript.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionTrace {
    pub result: AgentResult,
    pub model_id: String,
    pub transcript: Vec<ChatMessage>,
    pub started_at: String,
    pub finished_at: String,
}

/// Build the verification prompt. The context-enabled prompt carries the
/// research and citation instructions; the no-context prompt drops them and
/// asks only for a verdict and reasoning. Originator and date clauses are
/// omitted when the claim lacks them.
pub fn build_prompt(claim: &Claim, context_enabled: bool, vocabulary: VerdictVocabulary) -> String {
    let mut statement_clause = format!("'{}'", claim.text);
    if let Some(originator) = &claim.originator {
        statement_clause.push_str(&format!(" made by {originator}"));
    }
    if let Some(date) = claim.stated_on {
        statement_clause.push_str(&format!(" on {}", format_prompt_date(date)));
    }
    let vocab = vocabulary.prompt_fragment();
    if context_enabled {
        format!(
            "You're a fact-checking expert. Evaluate the truthfulness of this statement: \
             {statement_clause}. Use Google for research. Consider your sources, context, and \
             date while assessing. To answer return 'Final Answer: {{verdict}}, {{reason}}'. \
             You must respond with a valid verdict {vocab} or 'uncertain', providing reasoning \
             and citing sources by providing the domain of pertinent search results."
        )
    } else {
        format!(
            "You're a fact-checking expert. Evaluate the truthfulness of this statement: \
             {statement_clause}. To answer return 'Final Answer: {{verdict}}, {{reason}}'. \
             You must respond with a valid verdict {vocab} or 'uncertain', providing reasoning."
        )
    }
}

/// Parse the one-tool action grammar: the first line starting with a
/// case-insensitive `Google:` carries the query; anything before it is the
/// thought. Empty queries are not actions.
pub fn parse_search_action(output: &str) -> Option<(Option<String>, String)> {
    const ACTION: &[u8] = b"google:";
    let mut consumed = 0usize;
    for line in output.split_inclusive('\n') {
        let trimmed = line.trim();
        let bytes = trimmed.as_bytes();
        if bytes.len() >= ACTION.len() && bytes[..ACTION.len()].eq_ignore_ascii_case(ACTION) {
            let query = trimmed[ACTION.len()..].trim().to_string();
            if query.is_empty() {
                return None;
            }
            let thought = output[..consumed].trim();
            let thought = (!thought.is_empty()).then(|| thought.to_string());
            return Some((thought, query));
        }
        consumed += line.len();
    }
    None
}

/// Run one verification session to completion. Errors never escape: provider
/// and search failures are recorded on the result as `session_error` with an
/// unparseable disposition.
pub fn verify_claim(
    claim: &Claim,
    condition: &str,
    cfg: &AgentConfig,
    gateway: &mut Gateway,
    searcher: &Searcher,
) -> SessionTrace {
    let started_at = now_rfc3339();
    let prompt = build_prompt(claim, cfg.context_enabled, cfg.vocabulary);
    let mut transcript = vec![ChatMessage::user(prompt)];
    let mut steps: Vec<AgentStep> = Vec::new();
    let mut observed_domains: BTreeSet<String> = BTreeSet::new();
    let mut final_answer = None;
    let mut forced_finalization = false;
    let mut session_error = None;
    let mut finalization_sent = false;

    loop {
        let request = CompletionRequest {
            messages: transcript.clone(),
            model_id: cfg.model_id.clone(),
            temperature: cfg.temperature,
            max_output_tokens: cfg.max_output_tokens,
        };
        let output = match gateway.complete(&request) {
            Ok(o) => o,
            Err(e) => {
                session_error = Some(e.class().to_string());
                break;
            }
        };
        transcript.push(ChatMessage::assistant(output.clone()));

        if let Ok(answer) = parse_final_answer(&output, &observed_domains) {
            final_answer = Some(answer);
            break;
        }
        if finalization_sent {
            break; // one finalization exchange only
        }
        if let Some((thought, query)) = parse_search_action(&output) {
            if cfg.context_enabled && steps.len() < cfg.max_iterations {
                match searcher.search(&query, cfg.results_per_iteration) {
                    Ok(results) => {
                        let mut kept = filter_blocked(results, &cfg.blocklist);
                        if let Some(guard) = cfg.max_result_date {
                            kept.retain(|r| r.published.is_none_or(|p| p <= guard));
                        }
                        let observation = render_observation_with(&kept, cfg.snippet_budget);
                        observed_domains.extend(kept.iter().map(|r| r.domain.clone()));
                        transcript.push(ChatMessage::tool(observation.clone()));
                        steps.push(AgentStep { thought, query, observation, raw_results: kept });
                        continue;
                    }
                    Err(e) => {
                        session_error = Some(match e {
                            crate::retrieval::RetrievalError::RateLimited => "RateLimited".into(),
                            _ => "SearchUnavailable".to_string(),
                        });
                        break;
                    }
                }
            }
        }
        // Not a final answer and no executable action left: demand a final
        // answer once. The forced flag records budget exhaustion.
        forced_finalization = steps.len() == cfg.max_iterations;
        transcript.push(ChatMessage::user(FINALIZATION_PROMPT));
        finalization_sent = true;
    }

    SessionTrace {
        result: AgentResult {
            claim_id: claim.id.clone(),
            condition: condition.to_string(),
            steps,
            final_answer,
            forced_finalization,
            session_error,
        },
        model_id: cfg.model_id.clone(),
        transcript,
        started_at,
        finished_at: now_rfc3339(),
    }
}

/// One line of the predictions JSON-lines output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRow {
    pub claim_id: String,
    pub condition: String,
    /// Canonical verdict token, or null when the session was unparseable.
    pub verdict: Option<String>,
    pub reason: Option<String>,
    pub cited_domains: Vec<String>,
    pub n_steps: usize,
    pub forced_finalization: bool,
    pub queries: Vec<String>,
    pub session_error: Option<String>,
    pub started_at: String,
    pub finished_at: String,
    pub trace_ref: Option<String>,
}

impl PredictionRow {
    pub fn from_trace(trace: &SessionTrace, trace_ref: Option<String>) -> Self {
        let r = &trace.result;
        Self {
            claim_id: r.claim_id.clone(),
            condition: r.condition.clone(),
            verdict: r.final_answer.as_ref().map(|f| f.verdict.token().to_string()),
            reason: r.final_answer.as_ref().map(|f| f.reason.clone()),
            cited_domains: r
                .final_answer
                .as_ref()
                .map(|f| f.cited_domains.clone())
                .unwrap_or_default(),
            n_steps: r.steps.len(),
            forced_finalization: r.forced_finalization,
            queries: r.queries(),
            session_error: r.session_error.clone(),
            started_at: trace.started_at.clone(),
            finished_at: trace.finished_at.clone(),
            trace_ref,
        }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("cannot write results: {0}")]
    Io(#[from] std::io::Error),
    #[error("claims list is empty")]
    NoClaims,
}

/// Append-only predictions file. Reopening an existing file records the
/// claim ids already present so those claims can be skipped on resume.
pub struct PredictionWriter {
    path: PathBuf,
    file: Mutex<std::fs::File>,
    existing: BTreeSet<String>,
}

impl PredictionWriter {
    pub fn open_append(path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut existing = BTreeSet::new();
        if path.exists() {
            for row in Self::read_rows(&path)? {
                existing.insert(row.claim_id);
            }
        }
        let file = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file: Mutex::new(file), existing })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn existing_ids(&self) -> &BTreeSet<String> {
        &self.existing
    }

    /// Record-atomic append: one full line per write, flushed.
    pub fn append(&self, row: &PredictionRow) -> std::io::Result<()> {
        let mut line = serde_json::to_string(row).expect("row serializes");
        line.push('\n');
        let mut file = self.file.lock().expect("prediction writer poisoned");
        file.write_all(line.as_bytes())?;
        file.flush()
    }

    pub fn read_rows(path: impl AsRef<Path>) -> std::io::Result<Vec<PredictionRow>> {
        let content = std::fs::read_to_string(path)?;
        let mut rows = Vec::new();
        for line in content.lines() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(row) => rows.push(row),
                Err(_) => continue, // torn last line after a crash
            }
        }
        Ok(rows)
    }
}

/// Everything a batch of sessions shares.
pub struct SessionEnv {
    pub backends: Arc<dyn BackendFactory>,
    pub searcher: Arc<Searcher>,
    pub llm_trace: Option<Arc<TraceLog>>,
    pub traces_dir: Option<PathBuf>,
    pub rate_limiter: Option<Arc<RateLimiter>>,
}

impl SessionEnv {
    fn session(&self, claim_id: &str, condition: &str) -> Result<Gateway, crate::gateway::GatewayError> {
        let backend = self.backends.session_backend(claim_id)?;
        let mut gateway = Gateway::new(format!("{claim_id}__{condition}"), backend);
        if let Some(trace) = &self.llm_trace {
            gateway = gateway.with_trace(trace.clone());
        }
        if let Some(limiter) = &self.rate_limiter {
            gateway = gateway.with_rate_limiter(limiter.clone());
        }
        Ok(gateway)
    }
}

/// Run one session and persist its trace file, if a traces directory is set.
pub fn run_session(
    claim: &Claim,
    condition: &str,
    cfg: &AgentConfig,
    env: &SessionEnv,
) -> (SessionTrace, Option<String>) {
    let trace = match env.session(&claim.id, condition) {
        Ok(mut gateway) => verify_claim(claim, condition, cfg, &mut gateway, &env.searcher),
        Err(e) => SessionTrace {
            result: AgentResult {
                claim_id: claim.id.clone(),
                condition: condition.to_string(),
                steps: Vec::new(),
                final_answer: None,
                forced_finalization: false,
                session_error: Some(e.class().to_string()),
            },
            model_id: cfg.model_id.clone(),
            transcript: Vec::new(),
            started_at: now_rfc3339(),
            finished_at: now_rfc3339(),
        },
    };
    let trace_ref = env.traces_dir.as_ref().map(|dir| {
        let name = format!(
            "{}.json",
            crate::gateway::sanitize_for_filename(&format!("{}__{}", claim.id, condition))
        );
        let path = dir.join(&name);
        let _ = std::fs::create_dir_all(dir);
        if let Ok(body) = serde_json::to_string_pretty(&trace) {
            let _ = std::fs::write(&path, body);
        }
        name
    });
    (trace, trace_ref)
}

/// Process a claim list under one condition. Already-recorded claim ids are
/// skipped (crash resume). Sessions run in parallel; rows are appended to
/// `writer` incrementally in input order, so output files are reproducible
/// and a partial file is always an input-order prefix. Returned results are
/// in input order.
pub fn run_condition(
    claims: &[Claim],
    cfg: &AgentConfig,
    condition: &str,
    parallelism: usize,
    env: &SessionEnv,
    writer: &PredictionWriter,
) -> Result<Vec<AgentResult>, AgentError> {
    if claims.is_empty() {
        return Err(AgentError::NoClaims);
    }
    let parallelism = parallelism.max(1);
    let pending: Vec<&Claim> = claims
        .iter()
        .filter(|c| !writer.existing_ids().contains(&c.id))
        .collect();

    let next = std::sync::atomic::AtomicUsize::new(0);
    let (tx, rx) = std::sync::mpsc::channel::<(usize, SessionTrace, Option<String>)>();
    let mut results: Vec<Option<AgentResult>> = vec![None; pending.len()];
    let mut io_error: Option<std::io::Error> = None;

    std::thread::scope(|scope| {
        let pending = &pending;
        let next = &next;
        for _ in 0..parallelism.min(pending.len().max(1)) {
            let tx = tx.clone();
            scope.spawn(move || loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some(claim) = pending.get(i) else { break };
                let (trace, trace_ref) = run_session(claim, condition, cfg, env);
                if tx.send((i, trace, trace_ref)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // drain completions, writing the contiguous prefix in input order
        let mut buffered: std::collections::BTreeMap<usize, (SessionTrace, Option<String>)> =
            std::collections::BTreeMap::new();
        let mut next_write = 0usize;
        while let Ok((i, trace, trace_ref)) = rx.recv() {
            buffered.insert(i, (trace, trace_ref));
            while let Some((trace, trace_ref)) = buffered.remove(&next_write) {
                let row = PredictionRow::from_trace(&trace, trace_ref);
                if let Err(e) = writer.append(&row) {
                    io_error = Some(e);
                    break;
                }
                results[next_write] = Some(trace.result);
                next_write += 1;
            }
            if io_error.is_some() {
                break;
            }
        }
    });

    if let Some(e) = io_error {
        return Err(AgentError::Io(e));
    }
    Ok(results.into_iter().flatten().collect())
}

/// Canonical condition label: `{model}:{context|nocontext}:{orig|en}`.
pub fn condition_label(model_id: &str, context_enabled: bool, english: bool) -> String {
    format!(
        "{}:{}:{}",
        model_id,
        if context_enabled { "context" } else { "nocontext" },
        if english { "en" } else { "orig" }
    )
}
