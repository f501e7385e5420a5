//! Command-line entry points: single-claim checks, corpus preparation,
//! experiment runs, and evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use fs2::FileExt;
use serde::{Deserialize, Serialize};

use crate::agent::{
    condition_label, run_condition, run_session, AgentConfig, PredictionRow, PredictionWriter,
    SessionEnv, VerdictVocabulary,
};
use crate::corpus::{
    self, balanced_sample, filter_languages, load_claimreview, load_politifact,
    standardize_multilingual, translate_claims, DefaultLanguageDetector, DictionaryTranslator,
    FactCheckRecord, Translator,
};
use crate::gateway::{
    sanitize_for_filename, BackendFactory, LiveBackendFactory, LiveChatBackend, ScriptDirFactory,
    TraceLog,
};
use crate::metrics::{
    build_report, join_predictions, render_class_table, render_language_table, rolling_series_csv,
    EvaluationReport, ReportOptions,
};
use crate::retrieval::{
    DomainBlocklist, EmptySearchProvider, FixtureSearchProvider, LiveSearchProvider,
    SearchProvider, Searcher, YearMonth,
};
use crate::taxonomy::{Claim, MappingTable};
use crate::util::{now_rfc3339, parse_flexible_date, sha256_hex};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_UNPARSEABLE: i32 = 2;
pub const EXIT_PROVIDER_EXHAUSTED: i32 = 3;

pub const SEARCH_ENDPOINT_ENV: &str = "SEARCH_API_ENDPOINT";
pub const TRANSLATE_ENDPOINT_ENV: &str = "TRANSLATE_API_ENDPOINT";
pub const CONFIG_ENV: &str = "CLAIMCHECK_CONFIG";

/// Optional defaults file pointed at by `CLAIMCHECK_CONFIG`. Precedence is
/// flags, then environment, then this file.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct CliConfig {
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub models: Option<Vec<String>>,
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub fixtures: Option<String>,
    #[serde(default)]
    pub blocklist: Option<String>,
    /// Process-wide outbound request budget for live providers.
    #[serde(default)]
    pub rate_limit_per_sec: Option<f64>,
}

impl CliConfig {
    pub fn from_env() -> Result<Self, CliError> {
        let Ok(path) = std::env::var(CONFIG_ENV) else {
            return Ok(Self::default());
        };
        let body = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Usage(format!("cannot read {CONFIG_ENV} file {path}: {e}")))?;
        serde_json::from_str(&body)
            .map_err(|e| CliError::Usage(format!("bad config file {path}: {e}")))
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "claimcheck",
    version,
    about = "Verify claims with a search-enabled agent and reproduce evaluation runs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Verify one claim and print verdict, reason, and cited sources
    Check(CheckArgs),
    /// Standardize and sample a dataset dump into a corpus file
    #[command(subcommand)]
    Prepare(PrepareCommand),
    /// Execute verification sessions over a corpus under one or more conditions
    Run(RunArgs),
    /// Score a predictions file against gold labels and write report files
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// Claim text to verify
    #[arg(long)]
    pub claim: String,
    /// Who made the claim
    #[arg(long)]
    pub author: Option<String>,
    /// When the claim was made (ISO-8601 or M/D/YYYY)
    #[arg(long)]
    pub date: Option<String>,
    /// Allow web-search retrieval (default)
    #[arg(long, overrides_with = "no_context")]
    pub context: bool,
    /// Disable retrieval; the model answers from its own knowledge
    #[arg(long, overrides_with = "context")]
    pub no_context: bool,
    /// Model identifier passed to the provider (default from config file,
    /// else "gpt-4")
    #[arg(long)]
    pub model: Option<String>,
    /// Directory of fixture providers (search pages and scripted responses)
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Blocklist file of fact-checking domains to remove from results
    #[arg(long)]
    pub blocklist: Option<PathBuf>,
    /// Drop search results published after this month (YYYY-MM)
    #[arg(long)]
    pub max_result_date: Option<String>,
    /// Write the full session trace JSON here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum PrepareCommand {
    /// Six-level dump: JSON-lines of statement/originator/date/verdict rows
    Politifact(PreparePolitifactArgs),
    /// Structured fact-check feed on the coarse four-level scale
    Claimreview(PrepareClaimreviewArgs),
}

#[derive(Args, Debug)]
pub struct PreparePolitifactArgs {
    /// Input dump (JSON-lines)
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Records sampled per verdict class
    #[arg(long, default_value_t = 500)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output corpus file (JSON-lines)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PrepareClaimreviewArgs {
    /// Input feed (JSON)
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Extra verdict mapping table (TSV) layered over the built-in entries
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Offline translation dictionary (JSON object of source -> English)
    #[arg(long)]
    pub translations: Option<PathBuf>,
    /// Output corpus file (JSON-lines)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Prepared corpus file
    #[arg(long, required_unless_present = "manifest")]
    pub corpus: Option<PathBuf>,
    /// Model identifier; repeat for several models
    #[arg(long)]
    pub model: Vec<String>,
    /// Run the retrieval-enabled condition
    #[arg(long)]
    pub context: bool,
    /// Run the no-retrieval condition
    #[arg(long)]
    pub no_context: bool,
    /// Claim language rendition: orig or en; repeat for both
    #[arg(long, value_parser = ["orig", "en"])]
    pub lang: Vec<String>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory of fixture providers; omit to use live providers
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long)]
    pub blocklist: Option<PathBuf>,
    /// Drop search results published after this month (YYYY-MM)
    #[arg(long)]
    pub max_result_date: Option<String>,
    /// Run directory for predictions, traces, and the manifest
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Re-execute a previous run from its manifest
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Predictions file or a directory of per-condition .jsonl files
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold corpus file (JSON-lines)
    #[arg(long)]
    pub gold: PathBuf,
    /// Trailing rolling window in months; repeatable
    #[arg(long)]
    pub rolling: Vec<u32>,
    /// Bootstrap resamples for standard errors
    #[arg(long)]
    pub resamples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tolerate predictions whose claim ids are missing from the gold file
    #[arg(long)]
    pub allow_partial: bool,
    /// Report output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("all sessions failed against the provider")]
    ProviderExhausted,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => EXIT_USAGE,
            CliError::ProviderExhausted => EXIT_PROVIDER_EXHAUSTED,
        }
    }
}

fn io_err<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Io(format!("{context}: {e}"))
}

/// Run manifest: everything needed to re-execute the run against fixtures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub seed: u64,
    pub dataset_digest: String,
    pub corpus: String,
    pub conditions: Vec<String>,
    pub config: RunConfigSnapshot,
    pub code_version: String,
    pub started_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfigSnapshot {
    pub models: Vec<String>,
    pub contexts: Vec<String>,
    pub langs: Vec<String>,
    pub parallelism: usize,
    pub max_iterations: usize,
    pub results_per_iteration: usize,
    pub snippet_budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocklist: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_result_date: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit_per_sec: Option<f64>,
}

/// Parse argv and dispatch; returns the process exit code.
pub fn run(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Check(args) => cmd_check(args),
        Command::Prepare(args) => cmd_prepare(args),
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn parse_year_month(raw: &str) -> Result<YearMonth, CliError> {
    let parsed: Result<YearMonth, _> = serde_json::from_value(serde_json::json!(raw));
    parsed.map_err(|_| CliError::Usage(format!("bad month {raw:?}; expected YYYY-MM")))
}

fn load_blocklist(path: Option<&Path>, fixtures: Option<&Path>) -> Result<DomainBlocklist, CliError> {
    if let Some(path) = path {
        return DomainBlocklist::load(path).map_err(io_err("loading blocklist"));
    }
    // fixture directories may carry a default blocklist
    if let Some(dir) = fixtures {
        let candidate = dir.join("blocklist.txt");
        if candidate.exists() {
            return DomainBlocklist::load(&candidate).map_err(io_err("loading blocklist"));
        }
    }
    Ok(DomainBlocklist::default())
}

fn build_searcher(
    fixtures: Option<&Path>,
    retrieval_needed: bool,
    rate_limiter: Option<Arc<crate::util::RateLimiter>>,
) -> Result<Searcher, CliError> {
    if !retrieval_needed {
        // no-context sessions never search, so no provider is required
        return Ok(Searcher::new(Arc::new(EmptySearchProvider)));
    }
    let provider: Arc<dyn SearchProvider> = match fixtures {
        Some(dir) => Arc::new(FixtureSearchProvider::new(dir.join("search"))),
        None => {
            let endpoint = std::env::var(SEARCH_ENDPOINT_ENV).map_err(|_| {
                CliError::Usage(format!(
                    "no --fixtures directory and {SEARCH_ENDPOINT_ENV} not set"
                ))
            })?;
            Arc::new(LiveSearchProvider::from_env(endpoint).map_err(|e| CliError::Usage(e.to_string()))?)
        }
    };
    let mut searcher = Searcher::new(provider);
    if fixtures.is_some() {
        searcher = searcher.with_backoff(crate::retrieval::BackoffPolicy::immediate());
    }
    if let Some(limiter) = rate_limiter {
        searcher = searcher.with_rate_limiter(limiter);
    }
    Ok(searcher)
}

fn build_backend_factory(
    fixtures: Option<&Path>,
    condition: Option<&str>,
) -> Result<Arc<dyn BackendFactory>, CliError> {
    match fixtures {
        Some(dir) => {
            let base = dir.join("llm");
            let scoped = condition
                .map(|c| base.join(sanitize_for_filename(c)))
                .filter(|p| p.is_dir())
                .unwrap_or(base);
            Ok(Arc::new(ScriptDirFactory::new(scoped)))
        }
        None => {
            let backend = LiveChatBackend::from_env().map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(Arc::new(LiveBackendFactory::new(backend)))
        }
    }
}

/// `check`: one session, verdict printed as `{verdict}\n{reason}\nSources: {domains}`.
pub fn cmd_check(args: CheckArgs) -> Result<i32, CliError> {
    if args.claim.trim().is_empty() {
        return Err(CliError::Usage("claim text is empty".into()));
    }
    let config = CliConfig::from_env()?;
    let model = args
        .model
        .clone()
        .or_else(|| config.model.clone())
        .unwrap_or_else(|| "gpt-4".to_string());
    let fixtures = args
        .fixtures
        .clone()
        .or_else(|| config.fixtures.as_ref().map(PathBuf::from));
    let blocklist_path = args
        .blocklist
        .clone()
        .or_else(|| config.blocklist.as_ref().map(PathBuf::from));

    let context_enabled = !args.no_context;
    let mut claim = Claim::new("check", args.claim.clone())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(author) = &args.author {
        claim.originator = Some(author.clone());
    }
    if let Some(raw) = &args.date {
        let date = parse_flexible_date(raw)
            .ok_or_else(|| CliError::Usage(format!("bad --date {raw:?}")))?;
        claim.stated_on = Some(date);
    }

    let blocklist = load_blocklist(blocklist_path.as_deref(), fixtures.as_deref())?;
    let mut cfg = AgentConfig::new(model.clone()).with_blocklist(blocklist);
    cfg.context_enabled = context_enabled;
    if let Some(raw) = &args.max_result_date {
        cfg.max_result_date = Some(parse_year_month(raw)?);
    }

    let env = SessionEnv {
        backends: build_backend_factory(fixtures.as_deref(), None)?,
        searcher: Arc::new(build_searcher(fixtures.as_deref(), context_enabled, None)?),
        llm_trace: None,
        traces_dir: None,
        rate_limiter: None,
    };
    let condition = condition_label(&model, context_enabled, false);
    let (trace, _) = run_session(&claim, &condition, &cfg, &env);

    if let Some(out) = &args.out {
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(io_err("creating output directory"))?;
            }
        }
        let body = serde_json::to_string_pretty(&trace).expect("trace serializes");
        std::fs::write(out, body).map_err(io_err("writing trace"))?;
    }

    match &trace.result.final_answer {
        Some(answer) => {
            println!("{}", answer.verdict);
            println!("{}", answer.reason);
            println!("Sources: {}", answer.cited_domains.join(", "));
            Ok(EXIT_OK)
        }
        None => {
            if let Some(error) = &trace.result.session_error {
                eprintln!("session error: {error}");
            }
            println!("unparseable");
            Ok(EXIT_UNPARSEABLE)
        }
    }
}

#[derive(Debug, Serialize)]
struct PrepareAudit {
    input_rows: usize,
    survivors: usize,
    rejected: Vec<corpus::RowIssue>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    discarded: Vec<corpus::RowIssue>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    unmapped: Vec<corpus::RowIssue>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    translation_failed: Vec<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    per_language: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    publisher_domains: Vec<(String, usize)>,
    source_digest: String,
    seed: u64,
    code_version: String,
    created_at: String,
}

fn write_prepare_outputs(
    out: &Path,
    records: &[FactCheckRecord],
    audit: &PrepareAudit,
) -> Result<(), CliError> {
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err("creating output directory"))?;
        }
    }
    corpus::save_records(out, records).map_err(|e| CliError::Io(e.to_string()))?;
    let audit_path = out.with_extension("audit.json");
    let body = serde_json::to_string_pretty(audit).expect("audit serializes");
    std::fs::write(&audit_path, body).map_err(io_err("writing audit sidecar"))?;
    Ok(())
}

pub fn cmd_prepare(command: PrepareCommand) -> Result<i32, CliError> {
    match command {
        PrepareCommand::Politifact(args) => {
            let report = load_politifact(&args.input).map_err(|e| CliError::Io(e.to_string()))?;
            for issue in &report.rejected {
                eprintln!("warning: row {}: {}", issue.row, issue.reason);
            }
            let sample = balanced_sample(&report.records, args.per_class, args.seed);
            let audit = PrepareAudit {
                input_rows: report.input_rows,
                survivors: sample.len(),
                rejected: report.rejected.clone(),
                discarded: Vec::new(),
                unmapped: Vec::new(),
                translation_failed: Vec::new(),
                per_language: BTreeMap::new(),
                publisher_domains: Vec::new(),
                source_digest: report.source_digest.clone(),
                seed: args.seed,
                code_version: env!("CARGO_PKG_VERSION").to_string(),
                created_at: now_rfc3339(),
            };
            write_prepare_outputs(&args.out, &sample, &audit)?;
            println!(
                "prepared {} records ({} input rows, {} rejected) -> {}",
                sample.len(),
                report.input_rows,
                report.rejected.len(),
                args.out.display()
            );
            Ok(EXIT_OK)
        }
        PrepareCommand::Claimreview(args) => {
            let detector = DefaultLanguageDetector;
            let report = load_claimreview(&args.input, Some(&detector))
                .map_err(|e| CliError::Io(e.to_string()))?;
            for issue in &report.rejected {
                eprintln!("warning: entry {}: {}", issue.row, issue.reason);
            }
            let mut table = MappingTable::default();
            if let Some(path) = &args.mapping {
                let extra = MappingTable::load(path).map_err(|e| CliError::Io(e.to_string()))?;
                table = table.extended_with(extra);
            }
            let translator: Option<Box<dyn Translator>> = match &args.translations {
                Some(path) => Some(Box::new(
                    DictionaryTranslator::load(path).map_err(|e| CliError::Io(e.to_string()))?,
                )),
                None => match std::env::var(TRANSLATE_ENDPOINT_ENV) {
                    Ok(endpoint) => {
                        let key = std::env::var(corpus::LiveTranslator::API_KEY_ENV)
                            .map_err(|_| CliError::Usage(format!(
                                "{} set but {} missing",
                                TRANSLATE_ENDPOINT_ENV,
                                corpus::LiveTranslator::API_KEY_ENV
                            )))?;
                        Some(Box::new(corpus::LiveTranslator::new(endpoint, key)))
                    }
                    Err(_) => None,
                },
            };

            let domains = corpus::count_publisher_domains(&report.records);
            let (standardized, std_report) =
                standardize_multilingual(report.records, &table, translator.as_deref());
            let subsets = filter_languages(&standardized, args.seed);
            let mut records: Vec<FactCheckRecord> = Vec::new();
            let mut per_language = BTreeMap::new();
            for subset in subsets {
                per_language.insert(subset.language.clone(), subset.records.len());
                records.extend(subset.records);
            }

            let mut translation_failed = Vec::new();
            if let Some(translator) = translator.as_deref() {
                match translate_claims(&mut records, translator) {
                    Ok(t_report) => translation_failed = t_report.failed,
                    Err(e) => return Err(CliError::Io(e.to_string())),
                }
            }

            let audit = PrepareAudit {
                input_rows: report.input_rows,
                survivors: records.len(),
                rejected: report.rejected.clone(),
                discarded: std_report.discarded,
                unmapped: std_report.unmapped,
                translation_failed,
                per_language,
                publisher_domains: domains,
                source_digest: report.source_digest.clone(),
                seed: args.seed,
                code_version: env!("CARGO_PKG_VERSION").to_string(),
                created_at: now_rfc3339(),
            };
            write_prepare_outputs(&args.out, &records, &audit)?;
            println!(
                "prepared {} records across {} languages -> {}",
                records.len(),
                audit.per_language.len(),
                args.out.display()
            );
            Ok(EXIT_OK)
        }
    }
}

fn corpus_claims(records: &[FactCheckRecord], english: bool) -> (Vec<Claim>, usize) {
    if !english {
        return (records.iter().map(|r| r.claim.clone()).collect(), 0);
    }
    let mut claims = Vec::new();
    let mut excluded = 0usize;
    for record in records {
        match (&record.english_text, record.translation_failed) {
            (Some(text), false) => {
                let mut claim = record.claim.clone();
                claim.text = text.clone();
                claims.push(claim);
            }
            _ => excluded += 1,
        }
    }
    (claims, excluded)
}

pub fn cmd_run(args: RunArgs) -> Result<i32, CliError> {
    // resolve either fresh flags or a stored manifest
    let (corpus_path, snapshot, seed, out_dir) = match &args.manifest {
        Some(path) => {
            let body = std::fs::read_to_string(path).map_err(io_err("reading manifest"))?;
            let manifest: RunManifest =
                serde_json::from_str(&body).map_err(io_err("parsing manifest"))?;
            let out = args
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("runs/{}-rerun", manifest.run_id)));
            (PathBuf::from(manifest.corpus.clone()), manifest.config, manifest.seed, out)
        }
        None => {
            let config = CliConfig::from_env()?;
            let corpus_path = args.corpus.clone().expect("clap enforces corpus or manifest");
            let models = if args.model.is_empty() {
                config
                    .models
                    .clone()
                    .or_else(|| config.model.clone().map(|m| vec![m]))
                    .unwrap_or_default()
            } else {
                args.model.clone()
            };
            if models.is_empty() {
                return Err(CliError::Usage("at least one --model is required".into()));
            }
            let contexts = match (args.context, args.no_context) {
                (true, false) => vec!["context".to_string()],
                (false, true) => vec!["nocontext".to_string()],
                // neither or both: run both sides of the condition matrix
                _ => vec!["context".to_string(), "nocontext".to_string()],
            };
            let langs = if args.lang.is_empty() { vec!["orig".to_string()] } else { args.lang.clone() };
            let snapshot = RunConfigSnapshot {
                models,
                contexts,
                langs,
                parallelism: args.parallelism.or(config.parallelism).unwrap_or(4),
                max_iterations: crate::agent::DEFAULT_MAX_ITERATIONS,
                results_per_iteration: crate::retrieval::DEFAULT_PAGE_SIZE,
                snippet_budget: crate::retrieval::DEFAULT_SNIPPET_BUDGET,
                fixtures: args
                    .fixtures
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .or_else(|| config.fixtures.clone()),
                blocklist: args
                    .blocklist
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .or_else(|| config.blocklist.clone()),
                max_result_date: args.max_result_date.clone(),
                rate_limit_per_sec: config.rate_limit_per_sec,
            };
            let out = args.out.clone().unwrap_or_else(|| {
                PathBuf::from(format!("runs/{}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ")))
            });
            (corpus_path, snapshot, args.seed, out)
        }
    };

    let corpus_bytes =
        std::fs::read(&corpus_path).map_err(io_err("reading corpus"))?;
    let dataset_digest = sha256_hex(&corpus_bytes);
    let records = corpus::load_records(&corpus_path).map_err(|e| CliError::Io(e.to_string()))?;
    if records.is_empty() {
        return Err(CliError::Usage("corpus file has no records".into()));
    }
    let coarse = records.iter().all(|r| r.gold_coarse.is_some());
    let six = records.iter().all(|r| r.gold_six.is_some());
    if !coarse && !six {
        return Err(CliError::Usage(
            "corpus mixes six-level and coarse gold labels; prepare separate corpora".into(),
        ));
    }
    let vocabulary = if coarse { VerdictVocabulary::Coarse } else { VerdictVocabulary::SixLevel };

    std::fs::create_dir_all(&out_dir).map_err(io_err("creating run directory"))?;
    let lock_path = out_dir.join(".lock");
    let lock_file = std::fs::OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&lock_path)
        .map_err(io_err("opening lockfile"))?;
    lock_file.try_lock_exclusive().map_err(|_| {
        CliError::Usage(format!("run directory {} is locked by another process", out_dir.display()))
    })?;

    let fixtures = snapshot.fixtures.as_ref().map(PathBuf::from);
    // default blocklist is dataset-specific: every publisher domain in the
    // corpus, so the agent cannot retrieve the fact-checks themselves
    let blocklist = match snapshot.blocklist.as_ref() {
        Some(path) => load_blocklist(Some(Path::new(path)), None)?,
        None => DomainBlocklist::new(records.iter().map(|r| r.publisher_domain.as_str())),
    };
    let max_result_date = match &snapshot.max_result_date {
        Some(raw) => Some(parse_year_month(raw)?),
        None => None,
    };

    let run_id = out_dir
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "run".to_string());
    let mut conditions = Vec::new();
    for model in &snapshot.models {
        for context in &snapshot.contexts {
            for lang in &snapshot.langs {
                conditions.push(condition_label(model, context == "context", lang == "en"));
            }
        }
    }
    let mut manifest = RunManifest {
        run_id,
        seed,
        dataset_digest,
        corpus: corpus_path.display().to_string(),
        conditions: conditions.clone(),
        config: snapshot.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at: now_rfc3339(),
        finished_at: None,
    };
    let manifest_path = out_dir.join("manifest.json");
    let write_manifest = |m: &RunManifest| -> Result<(), CliError> {
        let body = serde_json::to_string_pretty(m).expect("manifest serializes");
        std::fs::write(&manifest_path, body).map_err(io_err("writing manifest"))
    };
    write_manifest(&manifest)?;

    let llm_trace = TraceLog::create(out_dir.join("llm_trace.jsonl"))
        .map_err(io_err("creating trace log"))?;
    let retrieval_needed = snapshot.contexts.iter().any(|c| c == "context");
    let rate_limiter = snapshot
        .rate_limit_per_sec
        .map(|rps| Arc::new(crate::util::RateLimiter::per_second(rps)));
    let searcher = Arc::new(build_searcher(
        fixtures.as_deref(),
        retrieval_needed,
        rate_limiter.clone(),
    )?);

    let mut total_sessions = 0usize;
    let mut failed_sessions = 0usize;
    for model in &snapshot.models {
        for context in &snapshot.contexts {
            let context_enabled = context == "context";
            for lang in &snapshot.langs {
                let english = lang == "en";
                let condition = condition_label(model, context_enabled, english);
                let (claims, excluded) = corpus_claims(&records, english);
                if excluded > 0 {
                    eprintln!(
                        "warning: {condition}: {excluded} records lack an English rendition and were excluded"
                    );
                }
                if claims.is_empty() {
                    eprintln!("warning: {condition}: no claims to run");
                    continue;
                }
                let mut cfg = AgentConfig::new(model.clone()).with_blocklist(blocklist.clone());
                cfg.context_enabled = context_enabled;
                cfg.vocabulary = vocabulary;
                cfg.max_iterations = snapshot.max_iterations;
                cfg.results_per_iteration = snapshot.results_per_iteration;
                cfg.snippet_budget = snapshot.snippet_budget;
                cfg.max_result_date = max_result_date;

                let env = SessionEnv {
                    backends: build_backend_factory(fixtures.as_deref(), Some(&condition))?,
                    searcher: searcher.clone(),
                    llm_trace: Some(llm_trace.clone()),
                    traces_dir: Some(out_dir.join("traces").join(sanitize_for_filename(&condition))),
                    rate_limiter: rate_limiter.clone(),
                };
                let pred_path = out_dir
                    .join("predictions")
                    .join(format!("{}.jsonl", sanitize_for_filename(&condition)));
                let writer =
                    PredictionWriter::open_append(&pred_path).map_err(io_err("opening predictions"))?;
                let results = run_condition(&claims, &cfg, &condition, snapshot.parallelism, &env, &writer)
                    .map_err(|e| CliError::Io(e.to_string()))?;
                total_sessions += results.len();
                failed_sessions += results.iter().filter(|r| r.session_error.is_some()).count();
                println!(
                    "{condition}: {} sessions ({} resumed earlier), {} errors -> {}",
                    results.len(),
                    claims.len() - results.len(),
                    results.iter().filter(|r| r.session_error.is_some()).count(),
                    pred_path.display()
                );
            }
        }
    }

    manifest.finished_at = Some(now_rfc3339());
    write_manifest(&manifest)?;
    let _ = fs2::FileExt::unlock(&lock_file);

    if total_sessions > 0 && failed_sessions == total_sessions {
        return Err(CliError::ProviderExhausted);
    }
    Ok(EXIT_OK)
}

fn collect_prediction_rows(path: &Path) -> Result<Vec<PredictionRow>, CliError> {
    if path.is_dir() {
        let mut rows = Vec::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(io_err("reading predictions directory"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
            .collect();
        entries.sort();
        for entry in entries {
            rows.extend(
                PredictionWriter::read_rows(&entry).map_err(io_err("reading predictions"))?,
            );
        }
        Ok(rows)
    } else {
        PredictionWriter::read_rows(path).map_err(io_err("reading predictions"))
    }
}

fn class_table_csv(report: &EvaluationReport, grouped: bool) -> String {
    let mut classes: Vec<String> = Vec::new();
    for condition in &report.conditions {
        let rows = if grouped {
            &report.per_condition[condition].grouped
        } else {
            &report.per_condition[condition].exact
        };
        for row in rows {
            if !classes.contains(&row.class) {
                classes.push(row.class.clone());
            }
        }
    }
    let mut out = String::from("class");
    for condition in &report.conditions {
        out.push(',');
        out.push_str(condition);
    }
    out.push('\n');
    for class in &classes {
        out.push_str(class);
        for condition in &report.conditions {
            let rows = if grouped {
                &report.per_condition[condition].grouped
            } else {
                &report.per_condition[condition].exact
            };
            let cell = rows
                .iter()
                .find(|r| &r.class == class)
                .map(|r| format!("{:.6}", r.pct))
                .unwrap_or_default();
            out.push(',');
            out.push_str(&cell);
        }
        out.push('\n');
    }
    out
}

fn language_table_csv(report: &EvaluationReport) -> String {
    let mut out = String::from("language");
    for condition in &report.conditions {
        out.push_str(&format!(",accuracy {condition},f1 {condition}"));
    }
    out.push_str(",n\n");
    for (language, cells) in &report.per_language {
        out.push_str(language);
        let mut n = 0usize;
        for condition in &report.conditions {
            match cells.get(condition) {
                Some(cell) => {
                    out.push_str(&format!(",{:.6},{:.6}", cell.accuracy_pct, cell.macro_f1));
                    n = n.max(cell.n);
                }
                None => out.push_str(",,"),
            }
        }
        out.push_str(&format!(",{n}\n"));
    }
    out
}

pub fn cmd_eval(args: EvalArgs) -> Result<i32, CliError> {
    let rows = collect_prediction_rows(&args.pred)?;
    if rows.is_empty() {
        return Err(CliError::Usage("no prediction rows found".into()));
    }
    let gold = corpus::load_records(&args.gold).map_err(|e| CliError::Io(e.to_string()))?;
    let joined = join_predictions(&rows, &gold);
    if !joined.orphans.is_empty() {
        eprintln!(
            "warning: {} prediction rows have no gold record (e.g. {:?})",
            joined.orphans.len(),
            &joined.orphans[..joined.orphans.len().min(3)]
        );
        if !args.allow_partial {
            return Err(CliError::Usage(
                "orphan claim ids present; pass --allow-partial to score the joined subset".into(),
            ));
        }
    }

    let options = ReportOptions {
        rolling_windows: args.rolling.clone(),
        bootstrap_resamples: args.resamples,
        seed: args.seed,
    };
    let report = build_report(&joined.preds, &options)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let class_table = render_class_table(&report);
    print!("{class_table}");
    let language_table = render_language_table(&report);
    if !language_table.is_empty() {
        print!("{language_table}");
    }

    if let Some(out_dir) = &args.out {
        std::fs::create_dir_all(out_dir).map_err(io_err("creating report directory"))?;
        let report_json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(out_dir.join("report.json"), report_json)
            .map_err(io_err("writing report.json"))?;
        std::fs::write(out_dir.join("class_table.txt"), &class_table)
            .map_err(io_err("writing class table"))?;
        std::fs::write(out_dir.join("grouped_accuracy.csv"), class_table_csv(&report, true))
            .map_err(io_err("writing grouped csv"))?;
        std::fs::write(out_dir.join("exact_accuracy.csv"), class_table_csv(&report, false))
            .map_err(io_err("writing exact csv"))?;
        if !language_table.is_empty() {
            std::fs::write(out_dir.join("language_table.txt"), &language_table)
                .map_err(io_err("writing language table"))?;
            std::fs::write(out_dir.join("languages.csv"), language_table_csv(&report))
                .map_err(io_err("writing language csv"))?;
        }
        for condition in &report.conditions {
            for (window, series) in &report.per_condition[condition].rolling {
                let name = format!(
                    "rolling_{}_{}m.csv",
                    sanitize_for_filename(condition),
                    window
                );
                std::fs::write(out_dir.join(name), rolling_series_csv(series))
                    .map_err(io_err("writing rolling csv"))?;
            }
        }
        println!("report written to {}", out_dir.display());
    }
    Ok(EXIT_OK)
}
