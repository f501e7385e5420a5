//! Web-search providers, fact-check-domain filtering, and observation rendering.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::util::RateLimiter;

pub const DEFAULT_PAGE_SIZE: usize = 10;
pub const DEFAULT_SNIPPET_BUDGET: usize = 300;

/// Year and month of publication, rendered as e.g. `2020-Feb`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Option<Self> {
        (1..=12).contains(&month).then_some(Self { year, month })
    }

    fn month_abbrev(self) -> &'static str {
        const NAMES: [&str; 12] = [
            "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
        ];
        NAMES[(self.month - 1) as usize]
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.year, self.month_abbrev())
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format!("{:04}-{:02}", self.year, self.month))
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        let (y, m) = raw
            .split_once('-')
            .ok_or_else(|| serde::de::Error::custom(format!("bad year-month: {raw:?}")))?;
        let year: i32 = y.parse().map_err(serde::de::Error::custom)?;
        let month: u32 = m.parse().map_err(serde::de::Error::custom)?;
        YearMonth::new(year, month)
            .ok_or_else(|| serde::de::Error::custom(format!("bad year-month: {raw:?}")))
    }
}

/// One ranked result from a search page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub rank: u32,
    pub url: String,
    /// Lowercase, no scheme, no leading `www.`.
    pub domain: String,
    pub title: String,
    pub snippet: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published: Option<YearMonth>,
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("malformed url: {0:?}")]
    MalformedUrl(String),
    #[error("search provider unavailable: {0}")]
    SearchUnavailable(String),
    #[error("search provider rate limited")]
    RateLimited,
    #[error("bad fixture file {path}: {message}")]
    BadFixture { path: String, message: String },
    #[error("bad result page: {0}")]
    BadResultPage(String),
}

/// Registrable domain of an absolute URL: lowercase host with a leading
/// `www.` stripped.
pub fn extract_domain(url: &str) -> Result<String, RetrievalError> {
    let parsed = url::Url::parse(url).map_err(|_| RetrievalError::MalformedUrl(url.to_string()))?;
    let host = parsed
        .host_str()
        .ok_or_else(|| RetrievalError::MalformedUrl(url.to_string()))?;
    Ok(canonicalize_domain(host))
}

/// Lowercase a bare domain and strip one leading `www.`.
pub fn canonicalize_domain(domain: &str) -> String {
    let lower = domain.trim().trim_end_matches('.').to_lowercase();
    match lower.strip_prefix("www.") {
        Some(rest) if !rest.is_empty() => rest.to_string(),
        _ => lower,
    }
}

/// Fact-checking publisher domains removed from search results.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainBlocklist {
    entries: BTreeSet<String>,
}

impl DomainBlocklist {
    pub fn new(entries: impl IntoIterator<Item = impl AsRef<str>>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|e| canonicalize_domain(e.as_ref()))
                .filter(|e| !e.is_empty())
                .collect(),
        }
    }

    /// Newline-delimited domains; `#` comments allowed.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let content = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            RetrievalError::BadFixture {
                path: path.as_ref().display().to_string(),
                message: e.to_string(),
            }
        })?;
        Ok(Self::new(
            content
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        ))
    }

    pub fn insert(&mut self, domain: &str) {
        let d = canonicalize_domain(domain);
        if !d.is_empty() {
            self.entries.insert(d);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when `domain` equals an entry or is a subdomain of one.
    pub fn blocks(&self, domain: &str) -> bool {
        let d = canonicalize_domain(domain);
        self.entries
            .iter()
            .any(|e| d == *e || d.ends_with(&format!(".{e}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &String> {
        self.entries.iter()
    }
}

/// Drop results whose domain is blocked. Input order is preserved and ranks
/// are not renumbered, so gaps record what was removed.
pub fn filter_blocked(results: Vec<SearchResult>, blocklist: &DomainBlocklist) -> Vec<SearchResult> {
    results
        .into_iter()
        .filter(|r| !blocklist.blocks(&r.domain))
        .collect()
}

/// Render results into the observation text shown to the agent, one line per
/// result: `<n>. <domain>: (<YYYY-Mon>): <title>. <snippet>`. Empty input
/// renders exactly `No results found.`
pub fn render_observation(results: &[SearchResult]) -> String {
    render_observation_with(results, DEFAULT_SNIPPET_BUDGET)
}

pub fn render_observation_with(results: &[SearchResult], snippet_budget: usize) -> String {
    if results.is_empty() {
        return "No results found.".to_string();
    }
    let mut lines = Vec::with_capacity(results.len());
    for r in results {
        let date = match r.published {
            Some(ym) => format!("({ym}): "),
            None => String::new(),
        };
        let snippet = truncate_at_word(&r.snippet, snippet_budget);
        let mut line = format!("{}. {}: {}{}", r.rank, r.domain, date, r.title);
        if !snippet.is_empty() {
            line.push_str(". ");
            line.push_str(&snippet);
        }
        lines.push(line);
    }
    lines.join("\n")
}

/// Truncate to at most `budget` characters at a word boundary, appending
/// `...` when anything was cut.
fn truncate_at_word(text: &str, budget: usize) -> String {
    if text.chars().count() <= budget {
        return text.to_string();
    }
    let mut cut = 0usize; // byte offset of the last word boundary within budget
    let mut last_space_byte = None;
    for (chars_seen, (byte_idx, c)) in text.char_indices().enumerate() {
        if chars_seen == budget {
            cut = last_space_byte.unwrap_or(byte_idx);
            break;
        }
        if c.is_whitespace() {
            last_space_byte = Some(byte_idx);
        }
    }
    format!("{}...", text[..cut].trim_end())
}

/// A source of ranked search results. Implementations return at most
/// `page_size` results, provider-truthful, without re-ranking.
pub trait SearchProvider: Send + Sync {
    fn search_page(&self, query: &str, page_size: usize) -> Result<Vec<SearchResult>, RetrievalError>;
}

/// Retry schedule for flaky providers.
#[derive(Debug, Clone)]
pub struct BackoffPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_secs(1) }
    }
}

impl BackoffPolicy {
    /// Immediate retries, for tests and fixture providers.
    pub fn immediate() -> Self {
        Self { attempts: 3, base_delay: Duration::ZERO }
    }

    pub fn delay_before(&self, attempt: u32) -> Duration {
        if attempt == 0 {
            Duration::ZERO
        } else {
            self.base_delay * 2u32.saturating_pow(attempt - 1)
        }
    }
}

/// Front end over a provider adding validation, retries with exponential
/// backoff, and the shared rate limiter.
pub struct Searcher {
    provider: Arc<dyn SearchProvider>,
    backoff: BackoffPolicy,
    rate_limiter: Option<Arc<RateLimiter>>,
}

impl Searcher {
    pub fn new(provider: Arc<dyn SearchProvider>) -> Self {
        Self { provider, backoff: BackoffPolicy::default(), rate_limiter: None }
    }

    pub fn with_backoff(mut self, backoff: BackoffPolicy) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn with_rate_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.rate_limiter = Some(limiter);
        self
    }

    /// Query the provider. Never returns more than `page_size` results.
    pub fn search(&self, query: &str, page_size: usize) -> Result<Vec<SearchResult>, RetrievalError> {
        if query.trim().is_empty() {
            return Err(RetrievalError::BadResultPage("empty query".into()));
        }
        let page_size = page_size.max(1);
        let mut last_err = None;
        for attempt in 0..self.backoff.attempts {
            let delay = self.backoff.delay_before(attempt);
            if !delay.is_zero() {
                std::thread::sleep(delay);
            }
            if let Some(limiter) = &self.rate_limiter {
                limiter.acquire();
            }
            match self.provider.search_page(query, page_size) {
                Ok(mut results) => {
                    results.truncate(page_size);
                    validate_page(&results)?;
                    return Ok(results);
                }
                Err(e @ (RetrievalError::SearchUnavailable(_) | RetrievalError::RateLimited)) => {
                    last_err = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(match last_err {
            Some(RetrievalError::RateLimited) => RetrievalError::RateLimited,
            Some(e) => e,
            None => RetrievalError::SearchUnavailable("no attempts made".into()),
        })
    }
}

/// Ranks within one page must be unique and contiguous from 1.
fn validate_page(results: &[SearchResult]) -> Result<(), RetrievalError> {
    for (i, r) in results.iter().enumerate() {
        if r.rank as usize != i + 1 {
            return Err(RetrievalError::BadResultPage(format!(
                "rank {} at position {}; ranks must be contiguous from 1",
                r.rank,
                i + 1
            )));
        }
    }
    Ok(())
}

/// Hash key for fixture lookup: lowercase, whitespace-collapsed query.
pub fn normalized_query_hash(query: &str) -> String {
    let normalized = query.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    hex::encode(Sha256::digest(normalized.as_bytes()))
}

/// Always returns an empty page; used where a searcher is structurally
/// required but retrieval is disabled.
pub struct EmptySearchProvider;

impl SearchProvider for EmptySearchProvider {
    fn search_page(&self, _query: &str, _page_size: usize) -> Result<Vec<SearchResult>, RetrievalError> {
        Ok(Vec::new())
    }
}

/// Replays recorded result pages from a directory of JSON files keyed by
/// normalized query hash. Unknown queries yield an empty page.
pub struct FixtureSearchProvider {
    dir: PathBuf,
}

impl FixtureSearchProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn fixture_path(&self, query: &str) -> PathBuf {
        self.dir.join(format!("{}.json", normalized_query_hash(query)))
    }

    /// Record a result page so later searches replay it bit-exactly.
    pub fn store(&self, query: &str, results: &[SearchResult]) -> Result<(), RetrievalError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| RetrievalError::BadFixture {
            path: self.dir.display().to_string(),
            message: e.to_string(),
        })?;
        let path = self.fixture_path(query);
        let body = serde_json::to_string_pretty(results).expect("results serialize");
        std::fs::write(&path, body).map_err(|e| RetrievalError::BadFixture {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

impl SearchProvider for FixtureSearchProvider {
    fn search_page(&self, query: &str, page_size: usize) -> Result<Vec<SearchResult>, RetrievalError> {
        let path = self.fixture_path(query);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let content = std::fs::read_to_string(&path).map_err(|e| RetrievalError::BadFixture {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut results: Vec<SearchResult> =
            serde_json::from_str(&content).map_err(|e| RetrievalError::BadFixture {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        results.truncate(page_size);
        Ok(results)
    }
}

/// HTTP JSON search API: `GET <endpoint>?q=<query>&count=<page_size>` with
/// the key sent as `x-api-key`. The response is either a bare array of
/// results or `{"results": [...]}`; ranks are assigned from response order
/// when absent.
pub struct LiveSearchProvider {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct WireResult {
    url: String,
    title: String,
    #[serde(default)]
    snippet: String,
    #[serde(default)]
    rank: Option<u32>,
    #[serde(default)]
    published: Option<YearMonth>,
}

impl LiveSearchProvider {
    pub const API_KEY_ENV: &'static str = "SEARCH_API_KEY";

    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            agent: ureq::Agent::new_with_defaults(),
        }
    }

    pub fn from_env(endpoint: impl Into<String>) -> Result<Self, RetrievalError> {
        let key = std::env::var(Self::API_KEY_ENV).map_err(|_| {
            RetrievalError::SearchUnavailable(format!("{} not set", Self::API_KEY_ENV))
        })?;
        Ok(Self::new(endpoint, key))
    }
}

impl SearchProvider for LiveSearchProvider {
    fn search_page(&self, query: &str, page_size: usize) -> Result<Vec<SearchResult>, RetrievalError> {
        let mut url = url::Url::parse(&self.endpoint)
            .map_err(|_| RetrievalError::MalformedUrl(self.endpoint.clone()))?;
        url.query_pairs_mut()
            .append_pair("q", query)
            .append_pair("count", &page_size.to_string());

        let response = self
            .agent
            .get(url.as_str())
            .header("x-api-key", &self.api_key)
            .call();
        let mut response = match response {
            Ok(r) => r,
            Err(ureq::Error::StatusCode(429)) => return Err(RetrievalError::RateLimited),
            Err(e) => return Err(RetrievalError::SearchUnavailable(e.to_string())),
        };
        let body: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| RetrievalError::SearchUnavailable(e.to_string()))?;
        let items = match &body {
            serde_json::Value::Array(items) => items.clone(),
            serde_json::Value::Object(map) => map
                .get("results")
                .and_then(|v| v.as_array())
                .cloned()
                .unwrap_or_default(),
            _ => Vec::new(),
        };
        let mut results = Vec::new();
        for (i, item) in items.into_iter().take(page_size).enumerate() {
            let wire: WireResult = serde_json::from_value(item)
                .map_err(|e| RetrievalError::BadResultPage(e.to_string()))?;
            let domain = extract_domain(&wire.url)?;
            results.push(SearchResult {
                rank: wire.rank.unwrap_or(i as u32 + 1),
                url: wire.url,
                domain,
                title: wire.title,
                snippet: wire.snippet,
                published: wire.published,
            });
        }
        Ok(results)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(rank: u32, domain: &str) -> SearchResult {
        SearchResult {
            rank,
            url: format!("https://{domain}/x"),
            domain: domain.to_string(),
            title: format!("title {rank}"),
            snippet: format!("snippet {rank}"),
            published: None,
        }
    }

    #[test]
    fn extract_domain_strips_www_and_lowercases() {
        assert_eq!(
            extract_domain("https://www.politifact.com/factchecks/2020/x").unwrap(),
            "politifact.com"
        );
        assert_eq!(extract_domain("HTTPS://NYTimes.COM/a").unwrap(), "nytimes.com");
        assert!(matches!(
            extract_domain("not a url"),
            Err(RetrievalError::MalformedUrl(_))
        ));
    }

    #[test]
    fn blocklist_blocks_subdomains() {
        let bl = DomainBlocklist::new(["politifact.com"]);
        assert!(bl.blocks("politifact.com"));
        assert!(bl.blocks("blog.politifact.com"));
        assert!(bl.blocks("www.politifact.com"));
        assert!(!bl.blocks("notpolitifact.com"));
        assert!(!bl.blocks("politifact.com.evil.org"));
    }

    #[test]
    fn filter_preserves_order_and_ranks() {
        let bl = DomainBlocklist::new(["politifact.com"]);
        let results = vec![
            result(1, "nytimes.com"),
            result(2, "blog.politifact.com"),
            result(3, "wikipedia.org"),
        ];
        let filtered = filter_blocked(results, &bl);
        assert_eq!(
            filtered.iter().map(|r| (r.rank, r.domain.as_str())).collect::<Vec<_>>(),
            vec![(1, "nytimes.com"), (3, "wikipedia.org")]
        );
    }

    #[test]
    fn empty_blocklist_is_identity() {
        let results = vec![result(1, "a.com"), result(2, "b.com")];
        assert_eq!(filter_blocked(results.clone(), &DomainBlocklist::default()), results);
    }

    #[test]
    fn observation_renders_numbered_lines() {
        let mut r = result(5, "washingtonpost.com");
        r.published = Some(YearMonth::new(2020, 2).unwrap());
        let text = render_observation(&[r]);
        assert_eq!(
            text,
            "5. washingtonpost.com: (2020-Feb): title 5. snippet 5"
        );
    }

    #[test]
    fn observation_omits_missing_date() {
        let text = render_observation(&[result(1, "pbs.org")]);
        assert_eq!(text, "1. pbs.org: title 1. snippet 1");
        assert!(!text.contains("( ):"));
    }

    #[test]
    fn empty_results_render_sentinel() {
        assert_eq!(render_observation(&[]), "No results found.");
    }

    #[test]
    fn snippet_truncated_at_word_boundary() {
        let mut r = result(1, "a.com");
        r.snippet = "one two three four five".to_string();
        let text = render_observation_with(&[r], 10);
        assert!(text.ends_with("one two..."), "{text}");
    }

    #[test]
    fn search_caps_page_size() {
        struct Big;
        impl SearchProvider for Big {
            fn search_page(&self, _q: &str, n: usize) -> Result<Vec<SearchResult>, RetrievalError> {
                Ok((1..=n as u32 + 5).map(|i| result(i, "a.com")).collect())
            }
        }
        let searcher = Searcher::new(Arc::new(Big)).with_backoff(BackoffPolicy::immediate());
        assert_eq!(searcher.search("q", 3).unwrap().len(), 3);
    }

    #[test]
    fn failing_provider_surfaces_after_retries() {
        struct Failing(std::sync::atomic::AtomicU32);
        impl SearchProvider for Failing {
            fn search_page(&self, _q: &str, _n: usize) -> Result<Vec<SearchResult>, RetrievalError> {
                self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                Err(RetrievalError::SearchUnavailable("boom".into()))
            }
        }
        let provider = Arc::new(Failing(std::sync::atomic::AtomicU32::new(0)));
        let searcher = Searcher::new(provider.clone()).with_backoff(BackoffPolicy::immediate());
        assert!(matches!(
            searcher.search("q", 10),
            Err(RetrievalError::SearchUnavailable(_))
        ));
        assert_eq!(provider.0.load(std::sync::atomic::Ordering::SeqCst), 3);
    }

    #[test]
    fn fixture_provider_replays_and_misses_empty() {
        let dir = tempfile::tempdir().unwrap();
        let provider = FixtureSearchProvider::new(dir.path());
        let page = vec![result(1, "nytimes.com"), result(2, "wikipedia.org")];
        provider.store("Bernie Sanders Nevada 2020 votes count", &page).unwrap();
        // normalization: case and whitespace insensitive
        let replayed = provider
            .search_page("bernie  sanders NEVADA 2020 votes count", 10)
            .unwrap();
        assert_eq!(replayed, page);
        assert!(provider.search_page("unknown query", 10).unwrap().is_empty());
    }
}
