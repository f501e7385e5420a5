//! Dataset ingestion, standardization, filtering, sampling, and translation.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::extract_domain;
use crate::taxonomy::{Claim, CoarseVerdict, MappingOutcome, MappingTable, SixLevelVerdict};
use crate::util::{parse_flexible_date, sha256_hex, short_digest};

pub const LANGUAGE_MIN_RECORDS: usize = 50;
pub const LANGUAGE_MIN_TRUE_SIDE: usize = 10;
pub const LANGUAGE_SAMPLE_CAP: usize = 500;

/// A standardized fact-check: the claim plus its gold verdict on exactly one
/// scale, and provenance of the review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactCheckRecord {
    pub claim: Claim,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_six: Option<SixLevelVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_coarse: Option<CoarseVerdict>,
    pub publisher_domain: String,
    pub review_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact_check_date: Option<NaiveDate>,
    pub raw_verdict: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub english_text: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub translation_failed: bool,
}

impl FactCheckRecord {
    pub fn is_true_side(&self) -> bool {
        matches!(
            self.gold_coarse,
            Some(CoarseVerdict::True) | Some(CoarseVerdict::MostlyTrue)
        )
    }
}

/// One rejected or dropped input row, kept for the audit sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIssue {
    pub row: usize,
    pub reason: String,
}

/// Loader output: survivors plus per-row rejections, so that
/// `input rows == records + rejected` always holds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: Vec<FactCheckRecord>,
    pub rejected: Vec<RowIssue>,
    pub input_rows: usize,
    pub source_digest: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("bad file format in {path}: {message}")]
    FileFormat { path: String, message: String },
    #[error("translator unreachable: every translation attempt failed")]
    TranslatorUnreachable,
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Deserialize)]
struct PolitifactRow {
    statement: Option<String>,
    statement_originator: Option<String>,
    statement_date: Option<String>,
    verdict: Option<String>,
    #[serde(default)]
    factcheck_analysis_link: Option<String>,
}

/// Load the six-level dump: JSON-lines with `statement`,
/// `statement_originator`, `statement_date`, and `verdict` keys. Rows with
/// missing fields or verdicts outside the six labels are rejected with
/// per-row warnings; more than 50% bad rows is a file-format error.
pub fn load_politifact(path: impl AsRef<Path>) -> Result<IngestReport, CorpusError> {
    let path = path.as_ref();
    let content = read_file(path)?;
    let source_digest = sha256_hex(content.as_bytes());
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    let mut input_rows = 0usize;

    for (i, line) in content.lines().enumerate() {
        let row_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        input_rows += 1;
        let row: PolitifactRow = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RowIssue { row: row_no, reason: format!("bad json: {e}") });
                continue;
            }
        };
        let Some(statement) = row.statement.as_deref().map(str::trim).filter(|s| !s.is_empty())
        else {
            rejected.push(RowIssue { row: row_no, reason: "missing statement".into() });
            continue;
        };
        let Some(raw_verdict) = row.verdict.as_deref().map(str::trim).filter(|s| !s.is_empty())
        else {
            rejected.push(RowIssue { row: row_no, reason: "missing verdict".into() });
            continue;
        };
        let Some(gold) = SixLevelVerdict::from_token(raw_verdict) else {
            rejected.push(RowIssue {
                row: row_no,
                reason: format!("verdict outside the six labels: {raw_verdict:?}"),
            });
            continue;
        };
        let Some(date_raw) = row.statement_date.as_deref().map(str::trim).filter(|s| !s.is_empty())
        else {
            rejected.push(RowIssue { row: row_no, reason: "missing statement_date".into() });
            continue;
        };
        let Some(stated_on) = parse_flexible_date(date_raw) else {
            rejected.push(RowIssue {
                row: row_no,
                reason: format!("unparseable statement_date: {date_raw:?}"),
            });
            continue;
        };
        let originator = row
            .statement_originator
            .as_deref()
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string);

        let review_url = row.factcheck_analysis_link.clone().unwrap_or_default();
        let publisher_domain = if review_url.is_empty() {
            "politifact.com".to_string()
        } else {
            extract_domain(&review_url).unwrap_or_else(|_| "politifact.com".to_string())
        };

        let id = format!("pf-{}", short_digest(&format!("{statement}|{date_raw}")));
        let mut claim = Claim::new(id, statement).expect("statement checked non-empty");
        claim.stated_on = Some(stated_on);
        claim.originator = originator;
        claim.language = Some("en".to_string());

        records.push(FactCheckRecord {
            claim,
            gold_six: Some(gold),
            gold_coarse: None,
            publisher_domain,
            review_url,
            fact_check_date: None,
            raw_verdict: raw_verdict.to_string(),
            english_text: None,
            translation_failed: false,
        });
    }

    if input_rows == 0 || rejected.len() * 2 > input_rows {
        return Err(CorpusError::FileFormat {
            path: path.display().to_string(),
            message: format!("{} of {} rows unusable", rejected.len(), input_rows),
        });
    }
    Ok(IngestReport { records, rejected, input_rows, source_digest })
}

/// Load the structured fact-check feed. Accepts the wrapped feed shape
/// (`{"dataFeedElement": [{"item": [...]}]}`) or a bare array of review
/// objects. Raw verdicts are held verbatim for later mapping.
pub fn load_claimreview(
    path: impl AsRef<Path>,
    detector: Option<&dyn LanguageDetector>,
) -> Result<IngestReport, CorpusError> {
    let path = path.as_ref();
    let content = read_file(path)?;
    let source_digest = sha256_hex(content.as_bytes());
    let root: serde_json::Value =
        serde_json::from_str(&content).map_err(|e| CorpusError::FileFormat {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;

    let items = flatten_feed(&root);
    let mut records = Vec::new();
    let mut rejected = Vec::new();

    for (i, item) in items.iter().enumerate() {
        let row_no = i + 1;
        match claimreview_record(item, detector) {
            Ok(record) => records.push(record),
            Err(reason) => rejected.push(RowIssue { row: row_no, reason }),
        }
    }

    if items.is_empty() || rejected.len() * 2 > items.len() {
        return Err(CorpusError::FileFormat {
            path: path.display().to_string(),
            message: format!("{} of {} entries unusable", rejected.len(), items.len()),
        });
    }
    Ok(IngestReport { records, rejected, input_rows: items.len(), source_digest })
}

fn flatten_feed(root: &serde_json::Value) -> Vec<serde_json::Value> {
    match root {
        serde_json::Value::Array(items) => items.clone(),
        serde_json::Value::Object(map) => {
            if let Some(serde_json::Value::Array(elements)) = map.get("dataFeedElement") {
                let mut out = Vec::new();
                for element in elements {
                    match element.get("item") {
                        Some(serde_json::Value::Array(reviews)) => out.extend(reviews.clone()),
                        Some(review @ serde_json::Value::Object(_)) => out.push(review.clone()),
                        _ => out.push(element.clone()),
                    }
                }
                out
            } else {
                vec![root.clone()]
            }
        }
        _ => Vec::new(),
    }
}

fn string_at<'v>(value: &'v serde_json::Value, keys: &[&str]) -> Option<&'v str> {
    let mut current = value;
    for key in keys {
        current = current.get(key)?;
    }
    current.as_str().map(str::trim).filter(|s| !s.is_empty())
}

fn claimreview_record(
    item: &serde_json::Value,
    detector: Option<&dyn LanguageDetector>,
) -> Result<FactCheckRecord, String> {
    let text = string_at(item, &["claimReviewed"]).ok_or("missing or empty claimReviewed")?;
    let raw_verdict = string_at(item, &["reviewRating", "alternateName"])
        .ok_or("missing reviewRating.alternateName")?;
    let review_url = string_at(item, &["url"]).ok_or("missing review url")?;
    let publisher_domain =
        extract_domain(review_url).map_err(|_| format!("malformed review url: {review_url:?}"))?;

    let language = string_at(item, &["inLanguage"])
        .or_else(|| string_at(item, &["itemReviewed", "inLanguage"]))
        .map(str::to_string)
        .or_else(|| detector.and_then(|d| d.detect(text)));

    let originator = string_at(item, &["itemReviewed", "author", "name"]).map(str::to_string);
    let stated_on = string_at(item, &["itemReviewed", "datePublished"])
        .and_then(parse_flexible_date);
    let fact_check_date = string_at(item, &["datePublished"]).and_then(parse_flexible_date);

    let id = format!("cr-{}", short_digest(&format!("{review_url}|{text}")));
    let mut claim = Claim::new(id, text).map_err(|e| e.to_string())?;
    claim.originator = originator;
    claim.stated_on = stated_on;
    claim.language = language;

    Ok(FactCheckRecord {
        claim,
        gold_six: None,
        gold_coarse: None,
        publisher_domain,
        review_url: review_url.to_string(),
        fact_check_date,
        raw_verdict: raw_verdict.to_string(),
        english_text: None,
        translation_failed: false,
    })
}

/// Pluggable language identification for feed entries without a language tag.
pub trait LanguageDetector: Send + Sync {
    fn detect(&self, text: &str) -> Option<String>;
}

/// Statistical trigram detector; returns two-letter codes for common
/// languages and ISO 639-3 otherwise.
pub struct DefaultLanguageDetector;

impl LanguageDetector for DefaultLanguageDetector {
    fn detect(&self, text: &str) -> Option<String> {
        let info = whatlang::detect(text)?;
        Some(two_letter_code(info.lang().code()).to_string())
    }
}

fn two_letter_code(iso3: &str) -> &str {
    match iso3 {
        "eng" => "en",
        "spa" => "es",
        "por" => "pt",
        "fra" => "fr",
        "ita" => "it",
        "deu" => "de",
        "tur" => "tr",
        "ind" => "id",
        "tha" => "th",
        "tam" => "ta",
        "cmn" => "zh",
        "heb" => "he",
        "pes" => "fa",
        "tel" => "te",
        "aze" => "az",
        "rus" => "ru",
        "ara" => "ar",
        "hin" => "hi",
        "ben" => "bn",
        "ukr" => "uk",
        "vie" => "vi",
        "kor" => "ko",
        "jpn" => "ja",
        "nld" => "nl",
        "pol" => "pl",
        other => other,
    }
}

/// Text translation towards a target language.
pub trait Translator: Send + Sync {
    fn translate(&self, text: &str, source: Option<&str>, target: &str) -> Result<String, String>;
}

/// Offline dictionary fixture: an exact `{source_text: english_text}` map.
pub struct DictionaryTranslator {
    entries: BTreeMap<String, String>,
}

impl DictionaryTranslator {
    pub fn new(entries: BTreeMap<String, String>) -> Self {
        Self { entries }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let content = read_file(path)?;
        let entries = serde_json::from_str(&content).map_err(|e| CorpusError::FileFormat {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self { entries })
    }
}

impl Translator for DictionaryTranslator {
    fn translate(&self, text: &str, _source: Option<&str>, _target: &str) -> Result<String, String> {
        self.entries
            .get(text)
            .cloned()
            .ok_or_else(|| format!("no dictionary entry for {text:?}"))
    }
}

/// HTTP translation provider: `POST <endpoint>` with `{"q", "source?",
/// "target"}`, key via `TRANSLATE_API_KEY`, expecting `{"translatedText"}`.
pub struct LiveTranslator {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
}

impl LiveTranslator {
    pub const API_KEY_ENV: &'static str = "TRANSLATE_API_KEY";

    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            agent: ureq::Agent::new_with_defaults(),
        }
    }
}

impl Translator for LiveTranslator {
    fn translate(&self, text: &str, source: Option<&str>, target: &str) -> Result<String, String> {
        let mut body = serde_json::json!({"q": text, "target": target});
        if let Some(source) = source {
            body["source"] = serde_json::Value::String(source.to_string());
        }
        let response = self
            .agent
            .post(&self.endpoint)
            .header("x-api-key", &self.api_key)
            .send_json(&body)
            .map_err(|e| e.to_string())?
            .body_mut()
            .read_json::<serde_json::Value>()
            .map_err(|e| e.to_string())?;
        response["translatedText"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| "response missing translatedText".to_string())
    }
}

/// Why standardization dropped each record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StandardizeReport {
    pub survivors: usize,
    pub discarded: Vec<RowIssue>,
    pub unmapped: Vec<RowIssue>,
}

/// Map raw publisher verdicts onto the coarse scale, translating verdicts to
/// English first when a direct lookup misses. Discarded and unmappable
/// records are dropped and tallied.
pub fn standardize_multilingual(
    records: Vec<FactCheckRecord>,
    table: &MappingTable,
    translator: Option<&dyn Translator>,
) -> (Vec<FactCheckRecord>, StandardizeReport) {
    let mut survivors = Vec::new();
    let mut discarded = Vec::new();
    let mut unmapped = Vec::new();

    for (i, mut record) in records.into_iter().enumerate() {
        let row = i + 1;
        let direct = crate::taxonomy::map_publisher_verdict(&record.raw_verdict, table);
        let outcome = match (direct, table.lookup(&record.raw_verdict)) {
            (outcome, Some(_)) => outcome,
            (_, None) => {
                // unmapped: retry through verdict translation when available
                let translated = translator.and_then(|t| {
                    t.translate(&record.raw_verdict, record.claim.language.as_deref(), "en").ok()
                });
                match translated {
                    Some(english) if table.lookup(&english).is_some() => {
                        crate::taxonomy::map_publisher_verdict(&english, table)
                    }
                    _ => {
                        unmapped.push(RowIssue {
                            row,
                            reason: format!("unmapped verdict {:?}", record.raw_verdict),
                        });
                        continue;
                    }
                }
            }
        };
        match outcome {
            MappingOutcome::Coarse(v) => {
                record.gold_coarse = Some(v);
                record.gold_six = None;
                survivors.push(record);
            }
            MappingOutcome::Discard => {
                discarded.push(RowIssue {
                    row,
                    reason: format!("discarded verdict {:?}", record.raw_verdict),
                });
            }
        }
    }

    let report = StandardizeReport { survivors: survivors.len(), discarded, unmapped };
    (survivors, report)
}

/// Records for one language that passed both thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LanguageSubset {
    pub language: String,
    pub records: Vec<FactCheckRecord>,
    /// Count of true-side gold verdicts among `records`.
    pub n_true_side: usize,
}

/// Group standardized records by language, drop groups below 50 records or
/// below 10 true-side records, and sample up to 500 per surviving language,
/// deterministic under `seed`.
pub fn filter_languages(records: &[FactCheckRecord], seed: u64) -> Vec<LanguageSubset> {
    let mut groups: BTreeMap<String, Vec<&FactCheckRecord>> = BTreeMap::new();
    for record in records {
        let language = record.claim.language.clone().unwrap_or_else(|| "und".to_string());
        groups.entry(language).or_default().push(record);
    }

    let mut subsets = Vec::new();
    for (language, group) in groups {
        let true_side = group.iter().filter(|r| r.is_true_side()).count();
        if group.len() < LANGUAGE_MIN_RECORDS || true_side < LANGUAGE_MIN_TRUE_SIDE {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &language));
        let mut indices: Vec<usize> = (0..group.len()).collect();
        indices.shuffle(&mut rng);
        indices.truncate(LANGUAGE_SAMPLE_CAP);
        indices.sort_unstable();
        let sampled: Vec<FactCheckRecord> = indices.iter().map(|&i| group[i].clone()).collect();
        let n_true_side = sampled.iter().filter(|r| r.is_true_side()).count();
        subsets.push(LanguageSubset { language, records: sampled, n_true_side });
    }
    subsets
}

/// Uniform per-class sample without replacement: `min(per_class, available)`
/// from each six-level class, deterministic under `seed`, output shuffled.
pub fn balanced_sample(
    records: &[FactCheckRecord],
    per_class: usize,
    seed: u64,
) -> Vec<FactCheckRecord> {
    let mut chosen = Vec::new();
    for class in SixLevelVerdict::ALL {
        let members: Vec<&FactCheckRecord> =
            records.iter().filter(|r| r.gold_six == Some(class)).collect();
        let take = per_class.min(members.len());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, class.token()));
        let mut indices: Vec<usize> = (0..members.len()).collect();
        indices.shuffle(&mut rng);
        indices.truncate(take);
        indices.sort_unstable();
        chosen.extend(indices.into_iter().map(|i| members[i].clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle"));
    chosen.shuffle(&mut rng);
    chosen
}

fn derive_seed(seed: u64, label: &str) -> u64 {
    let digest = sha256_hex(format!("{seed}:{label}").as_bytes());
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

/// Why each record failed translation, plus the failure count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranslationReport {
    pub translated: usize,
    pub identity: usize,
    pub failed: Vec<String>,
}

/// Give each record an English rendition of its claim. English records
/// short-circuit to the original text; failures flag the record (excluded
/// from English-condition runs) and the run continues. Fails only when the
/// translator is unreachable for every attempted record.
pub fn translate_claims(
    records: &mut [FactCheckRecord],
    translator: &dyn Translator,
) -> Result<TranslationReport, CorpusError> {
    let mut report = TranslationReport { translated: 0, identity: 0, failed: Vec::new() };
    let mut attempted = 0usize;
    for record in records.iter_mut() {
        if record.claim.language.as_deref() == Some("en") {
            record.english_text = Some(record.claim.text.clone());
            record.translation_failed = false;
            report.identity += 1;
            continue;
        }
        attempted += 1;
        match translator.translate(&record.claim.text, record.claim.language.as_deref(), "en") {
            Ok(english) => {
                record.english_text = Some(english);
                record.translation_failed = false;
                report.translated += 1;
            }
            Err(_) => {
                record.english_text = None;
                record.translation_failed = true;
                report.failed.push(record.claim.id.clone());
            }
        }
    }
    if attempted > 0 && report.translated == 0 {
        return Err(CorpusError::TranslatorUnreachable);
    }
    Ok(report)
}

/// Publisher-domain histogram, largest organizations first.
pub fn count_publisher_domains(records: &[FactCheckRecord]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for record in records {
        *counts.entry(record.publisher_domain.as_str()).or_default() += 1;
    }
    let mut out: Vec<(String, usize)> =
        counts.into_iter().map(|(d, n)| (d.to_string(), n)).collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Write records as JSON-lines.
pub fn save_records(path: impl AsRef<Path>, records: &[FactCheckRecord]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut body = String::new();
    for record in records {
        body.push_str(&serde_json::to_string(record).expect("record serializes"));
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<FactCheckRecord>, CorpusError> {
    let path = path.as_ref();
    let content = read_file(path)?;
    let mut records = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| CorpusError::FileFormat {
            path: path.display().to_string(),
            message: format!("line {}: {}", i + 1, e),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use std::io::Write;

    fn politifact_line(statement: &str, verdict: &str, date: &str) -> String {
        serde_json::json!({
            "verdict": verdict,
            "statement_originator": "Somebody",
            "statement": statement,
            "statement_date": date,
            "factcheck_analysis_link": "https://www.politifact.com/factchecks/x/"
        })
        .to_string()
    }

    fn write_temp(lines: &[String]) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(file, "{line}").unwrap();
        }
        file
    }

    #[test]
    fn politifact_rows_become_six_level_records() {
        let file = write_temp(&[
            politifact_line("claim one", "pants-fire", "3/6/2020"),
            politifact_line("claim two", "Mostly True", "2020-07-14"),
        ]);
        let report = load_politifact(file.path()).unwrap();
        assert_eq!(report.records.len(), 2);
        assert_eq!(report.input_rows, 2);
        assert!(report.rejected.is_empty());
        assert_eq!(report.records[0].gold_six, Some(SixLevelVerdict::PantsFire));
        assert_eq!(report.records[1].gold_six, Some(SixLevelVerdict::MostlyTrue));
        assert_eq!(report.records[0].publisher_domain, "politifact.com");
        assert_eq!(report.records[0].claim.language.as_deref(), Some("en"));
    }

    #[test]
    fn politifact_bad_rows_are_rejected_with_warnings() {
        let file = write_temp(&[
            politifact_line("good", "false", "3/6/2020"),
            politifact_line("also good", "true", "3/6/2020"),
            politifact_line("fine too", "half-true", "3/6/2020"),
            politifact_line("", "false", "3/6/2020"),
            politifact_line("odd verdict", "full-flop", "3/6/2020"),
        ]);
        let report = load_politifact(file.path()).unwrap();
        assert_eq!(report.records.len(), 3);
        assert_eq!(report.rejected.len(), 2);
        assert_eq!(report.input_rows, 5);
        assert!(report.rejected[0].reason.contains("statement"));
        assert!(report.rejected[1].reason.contains("full-flop"));
    }

    #[test]
    fn politifact_mostly_bad_file_is_an_error() {
        let file = write_temp(&[
            politifact_line("good", "false", "3/6/2020"),
            "not json at all".to_string(),
            "{}".to_string(),
        ]);
        assert!(matches!(
            load_politifact(file.path()),
            Err(CorpusError::FileFormat { .. })
        ));
    }

    fn review_item(text: &str, verdict: &str, url: &str, lang: Option<&str>) -> serde_json::Value {
        let mut item = serde_json::json!({
            "@type": "ClaimReview",
            "claimReviewed": text,
            "datePublished": "2021-05-01",
            "url": url,
            "reviewRating": {"alternateName": verdict},
            "itemReviewed": {"author": {"name": "Someone"}, "datePublished": "2021-04-20"}
        });
        if let Some(lang) = lang {
            item["inLanguage"] = serde_json::Value::String(lang.to_string());
        }
        item
    }

    #[test]
    fn claimreview_accepts_wrapped_and_bare_arrays() {
        let items = vec![
            review_item("claim a", "False", "https://factly.in/a", Some("en")),
            review_item("claim b", "Sarcasm", "https://www.boatos.org/b", Some("pt")),
        ];
        let wrapped = serde_json::json!({
            "dataFeedElement": [
                {"item": [items[0].clone()]},
                {"item": [items[1].clone()]}
            ]
        });

        for feed in [serde_json::Value::Array(items.clone()), wrapped] {
            let file = tempfile::NamedTempFile::new().unwrap();
            std::fs::write(file.path(), serde_json::to_string(&feed).unwrap()).unwrap();
            let report = load_claimreview(file.path(), None).unwrap();
            assert_eq!(report.records.len(), 2);
            assert_eq!(report.records[0].publisher_domain, "factly.in");
            assert_eq!(report.records[1].publisher_domain, "boatos.org");
            assert_eq!(report.records[1].raw_verdict, "Sarcasm");
            assert_eq!(report.records[0].claim.language.as_deref(), Some("en"));
        }
    }

    #[test]
    fn claimreview_empty_text_is_rejected() {
        let feed = serde_json::Value::Array(vec![
            review_item("ok", "False", "https://x.org/a", Some("en")),
            review_item("", "False", "https://x.org/b", Some("en")),
        ]);
        let file = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(file.path(), serde_json::to_string(&feed).unwrap()).unwrap();
        let report = load_claimreview(file.path(), None).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.rejected.len(), 1);
    }

    fn coarse_record(id: usize, raw_verdict: &str, language: &str) -> FactCheckRecord {
        FactCheckRecord {
            claim: Claim::new(format!("r{id}"), format!("text {id}"))
                .unwrap()
                .with_language(language),
            gold_six: None,
            gold_coarse: None,
            publisher_domain: "x.org".into(),
            review_url: "https://x.org/r".into(),
            fact_check_date: None,
            raw_verdict: raw_verdict.to_string(),
            english_text: None,
            translation_failed: false,
        }
    }

    #[test]
    fn standardize_drops_discards_and_unmapped() {
        // 10 records, 3 unmappable/discarded kinds per the discard rule
        let records = vec![
            coarse_record(0, "true", "en"),
            coarse_record(1, "False", "en"),
            coarse_record(2, "Satire", "en"),
            coarse_record(3, "mostly false", "en"),
            coarse_record(4, "unconfirmed", "en"),
            coarse_record(5, "Mostly True", "en"),
            coarse_record(6, "true", "en"),
            coarse_record(7, "Sarcasm", "en"),
            coarse_record(8, "false", "en"),
            coarse_record(9, "true", "en"),
        ];
        let table = MappingTable::default();
        let (survivors, report) = standardize_multilingual(records, &table, None);
        assert_eq!(survivors.len(), 7);
        assert_eq!(report.discarded.len(), 3);
        assert!(report.unmapped.is_empty());
        assert!(survivors.iter().all(|r| r.gold_coarse.is_some() && r.gold_six.is_none()));
    }

    #[test]
    fn standardize_translates_unmapped_verdicts() {
        let records = vec![coarse_record(0, "falso", "es"), coarse_record(1, "inventado", "es")];
        let table = MappingTable::default();
        let translator = DictionaryTranslator::new(BTreeMap::from([(
            "falso".to_string(),
            "false".to_string(),
        )]));
        let (survivors, report) = standardize_multilingual(records, &table, Some(&translator));
        assert_eq!(survivors.len(), 1);
        assert_eq!(survivors[0].gold_coarse, Some(CoarseVerdict::False));
        assert_eq!(report.unmapped.len(), 1);
    }

    fn language_block(language: &str, total: usize, true_side: usize) -> Vec<FactCheckRecord> {
        (0..total)
            .map(|i| {
                let mut r = coarse_record(i, "x", language);
                r.claim.id = format!("{language}-{i}");
                r.gold_coarse = Some(if i < true_side {
                    CoarseVerdict::True
                } else {
                    CoarseVerdict::False
                });
                r
            })
            .collect()
    }

    #[test]
    fn language_thresholds_drop_small_or_skewed_groups() {
        let mut records = language_block("tr", 60, 12);
        records.extend(language_block("it", 49, 20)); // too few records
        records.extend(language_block("es", 200, 4)); // too few true-side
        let subsets = filter_languages(&records, 7);
        assert_eq!(subsets.len(), 1);
        assert_eq!(subsets[0].language, "tr");
        assert_eq!(subsets[0].records.len(), 60);
        assert_eq!(subsets[0].n_true_side, 12);
    }

    #[test]
    fn language_sampling_caps_at_500_and_is_seed_stable() {
        let records = language_block("pt", 800, 100);
        let a = filter_languages(&records, 7);
        let b = filter_languages(&records, 7);
        assert_eq!(a[0].records.len(), 500);
        assert_eq!(a[0].records, b[0].records);
        let c = filter_languages(&records, 8);
        assert_ne!(a[0].records, c[0].records);
    }

    fn six_record(id: usize, class: SixLevelVerdict) -> FactCheckRecord {
        let mut r = coarse_record(id, class.token(), "en");
        r.claim.id = format!("six-{id}");
        r.gold_six = Some(class);
        r
    }

    #[test]
    fn balanced_sample_takes_min_of_available_and_requested() {
        let mut records = Vec::new();
        let mut id = 0;
        for (class, n) in SixLevelVerdict::ALL.into_iter().zip([30, 30, 30, 10, 30, 30]) {
            for _ in 0..n {
                records.push(six_record(id, class));
                id += 1;
            }
        }
        let sample = balanced_sample(&records, 20, 42);
        assert_eq!(sample.len(), 20 * 5 + 10);
        for class in SixLevelVerdict::ALL {
            let count = sample.iter().filter(|r| r.gold_six == Some(class)).count();
            let expected = if class == SixLevelVerdict::HalfTrue { 10 } else { 20 };
            assert_eq!(count, expected, "{class}");
        }
        // determinism
        assert_eq!(sample, balanced_sample(&records, 20, 42));
        assert_ne!(sample, balanced_sample(&records, 20, 43));
    }

    #[test]
    fn translation_short_circuits_english_and_flags_failures() {
        let mut records = vec![
            coarse_record(0, "x", "en"),
            coarse_record(1, "x", "it"),
            coarse_record(2, "x", "it"),
        ];
        records[1].claim.text = "ciao mondo".into();
        let translator = DictionaryTranslator::new(BTreeMap::from([(
            "ciao mondo".to_string(),
            "hello world".to_string(),
        )]));
        let report = translate_claims(&mut records, &translator).unwrap();
        assert_eq!(records[0].english_text.as_deref(), Some("text 0"));
        assert_eq!(records[1].english_text.as_deref(), Some("hello world"));
        assert!(records[2].translation_failed);
        assert_eq!(report.identity, 1);
        assert_eq!(report.translated, 1);
        assert_eq!(report.failed, vec!["r2".to_string()]);
    }

    #[test]
    fn unreachable_translator_is_fatal() {
        struct Broken;
        impl Translator for Broken {
            fn translate(&self, _t: &str, _s: Option<&str>, _g: &str) -> Result<String, String> {
                Err("down".into())
            }
        }
        let mut records = vec![coarse_record(0, "x", "it")];
        assert!(matches!(
            translate_claims(&mut records, &Broken),
            Err(CorpusError::TranslatorUnreachable)
        ));
    }

    #[test]
    fn publisher_domain_counts_rank_largest_first() {
        let mut records = Vec::new();
        for (domain, n) in [("factly.in", 5), ("boatos.org", 2), ("verafiles.org", 2)] {
            for i in 0..n {
                let mut r = coarse_record(i, "x", "en");
                r.publisher_domain = domain.to_string();
                records.push(r);
            }
        }
        let counts = count_publisher_domains(&records);
        assert_eq!(counts[0], ("factly.in".to_string(), 5));
        assert_eq!(counts.len(), 3);
    }

    #[test]
    fn records_roundtrip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let mut records = vec![six_record(0, SixLevelVerdict::True)];
        records[0].claim.stated_on = NaiveDate::from_ymd_opt(2020, 3, 6);
        save_records(&path, &records).unwrap();
        assert_eq!(load_records(&path).unwrap(), records);
    }
}
