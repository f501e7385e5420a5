//! Claims, verdict scales, the final-answer grammar, and mappings between scales.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A statement to verify.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub originator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stated_on: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
}

impl Claim {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, TaxonomyError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TaxonomyError::EmptyClaimText);
        }
        Ok(Self {
            id: id.into(),
            text,
            originator: None,
            stated_on: None,
            language: None,
        })
    }

    pub fn with_originator(mut self, originator: impl Into<String>) -> Self {
        self.originator = Some(originator.into());
        self
    }

    pub fn with_stated_on(mut self, date: NaiveDate) -> Self {
        self.stated_on = Some(date);
        self
    }

    pub fn with_language(mut self, code: impl Into<String>) -> Self {
        self.language = Some(code.into());
        self
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("claim text is empty after trimming")]
    EmptyClaimText,
}

/// The six-level ordinal truthfulness scale, least to most true.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum SixLevelVerdict {
    PantsFire,
    False,
    MostlyFalse,
    HalfTrue,
    MostlyTrue,
    True,
}

impl SixLevelVerdict {
    pub const ALL: [SixLevelVerdict; 6] = [
        SixLevelVerdict::PantsFire,
        SixLevelVerdict::False,
        SixLevelVerdict::MostlyFalse,
        SixLevelVerdict::HalfTrue,
        SixLevelVerdict::MostlyTrue,
        SixLevelVerdict::True,
    ];

    /// Canonical lowercase hyphenated token, e.g. `mostly-false`.
    pub fn token(self) -> &'static str {
        match self {
            SixLevelVerdict::PantsFire => "pants-fire",
            SixLevelVerdict::False => "false",
            SixLevelVerdict::MostlyFalse => "mostly-false",
            SixLevelVerdict::HalfTrue => "half-true",
            SixLevelVerdict::MostlyTrue => "mostly-true",
            SixLevelVerdict::True => "true",
        }
    }

    /// Parse a label, treating space, hyphen, and underscore as equivalent
    /// and ignoring case ("Pants Fire" == "pants-fire").
    pub fn from_token(raw: &str) -> Option<Self> {
        match normalize_token(raw).as_str() {
            "pants fire" => Some(SixLevelVerdict::PantsFire),
            "false" => Some(SixLevelVerdict::False),
            "mostly false" => Some(SixLevelVerdict::MostlyFalse),
            "half true" => Some(SixLevelVerdict::HalfTrue),
            "mostly true" => Some(SixLevelVerdict::MostlyTrue),
            "true" => Some(SixLevelVerdict::True),
            _ => None,
        }
    }

    pub fn binary_group(self) -> BinaryGroup {
        match self {
            SixLevelVerdict::PantsFire | SixLevelVerdict::False | SixLevelVerdict::MostlyFalse => {
                BinaryGroup::FalseGroup
            }
            SixLevelVerdict::HalfTrue | SixLevelVerdict::MostlyTrue | SixLevelVerdict::True => {
                BinaryGroup::TrueGroup
            }
        }
    }
}

impl fmt::Display for SixLevelVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// The coarse four-level scale used to unify heterogeneous publisher scales.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum CoarseVerdict {
    False,
    MostlyFalse,
    MostlyTrue,
    True,
}

impl CoarseVerdict {
    pub const ALL: [CoarseVerdict; 4] = [
        CoarseVerdict::False,
        CoarseVerdict::MostlyFalse,
        CoarseVerdict::MostlyTrue,
        CoarseVerdict::True,
    ];

    pub fn token(self) -> &'static str {
        match self {
            CoarseVerdict::False => "false",
            CoarseVerdict::MostlyFalse => "mostly-false",
            CoarseVerdict::MostlyTrue => "mostly-true",
            CoarseVerdict::True => "true",
        }
    }

    pub fn from_token(raw: &str) -> Option<Self> {
        match normalize_token(raw).as_str() {
            "false" => Some(CoarseVerdict::False),
            "mostly false" => Some(CoarseVerdict::MostlyFalse),
            "mostly true" => Some(CoarseVerdict::MostlyTrue),
            "true" => Some(CoarseVerdict::True),
            _ => None,
        }
    }
}

impl fmt::Display for CoarseVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// What the agent may answer: a scale verdict or an explicit "uncertain".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentVerdict {
    Scale(SixLevelVerdict),
    Uncertain,
}

impl AgentVerdict {
    pub fn token(self) -> &'static str {
        match self {
            AgentVerdict::Scale(v) => v.token(),
            AgentVerdict::Uncertain => "uncertain",
        }
    }

    pub fn from_token(raw: &str) -> Option<Self> {
        if normalize_token(raw) == "uncertain" {
            return Some(AgentVerdict::Uncertain);
        }
        SixLevelVerdict::from_token(raw).map(AgentVerdict::Scale)
    }
}

impl fmt::Display for AgentVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl Serialize for AgentVerdict {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for AgentVerdict {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        AgentVerdict::from_token(&raw)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown verdict token: {raw:?}")))
    }
}

/// Collapsed truthfulness side; `Neither` is reserved for uncertain and
/// unparseable predictions, which match no gold group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryGroup {
    FalseGroup,
    TrueGroup,
    Neither,
}

/// Collapse an agent verdict onto the false/true sides.
pub fn binarize(v: AgentVerdict) -> BinaryGroup {
    match v {
        AgentVerdict::Scale(s) => s.binary_group(),
        AgentVerdict::Uncertain => BinaryGroup::Neither,
    }
}

/// Collapse a coarse verdict onto the false/true sides.
pub fn coarse_binarize(v: CoarseVerdict) -> BinaryGroup {
    match v {
        CoarseVerdict::False | CoarseVerdict::MostlyFalse => BinaryGroup::FalseGroup,
        CoarseVerdict::MostlyTrue | CoarseVerdict::True => BinaryGroup::TrueGroup,
    }
}

/// Parsed terminal output of a verification session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub verdict: AgentVerdict,
    pub reason: String,
    /// Session domains cited in the reason, in order of first appearance.
    pub cited_domains: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no \"final answer\" marker in model output")]
    NoFinalAnswerMarker,
    #[error("unknown verdict token after final-answer marker: {0:?}")]
    UnknownVerdictToken(String),
}

const MARKER: &[u8] = b"final answer";

/// Extract the final answer from raw model output.
///
/// Takes the last case-insensitive `final answer` marker, reads the verdict
/// token right after it (optional colon, space/hyphen/underscore equivalent),
/// and treats the remainder after the first comma as the reason. Cited
/// domains are the session domains appearing as substrings of the reason,
/// ordered by first appearance. Total over arbitrary UTF-8 input.
pub fn parse_final_answer(
    raw_model_output: &str,
    session_domains: &BTreeSet<String>,
) -> Result<FinalAnswer, ParseError> {
    let bytes = raw_model_output.as_bytes();
    let mut marker_end = None;
    if bytes.len() >= MARKER.len() {
        for i in 0..=bytes.len() - MARKER.len() {
            if bytes[i..i + MARKER.len()].eq_ignore_ascii_case(MARKER) {
                marker_end = Some(i + MARKER.len());
            }
        }
    }
    // The marker is pure ASCII, so slicing at its boundaries is UTF-8 safe.
    let rest = &raw_model_output[marker_end.ok_or(ParseError::NoFinalAnswerMarker)?..];
    let rest = rest.trim_start();
    let rest = match rest.strip_prefix(':') {
        Some(r) => r.trim_start(),
        None => rest,
    };

    let (verdict, verdict_len) = match_verdict_prefix(rest).ok_or_else(|| {
        let token: String = rest
            .chars()
            .take_while(|c| !c.is_whitespace() && *c != ',')
            .collect();
        ParseError::UnknownVerdictToken(token)
    })?;

    let after_verdict = &rest[verdict_len..];
    let reason = match after_verdict.find(',') {
        Some(k) => after_verdict[k + 1..].trim(),
        None => after_verdict.trim(),
    }
    .to_string();

    let mut cited: Vec<(usize, &String)> = Vec::new();
    let reason_lower = reason.to_lowercase();
    for domain in session_domains {
        if let Some(idx) = reason_lower.find(domain.as_str()) {
            cited.push((idx, domain));
        }
    }
    cited.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));

    Ok(FinalAnswer {
        verdict,
        reason,
        cited_domains: cited.into_iter().map(|(_, d)| d.clone()).collect(),
    })
}

/// Verdict vocabulary in longest-match-first order. Each entry is the word
/// sequence; any run of `-`, `_`, or spaces joins the words.
const VOCAB: &[(&[&str], AgentVerdict)] = &[
    (&["pants", "fire"], AgentVerdict::Scale(SixLevelVerdict::PantsFire)),
    (&["mostly", "false"], AgentVerdict::Scale(SixLevelVerdict::MostlyFalse)),
    (&["mostly", "true"], AgentVerdict::Scale(SixLevelVerdict::MostlyTrue)),
    (&["half", "true"], AgentVerdict::Scale(SixLevelVerdict::HalfTrue)),
    (&["uncertain"], AgentVerdict::Uncertain),
    (&["false"], AgentVerdict::Scale(SixLevelVerdict::False)),
    (&["true"], AgentVerdict::Scale(SixLevelVerdict::True)),
];

fn match_verdict_prefix(rest: &str) -> Option<(AgentVerdict, usize)> {
    'vocab: for (words, verdict) in VOCAB {
        let mut offset = 0usize;
        for (wi, word) in words.iter().enumerate() {
            if wi > 0 {
                // one or more separator characters between words
                let sep_len: usize = rest[offset..]
                    .chars()
                    .take_while(|c| matches!(c, '-' | '_' | ' '))
                    .map(char::len_utf8)
                    .sum();
                if sep_len == 0 {
                    continue 'vocab;
                }
                offset += sep_len;
            }
            let tail = &rest[offset..];
            if tail.len() < word.len() || !tail.as_bytes()[..word.len()].eq_ignore_ascii_case(word.as_bytes()) {
                continue 'vocab;
            }
            offset += word.len();
        }
        // word boundary: the verdict must not continue into a longer word
        if rest[offset..].chars().next().is_some_and(|c| c.is_alphanumeric()) {
            continue 'vocab;
        }
        return Some((*verdict, offset));
    }
    None
}

/// Outcome of looking up a publisher verdict in a mapping table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MappingOutcome {
    Coarse(CoarseVerdict),
    Discard,
}

/// Publisher-verdict-to-coarse-scale mapping, keyed by normalized label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingTable {
    entries: BTreeMap<String, MappingOutcome>,
}

impl Default for MappingTable {
    /// Self-mappings for the four coarse labels plus discard entries for
    /// "sarcasm", "satire", and "unconfirmed". Everything else must come
    /// from a user-supplied table.
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        for v in CoarseVerdict::ALL {
            entries.insert(normalize_token(v.token()), MappingOutcome::Coarse(v));
        }
        for label in ["sarcasm", "satire", "unconfirmed"] {
            entries.insert(label.to_string(), MappingOutcome::Discard);
        }
        Self { entries }
    }
}

impl MappingTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Load a tab-separated table: `<raw verdict>\t<false|mostly false|mostly true|true|DISCARD>`.
    /// Lines starting with `#` are ignored. Duplicate keys are a load error.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, MappingTableError> {
        let content = std::fs::read_to_string(path.as_ref())
            .map_err(|e| MappingTableError::Io(e.to_string()))?;
        Self::parse(&content)
    }

    pub fn parse(content: &str) -> Result<Self, MappingTableError> {
        let mut entries = BTreeMap::new();
        for (i, line) in content.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (raw, value) = line
                .split_once('\t')
                .ok_or(MappingTableError::MissingTab { line: line_no })?;
            let key = normalize_token(raw);
            if key.is_empty() {
                return Err(MappingTableError::EmptyKey { line: line_no });
            }
            let outcome = if value.trim().eq_ignore_ascii_case("DISCARD") {
                MappingOutcome::Discard
            } else {
                match CoarseVerdict::from_token(value) {
                    Some(v) => MappingOutcome::Coarse(v),
                    None => {
                        return Err(MappingTableError::BadValue {
                            line: line_no,
                            value: value.trim().to_string(),
                        })
                    }
                }
            };
            if entries.insert(key.clone(), outcome).is_some() {
                return Err(MappingTableError::DuplicateKey { line: line_no, key });
            }
        }
        Ok(Self { entries })
    }

    /// Merge `other` on top of the defaults (or any base table).
    pub fn extended_with(mut self, other: MappingTable) -> Self {
        self.entries.extend(other.entries);
        self
    }

    /// Exact lookup after normalization; `None` means the label is absent
    /// from the table (as opposed to explicitly discarded).
    pub fn lookup(&self, raw: &str) -> Option<MappingOutcome> {
        self.entries.get(&normalize_token(raw)).copied()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MappingTableError {
    #[error("cannot read mapping table: {0}")]
    Io(String),
    #[error("mapping table line {line}: no tab separator")]
    MissingTab { line: usize },
    #[error("mapping table line {line}: empty key")]
    EmptyKey { line: usize },
    #[error("mapping table line {line}: bad value {value:?}")]
    BadValue { line: usize, value: String },
    #[error("mapping table line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
}

/// Look up a publisher verdict. Lookup is exact after lowercasing and
/// whitespace normalization; unmapped values are `Discard`, not an error.
pub fn map_publisher_verdict(raw: &str, table: &MappingTable) -> MappingOutcome {
    table
        .entries
        .get(&normalize_token(raw))
        .copied()
        .unwrap_or(MappingOutcome::Discard)
}

/// Lowercase and collapse whitespace/hyphen/underscore runs to single spaces.
pub(crate) fn normalize_token(raw: &str) -> String {
    raw.to_lowercase()
        .split(|c: char| c.is_whitespace() || c == '-' || c == '_')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}
