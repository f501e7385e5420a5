//! Report assembly: joins predictions with gold labels, composes every
//! metric, and renders aligned text tables and CSV series.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agent::PredictionRow;
use crate::corpus::FactCheckRecord;
use crate::taxonomy::AgentVerdict;

use super::{
    bootstrap_se, confusion_matrix, exact_accuracy, f1_scores, grouped_accuracy,
    overall_grouped_accuracy, rolling_accuracy, uncertain_rate, unparseable_rate, ClassAccuracy,
    ConfusionMatrix, GoldLabel, LabeledPrediction, MetricKind, MetricsError, PredLabel,
    RollingPoint,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    /// Trailing windows, in months, for rolling series (e.g. 12 and 3).
    pub rolling_windows: Vec<u32>,
    /// Bootstrap resamples; `None` skips bootstrap standard errors.
    pub bootstrap_resamples: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub n: usize,
    pub grouped: Vec<ClassAccuracy>,
    pub exact: Vec<ClassAccuracy>,
    pub overall_grouped_pct: f64,
    pub macro_f1: f64,
    pub uncertain_rate_pct: f64,
    pub unparseable_rate_pct: f64,
    pub confusion: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_se_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_se_macro_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rolling: BTreeMap<u32, Vec<RollingPoint>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LanguageCell {
    pub accuracy_pct: f64,
    pub macro_f1: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_se_f1: Option<f64>,
}

/// Full machine-readable evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    /// `six` or `coarse`.
    pub scale: String,
    /// Condition labels in first-appearance order.
    pub conditions: Vec<String>,
    pub per_condition: BTreeMap<String, ConditionReport>,
    /// language -> condition -> metrics; empty when predictions carry no
    /// language information.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_language: BTreeMap<String, BTreeMap<String, LanguageCell>>,
}

/// Compose every metric over the prediction set.
pub fn build_report(
    preds: &[LabeledPrediction],
    options: &ReportOptions,
) -> Result<EvaluationReport, MetricsError> {
    let six = super::check_scales(preds)?;

    let mut conditions = Vec::new();
    for p in preds {
        if !conditions.contains(&p.condition) {
            conditions.push(p.condition.clone());
        }
    }

    let mut per_condition = BTreeMap::new();
    for condition in &conditions {
        let subset: Vec<LabeledPrediction> =
            preds.iter().filter(|p| &p.condition == condition).cloned().collect();
        let mut rolling = BTreeMap::new();
        for window in &options.rolling_windows {
            rolling.insert(*window, rolling_accuracy(&subset, *window)?);
        }
        let (se_acc, se_f1) = match options.bootstrap_resamples {
            Some(resamples) => (
                Some(bootstrap_se(&subset, MetricKind::GroupedAccuracy, resamples, options.seed)),
                Some(bootstrap_se(&subset, MetricKind::MacroF1, resamples, options.seed)),
            ),
            None => (None, None),
        };
        per_condition.insert(
            condition.clone(),
            ConditionReport {
                n: subset.len(),
                grouped: grouped_accuracy(&subset)?,
                exact: exact_accuracy(&subset)?,
                overall_grouped_pct: overall_grouped_accuracy(&subset)?,
                macro_f1: f1_scores(&subset)?.macro_f1,
                uncertain_rate_pct: uncertain_rate(&subset),
                unparseable_rate_pct: unparseable_rate(&subset),
                confusion: confusion_matrix(&subset)?,
                bootstrap_se_accuracy: se_acc,
                bootstrap_se_macro_f1: se_f1,
                rolling,
            },
        );
    }

    let mut per_language: BTreeMap<String, BTreeMap<String, LanguageCell>> = BTreeMap::new();
    if preds.iter().any(|p| p.language.is_some()) {
        for condition in &conditions {
            let mut by_language: BTreeMap<String, Vec<LabeledPrediction>> = BTreeMap::new();
            for p in preds.iter().filter(|p| &p.condition == condition) {
                let language = p.language.clone().unwrap_or_else(|| "und".to_string());
                by_language.entry(language).or_default().push(p.clone());
            }
            for (language, subset) in by_language {
                let cell = LanguageCell {
                    accuracy_pct: overall_grouped_accuracy(&subset)?,
                    macro_f1: f1_scores(&subset)?.macro_f1,
                    n: subset.len(),
                    bootstrap_se_f1: options.bootstrap_resamples.map(|resamples| {
                        bootstrap_se(&subset, MetricKind::MacroF1, resamples, options.seed)
                    }),
                };
                per_language.entry(language).or_default().insert(condition.clone(), cell);
            }
        }
    }

    Ok(EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scale: if six { "six".to_string() } else { "coarse".to_string() },
        conditions,
        per_condition,
        per_language,
    })
}

/// Join result: labeled predictions plus the claim ids that had no gold
/// record.
#[derive(Debug, Clone)]
pub struct JoinOutcome {
    pub preds: Vec<LabeledPrediction>,
    pub orphans: Vec<String>,
}

/// Join prediction rows with gold records by claim id. Rows whose claim id
/// is missing from the gold corpus (or whose gold record carries no verdict)
/// are reported as orphans. Unknown verdict tokens score as unparseable.
pub fn join_predictions(rows: &[PredictionRow], gold: &[FactCheckRecord]) -> JoinOutcome {
    let index: BTreeMap<&str, &FactCheckRecord> =
        gold.iter().map(|r| (r.claim.id.as_str(), r)).collect();
    let mut preds = Vec::new();
    let mut orphans = Vec::new();
    for row in rows {
        let Some(record) = index.get(row.claim_id.as_str()) else {
            orphans.push(row.claim_id.clone());
            continue;
        };
        let gold_label = match (record.gold_six, record.gold_coarse) {
            (Some(six), _) => GoldLabel::Six(six),
            (None, Some(coarse)) => GoldLabel::Coarse(coarse),
            (None, None) => {
                orphans.push(row.claim_id.clone());
                continue;
            }
        };
        let pred = match &row.verdict {
            None => PredLabel::Unparseable,
            Some(token) => match AgentVerdict::from_token(token) {
                Some(v) => PredLabel::Agent(v),
                None => PredLabel::Unparseable,
            },
        };
        preds.push(LabeledPrediction {
            claim_id: row.claim_id.clone(),
            gold: gold_label,
            pred,
            claim_date: record.claim.stated_on,
            language: record.claim.language.clone(),
            condition: row.condition.clone(),
        });
    }
    JoinOutcome { preds, orphans }
}

fn fmt_cell(value: f64) -> String {
    format!("{value:.2}")
}

fn render_grid(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let render_row = |cells: &[String], widths: &[usize]| {
        let mut line = String::new();
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            if i == 0 {
                line.push_str(&format!("{:<width$}", cell, width = widths[i]));
            } else {
                line.push_str(&format!("{:>width$}", cell, width = widths[i]));
            }
        }
        line
    };
    out.push_str(&render_row(header, &widths));
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&render_row(row, &widths));
        out.push('\n');
    }
    out
}

/// Per-class panels: rows are gold classes, columns are conditions, one
/// panel for grouped accuracy and one for exact accuracy, followed by the
/// uncertain/unparseable rates.
pub fn render_class_table(report: &EvaluationReport) -> String {
    let mut out = String::new();
    for (title, pick) in [
        ("Grouped accuracy (%)", true),
        ("Exact accuracy (%)", false),
    ] {
        let mut classes: Vec<String> = Vec::new();
        for condition in &report.conditions {
            let rows = if pick {
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
        let mut header = vec!["correct verdict".to_string()];
        header.extend(report.conditions.iter().cloned());
        let mut grid = Vec::new();
        for class in &classes {
            let mut row = vec![class.clone()];
            for condition in &report.conditions {
                let rows = if pick {
                    &report.per_condition[condition].grouped
                } else {
                    &report.per_condition[condition].exact
                };
                let cell = rows
                    .iter()
                    .find(|r| &r.class == class)
                    .map(|r| fmt_cell(r.pct))
                    .unwrap_or_else(|| "-".to_string());
                row.push(cell);
            }
            grid.push(row);
        }
        out.push_str(title);
        out.push('\n');
        out.push_str(&render_grid(&header, &grid));
        out.push('\n');
    }

    let mut header = vec!["rate".to_string()];
    header.extend(report.conditions.iter().cloned());
    let rows = vec![
        std::iter::once("uncertain (%)".to_string())
            .chain(
                report
                    .conditions
                    .iter()
                    .map(|c| fmt_cell(report.per_condition[c].uncertain_rate_pct)),
            )
            .collect::<Vec<_>>(),
        std::iter::once("unparseable (%)".to_string())
            .chain(
                report
                    .conditions
                    .iter()
                    .map(|c| fmt_cell(report.per_condition[c].unparseable_rate_pct)),
            )
            .collect::<Vec<_>>(),
        std::iter::once("n".to_string())
            .chain(report.conditions.iter().map(|c| report.per_condition[c].n.to_string()))
            .collect::<Vec<_>>(),
    ];
    out.push_str("Rates\n");
    out.push_str(&render_grid(&header, &rows));
    out
}

/// Sort key for language rows: macro F1 of the original-language condition
/// when present, else of the first condition, descending.
fn language_sort_f1(report: &EvaluationReport, cells: &BTreeMap<String, LanguageCell>) -> f64 {
    let preferred = report
        .conditions
        .iter()
        .find(|c| c.ends_with(":orig"))
        .or_else(|| report.conditions.first());
    preferred
        .and_then(|c| cells.get(c))
        .or_else(|| cells.values().next())
        .map(|cell| cell.macro_f1)
        .unwrap_or(0.0)
}

/// Per-language rows (accuracy and F1 per condition), sorted by F1
/// descending.
pub fn render_language_table(report: &EvaluationReport) -> String {
    if report.per_language.is_empty() {
        return String::new();
    }
    let mut header = vec!["language".to_string()];
    for condition in &report.conditions {
        header.push(format!("acc {condition}"));
        header.push(format!("f1 {condition}"));
    }
    header.push("n".to_string());

    let mut languages: Vec<(&String, &BTreeMap<String, LanguageCell>)> =
        report.per_language.iter().collect();
    languages.sort_by(|a, b| {
        language_sort_f1(report, b.1)
            .partial_cmp(&language_sort_f1(report, a.1))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(b.0))
    });

    let mut grid = Vec::new();
    for (language, cells) in languages {
        let mut row = vec![language.clone()];
        let mut n = 0usize;
        for condition in &report.conditions {
            match cells.get(condition) {
                Some(cell) => {
                    row.push(fmt_cell(cell.accuracy_pct));
                    row.push(format!("{:.4}", cell.macro_f1));
                    n = n.max(cell.n);
                }
                None => {
                    row.push("-".to_string());
                    row.push("-".to_string());
                }
            }
        }
        row.push(n.to_string());
        grid.push(row);
    }
    let mut out = String::from("Per-language accuracy and F1\n");
    out.push_str(&render_grid(&header, &grid));
    out
}

/// CSV rendition of a rolling series: `month,value,n,se`.
pub fn rolling_series_csv(points: &[RollingPoint]) -> String {
    let mut out = String::from("month,value,n,se\n");
    for p in points {
        out.push_str(&format!("{},{:.6},{},{:.6}\n", p.month, p.value, p.n, p.se));
    }
    out
}
