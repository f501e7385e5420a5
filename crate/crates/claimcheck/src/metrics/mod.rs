//! Evaluation quantities: grouped and exact per-class accuracy, binary-group
//! F1, trailing rolling accuracy series, and bootstrap standard errors.

mod report;

pub use report::{
    build_report, join_predictions, render_class_table, render_language_table, rolling_series_csv,
    ConditionReport, EvaluationReport, JoinOutcome, LanguageCell, ReportOptions,
};

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{
    binarize, coarse_binarize, AgentVerdict, BinaryGroup, CoarseVerdict, SixLevelVerdict,
};

/// Gold label on one of the two scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldLabel {
    Six(SixLevelVerdict),
    Coarse(CoarseVerdict),
}

impl GoldLabel {
    pub fn token(self) -> &'static str {
        match self {
            GoldLabel::Six(v) => v.token(),
            GoldLabel::Coarse(v) => v.token(),
        }
    }

    pub fn binary_group(self) -> BinaryGroup {
        match self {
            GoldLabel::Six(v) => v.binary_group(),
            GoldLabel::Coarse(v) => coarse_binarize(v),
        }
    }

    fn is_six(self) -> bool {
        matches!(self, GoldLabel::Six(_))
    }
}

/// Predicted label: an agent verdict, a coarse verdict, or the unparseable
/// disposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredLabel {
    Agent(AgentVerdict),
    Coarse(CoarseVerdict),
    Unparseable,
}

impl PredLabel {
    pub fn token(self) -> &'static str {
        match self {
            PredLabel::Agent(v) => v.token(),
            PredLabel::Coarse(v) => v.token(),
            PredLabel::Unparseable => "unparseable",
        }
    }

    pub fn binary_group(self) -> BinaryGroup {
        match self {
            PredLabel::Agent(v) => binarize(v),
            PredLabel::Coarse(v) => coarse_binarize(v),
            PredLabel::Unparseable => BinaryGroup::Neither,
        }
    }

    pub fn is_uncertain(self) -> bool {
        matches!(self, PredLabel::Agent(AgentVerdict::Uncertain))
    }

    pub fn is_unparseable(self) -> bool {
        matches!(self, PredLabel::Unparseable)
    }
}

/// One scored prediction joined with its gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrediction {
    pub claim_id: String,
    pub gold: GoldLabel,
    pub pred: PredLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim_date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    pub condition: String,
}

impl LabeledPrediction {
    /// Grouped correctness: the prediction lands on the gold side.
    /// `Neither` (uncertain or unparseable) matches no gold group.
    pub fn grouped_correct(&self) -> bool {
        let pred = self.pred.binary_group();
        pred != BinaryGroup::Neither && pred == self.gold.binary_group()
    }

    /// Exact correctness: the precise ordinal label.
    pub fn exact_correct(&self) -> bool {
        match (self.gold, self.pred) {
            (GoldLabel::Six(g), PredLabel::Agent(AgentVerdict::Scale(p))) => g == p,
            (GoldLabel::Coarse(g), PredLabel::Coarse(p)) => g == p,
            // agent verdicts score against coarse gold by shared token
            (GoldLabel::Coarse(g), PredLabel::Agent(AgentVerdict::Scale(p))) => {
                g.token() == p.token()
            }
            _ => false,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no predictions to evaluate")]
    NoPredictions,
    #[error("gold class {0:?} has zero instances")]
    EmptyClass(String),
    #[error("claim_date missing on {0} predictions; rolling series needs dates")]
    MissingDates(usize),
    #[error("incompatible scales: {0}")]
    IncompatibleScales(String),
}

/// Reject mixed-scale evaluation runs. Returns true when the run is on the
/// six-level scale.
pub fn check_scales(preds: &[LabeledPrediction]) -> Result<bool, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::NoPredictions);
    }
    let six = preds[0].gold.is_six();
    if preds.iter().any(|p| p.gold.is_six() != six) {
        return Err(MetricsError::IncompatibleScales(
            "gold labels mix six-level and coarse scales".into(),
        ));
    }
    if six && preds.iter().any(|p| matches!(p.pred, PredLabel::Coarse(_))) {
        return Err(MetricsError::IncompatibleScales(
            "coarse predictions against six-level gold".into(),
        ));
    }
    Ok(six)
}

/// Accuracy of one gold class, as a percentage of its instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: String,
    pub pct: f64,
    pub n: usize,
}

fn gold_class_order(six: bool) -> Vec<&'static str> {
    if six {
        SixLevelVerdict::ALL.iter().map(|v| v.token()).collect()
    } else {
        CoarseVerdict::ALL.iter().map(|v| v.token()).collect()
    }
}

fn per_class_accuracy(
    preds: &[LabeledPrediction],
    correct: impl Fn(&LabeledPrediction) -> bool,
) -> Result<Vec<ClassAccuracy>, MetricsError> {
    let six = check_scales(preds)?;
    let mut out = Vec::new();
    for class in gold_class_order(six) {
        let members: Vec<&LabeledPrediction> =
            preds.iter().filter(|p| p.gold.token() == class).collect();
        if members.is_empty() {
            continue;
        }
        let hits = members.iter().filter(|p| correct(p)).count();
        out.push(ClassAccuracy {
            class: class.to_string(),
            pct: 100.0 * hits as f64 / members.len() as f64,
            n: members.len(),
        });
    }
    Ok(out)
}

/// Per-class accuracy after collapsing onto the false/true sides: predicting
/// any false-side label is correct for a false-side gold label, and likewise
/// for the true side. Uncertain and unparseable predictions match neither.
pub fn grouped_accuracy(preds: &[LabeledPrediction]) -> Result<Vec<ClassAccuracy>, MetricsError> {
    per_class_accuracy(preds, LabeledPrediction::grouped_correct)
}

/// Per-class accuracy requiring the precise ordinal label.
pub fn exact_accuracy(preds: &[LabeledPrediction]) -> Result<Vec<ClassAccuracy>, MetricsError> {
    per_class_accuracy(preds, LabeledPrediction::exact_correct)
}

/// Grouped accuracy of one named class; `EmptyClass` when the class has no
/// gold instances.
pub fn class_grouped_accuracy(
    preds: &[LabeledPrediction],
    class: &str,
) -> Result<f64, MetricsError> {
    let rows = grouped_accuracy(preds)?;
    rows.into_iter()
        .find(|r| r.class == class)
        .map(|r| r.pct)
        .ok_or_else(|| MetricsError::EmptyClass(class.to_string()))
}

/// Overall grouped binary accuracy over all predictions, in percent.
pub fn overall_grouped_accuracy(preds: &[LabeledPrediction]) -> Result<f64, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::NoPredictions);
    }
    let hits = preds.iter().filter(|p| p.grouped_correct()).count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

/// Binary-group precision/recall/F1. Uncertain and unparseable predictions
/// count as wrong in both the precision and recall denominators of their
/// gold group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub false_group: Option<ClassF1>,
    pub true_group: Option<ClassF1>,
    /// Unweighted mean over the included classes. A class absent from gold
    /// contributes 0 only if it was predicted at least once, else it is
    /// excluded from the mean.
    pub macro_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1_scores(preds: &[LabeledPrediction]) -> Result<F1Scores, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::NoPredictions);
    }
    let mut class_scores = [None, None];
    let mut macro_terms = Vec::new();
    for (slot, class) in [BinaryGroup::FalseGroup, BinaryGroup::TrueGroup].into_iter().enumerate() {
        let gold_n = preds.iter().filter(|p| p.gold.binary_group() == class).count();
        let pred_n = preds.iter().filter(|p| p.pred.binary_group() == class).count();
        if gold_n == 0 && pred_n == 0 {
            continue; // excluded from the macro mean
        }
        if gold_n == 0 {
            macro_terms.push(0.0);
            class_scores[slot] = Some(ClassF1 { precision: 0.0, recall: 0.0, f1: 0.0 });
            continue;
        }
        let tp = preds
            .iter()
            .filter(|p| p.gold.binary_group() == class && p.pred.binary_group() == class)
            .count();
        let neither_here = preds
            .iter()
            .filter(|p| {
                p.gold.binary_group() == class && p.pred.binary_group() == BinaryGroup::Neither
            })
            .count();
        let precision_den = pred_n + neither_here;
        let precision = if precision_den == 0 { 0.0 } else { tp as f64 / precision_den as f64 };
        let recall = tp as f64 / gold_n as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        macro_terms.push(f1);
        class_scores[slot] = Some(ClassF1 { precision, recall, f1 });
    }
    let macro_f1 = if macro_terms.is_empty() {
        0.0
    } else {
        macro_terms.iter().sum::<f64>() / macro_terms.len() as f64
    };
    let [false_group, true_group] = class_scores;
    Ok(F1Scores { false_group, true_group, macro_f1 })
}

/// Confusion matrix: one row per gold class, one column per predicted label
/// including `uncertain` and `unparseable`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub gold_classes: Vec<String>,
    pub pred_classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }
}

pub fn confusion_matrix(preds: &[LabeledPrediction]) -> Result<ConfusionMatrix, MetricsError> {
    let six = check_scales(preds)?;
    let gold_classes: Vec<String> = gold_class_order(six).into_iter().map(String::from).collect();
    // predictions can carry any six-level token even on coarse runs
    let mut pred_classes: Vec<String> =
        SixLevelVerdict::ALL.iter().map(|v| v.token().to_string()).collect();
    pred_classes.push("uncertain".to_string());
    pred_classes.push("unparseable".to_string());

    let mut counts = vec![vec![0u64; pred_classes.len()]; gold_classes.len()];
    for p in preds {
        let row = gold_classes.iter().position(|c| c == p.gold.token()).expect("gold class listed");
        let col = pred_classes
            .iter()
            .position(|c| c == p.pred.token())
            .expect("pred class listed");
        counts[row][col] += 1;
    }
    Ok(ConfusionMatrix { gold_classes, pred_classes, counts })
}

/// Share of predictions answering `uncertain`, in percent.
pub fn uncertain_rate(preds: &[LabeledPrediction]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    100.0 * preds.iter().filter(|p| p.pred.is_uncertain()).count() as f64 / preds.len() as f64
}

/// Share of unparseable sessions, in percent.
pub fn unparseable_rate(preds: &[LabeledPrediction]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    100.0 * preds.iter().filter(|p| p.pred.is_unparseable()).count() as f64 / preds.len() as f64
}

/// One point of a trailing rolling-accuracy series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingPoint {
    /// Calendar month, `YYYY-MM`.
    pub month: String,
    /// Grouped binary accuracy over the trailing window, in percent.
    pub value: f64,
    pub n: usize,
    /// Binomial standard error `sqrt(a(1-a)/n)` with `a` as a proportion.
    pub se: f64,
}

fn month_index(date: NaiveDate) -> i64 {
    date.year() as i64 * 12 + (date.month0() as i64)
}

fn month_label(index: i64) -> String {
    let year = index.div_euclid(12);
    let month = index.rem_euclid(12) + 1;
    format!("{year:04}-{month:02}")
}

/// Trailing rolling accuracy keyed on claim date: for each calendar month
/// with at least one claim, the grouped binary accuracy over claims dated in
/// `(month - window_months, month]`.
pub fn rolling_accuracy(
    preds: &[LabeledPrediction],
    window_months: u32,
) -> Result<Vec<RollingPoint>, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::NoPredictions);
    }
    let missing = preds.iter().filter(|p| p.claim_date.is_none()).count();
    if missing > 0 {
        return Err(MetricsError::MissingDates(missing));
    }
    let dated: Vec<(i64, bool)> = preds
        .iter()
        .map(|p| (month_index(p.claim_date.expect("checked")), p.grouped_correct()))
        .collect();
    let mut months: Vec<i64> = dated.iter().map(|(m, _)| *m).collect();
    months.sort_unstable();
    months.dedup();

    let window = window_months as i64;
    let mut series = Vec::with_capacity(months.len());
    for m in months {
        let in_window: Vec<bool> = dated
            .iter()
            .filter(|(cm, _)| *cm > m - window && *cm <= m)
            .map(|(_, ok)| *ok)
            .collect();
        let n = in_window.len();
        let hits = in_window.iter().filter(|b| **b).count();
        let a = hits as f64 / n as f64;
        series.push(RollingPoint {
            month: month_label(m),
            value: 100.0 * a,
            n,
            se: (a * (1.0 - a) / n as f64).sqrt(),
        });
    }
    Ok(series)
}

/// Metric resampled by the bootstrap, on the proportion scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Overall grouped binary accuracy as a fraction in [0, 1].
    GroupedAccuracy,
    /// Binary-group macro F1 in [0, 1].
    MacroF1,
}

fn metric_value(kind: MetricKind, preds: &[&LabeledPrediction]) -> f64 {
    match kind {
        MetricKind::GroupedAccuracy => {
            preds.iter().filter(|p| p.grouped_correct()).count() as f64 / preds.len() as f64
        }
        MetricKind::MacroF1 => {
            let owned: Vec<LabeledPrediction> = preds.iter().map(|p| (*p).clone()).collect();
            f1_scores(&owned).map(|s| s.macro_f1).unwrap_or(0.0)
        }
    }
}

/// Bootstrap standard error: draw `resamples` datasets of size n with
/// replacement, compute the metric on each, and return the sample standard
/// deviation. Deterministic under `seed` and invariant to input order;
/// `resamples == 1` returns 0 by definition of the sample deviation.
pub fn bootstrap_se(
    preds: &[LabeledPrediction],
    metric: MetricKind,
    resamples: usize,
    seed: u64,
) -> f64 {
    if preds.is_empty() || resamples < 2 {
        return 0.0;
    }
    // canonical order makes the draw independent of input order
    let mut ordered: Vec<&LabeledPrediction> = preds.iter().collect();
    ordered.sort_by(|a, b| {
        (a.claim_id.as_str(), a.condition.as_str(), a.gold.token(), a.pred.token()).cmp(&(
            b.claim_id.as_str(),
            b.condition.as_str(),
            b.gold.token(),
            b.pred.token(),
        ))
    });

    let n = ordered.len();
    let mut values = Vec::with_capacity(resamples);
    for i in 0..resamples {
        // per-resample seed derived by counter, so parallel evaluation
        // would produce the same sequence
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let resample: Vec<&LabeledPrediction> =
            (0..n).map(|_| ordered[rng.random_range(0..n)]).collect();
        values.push(metric_value(metric, &resample));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn pred(
        id: &str,
        gold: SixLevelVerdict,
        pred: PredLabel,
        condition: &str,
    ) -> LabeledPrediction {
        LabeledPrediction {
            claim_id: id.to_string(),
            gold: GoldLabel::Six(gold),
            pred,
            claim_date: None,
            language: None,
            condition: condition.to_string(),
        }
    }

    fn scale(v: SixLevelVerdict) -> PredLabel {
        PredLabel::Agent(AgentVerdict::Scale(v))
    }

    /// The frozen 12-record fixture: two records per gold class, exactly one
    /// of them correct under the binary grouping.
    ///
    /// Hand enumeration:
    ///   grouped per class = 1/2 = 50.0 everywhere
    ///   exact per class   = pants-fire 50.0, mostly-true 50.0, others 0.0
    ///   binary F1: FalseGroup TP=3, predicted=5, neither(gold F)=1
    ///              -> P = 3/6, R = 3/6, F1 = 0.5; TrueGroup symmetric
    ///   macro F1 = 0.5
    pub(crate) fn twelve_record_fixture() -> Vec<LabeledPrediction> {
        use SixLevelVerdict::*;
        vec![
            pred("r01", PantsFire, scale(PantsFire), "c"),
            pred("r02", PantsFire, scale(True), "c"),
            pred("r03", False, scale(MostlyFalse), "c"),
            pred("r04", False, PredLabel::Agent(AgentVerdict::Uncertain), "c"),
            pred("r05", MostlyFalse, scale(PantsFire), "c"),
            pred("r06", MostlyFalse, scale(MostlyTrue), "c"),
            pred("r07", HalfTrue, scale(True), "c"),
            pred("r08", HalfTrue, scale(False), "c"),
            pred("r09", MostlyTrue, scale(MostlyTrue), "c"),
            pred("r10", MostlyTrue, PredLabel::Unparseable, "c"),
            pred("r11", True, scale(HalfTrue), "c"),
            pred("r12", True, scale(PantsFire), "c"),
        ]
    }

    #[test]
    fn grouped_accuracy_on_fixture_is_fifty_per_class() {
        let rows = grouped_accuracy(&twelve_record_fixture()).unwrap();
        assert_eq!(rows.len(), 6);
        for row in rows {
            assert!((row.pct - 50.0).abs() < 1e-9, "{row:?}");
            assert_eq!(row.n, 2);
        }
    }

    #[test]
    fn exact_accuracy_on_fixture_matches_hand_count() {
        let rows = exact_accuracy(&twelve_record_fixture()).unwrap();
        let expected = [
            ("pants-fire", 50.0),
            ("false", 0.0),
            ("mostly-false", 0.0),
            ("half-true", 0.0),
            ("mostly-true", 50.0),
            ("true", 0.0),
        ];
        for (row, (class, pct)) in rows.iter().zip(expected) {
            assert_eq!(row.class, class);
            assert!((row.pct - pct).abs() < 1e-9, "{row:?}");
        }
    }

    #[test]
    fn macro_f1_on_fixture_is_half() {
        let scores = f1_scores(&twelve_record_fixture()).unwrap();
        assert!((scores.macro_f1 - 0.5).abs() < 1e-9);
        let fg = scores.false_group.unwrap();
        assert!((fg.precision - 0.5).abs() < 1e-9);
        assert!((fg.recall - 0.5).abs() < 1e-9);
    }

    /// Ten-record fixture enumerated before implementation:
    ///   gold F: preds F F T Neither F  -> TP=3, pred_F over all = 5,
    ///   gold T: preds T F T Neither F  -> TP=2, pred_T over all = 3
    ///   FalseGroup: P = 3/(5+1) = 0.5, R = 3/5 -> F1 = 6/11
    ///   TrueGroup:  P = 2/(3+1) = 0.5, R = 2/5 -> F1 = 4/9
    ///   macro = (6/11 + 4/9)/2 = 49/99
    #[test]
    fn macro_f1_matches_enumeration_oracle() {
        use SixLevelVerdict::*;
        let preds = vec![
            pred("a1", False, scale(False), "c"),
            pred("a2", False, scale(MostlyFalse), "c"),
            pred("a3", False, scale(True), "c"),
            pred("a4", False, PredLabel::Agent(AgentVerdict::Uncertain), "c"),
            pred("a5", False, scale(PantsFire), "c"),
            pred("a6", MostlyTrue, scale(True), "c"),
            pred("a7", True, scale(False), "c"),
            pred("a8", HalfTrue, scale(MostlyTrue), "c"),
            pred("a9", True, PredLabel::Unparseable, "c"),
            pred("a10", MostlyTrue, scale(PantsFire), "c"),
        ];
        let scores = f1_scores(&preds).unwrap();
        assert!((scores.false_group.unwrap().f1 - 6.0 / 11.0).abs() < 1e-12);
        assert!((scores.true_group.unwrap().f1 - 4.0 / 9.0).abs() < 1e-12);
        assert!((scores.macro_f1 - 49.0 / 99.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_inverted_predictions_bound_macro_f1() {
        use SixLevelVerdict::*;
        let perfect = vec![
            pred("p1", False, scale(False), "c"),
            pred("p2", True, scale(True), "c"),
        ];
        assert!((f1_scores(&perfect).unwrap().macro_f1 - 1.0).abs() < 1e-12);
        let inverted = vec![
            pred("p1", False, scale(True), "c"),
            pred("p2", True, scale(False), "c"),
        ];
        assert!(f1_scores(&inverted).unwrap().macro_f1.abs() < 1e-12);
    }

    #[test]
    fn table_semantics_grouped_vs_exact() {
        use SixLevelVerdict::*;
        let p = pred("x", MostlyFalse, scale(PantsFire), "c");
        assert!(p.grouped_correct());
        assert!(!p.exact_correct());
        let q = pred("y", MostlyTrue, scale(HalfTrue), "c");
        assert!(q.grouped_correct());
        assert!(!q.exact_correct());
    }

    #[test]
    fn empty_class_lookup_errors() {
        use SixLevelVerdict::*;
        let preds = vec![pred("x", False, scale(False), "c")];
        assert!(class_grouped_accuracy(&preds, "false").is_ok());
        assert_eq!(
            class_grouped_accuracy(&preds, "true").unwrap_err(),
            MetricsError::EmptyClass("true".into())
        );
    }

    #[test]
    fn confusion_matrix_marginals_hold() {
        let preds = twelve_record_fixture();
        let cm = confusion_matrix(&preds).unwrap();
        assert_eq!(cm.total() as usize, preds.len());
        assert_eq!(cm.row_sums(), vec![2, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn rates_count_uncertain_and_unparseable() {
        let preds = twelve_record_fixture();
        assert!((uncertain_rate(&preds) - 100.0 / 12.0).abs() < 1e-9);
        assert!((unparseable_rate(&preds) - 100.0 / 12.0).abs() < 1e-9);
    }

    fn dated(id: &str, date: (i32, u32), correct: bool) -> LabeledPrediction {
        use SixLevelVerdict::*;
        let mut p = pred(id, True, scale(if correct { True } else { False }), "c");
        p.claim_date = NaiveDate::from_ymd_opt(date.0, date.1, 15);
        p
    }

    #[test]
    fn rolling_accuracy_flat_for_all_correct() {
        let preds: Vec<_> = (1..=12).map(|m| dated(&format!("p{m}"), (2020, m), true)).collect();
        let series = rolling_accuracy(&preds, 12).unwrap();
        assert_eq!(series.len(), 12);
        assert!(series.iter().all(|p| (p.value - 100.0).abs() < 1e-9));
        assert!(series.iter().all(|p| p.se.abs() < 1e-12));
    }

    #[test]
    fn rolling_accuracy_ramps_after_step_change() {
        // one claim per month, wrong through 2020-06, right from 2020-07
        let mut preds = Vec::new();
        for m in 1..=12 {
            preds.push(dated(&format!("a{m}"), (2019, m), false));
        }
        for m in 1..=6 {
            preds.push(dated(&format!("b{m}"), (2020, m), false));
        }
        for m in 7..=12 {
            preds.push(dated(&format!("c{m}"), (2020, m), true));
        }
        for m in 1..=6 {
            preds.push(dated(&format!("d{m}"), (2021, m), true));
        }
        let series = rolling_accuracy(&preds, 12).unwrap();
        let by_month: std::collections::BTreeMap<&str, f64> =
            series.iter().map(|p| (p.month.as_str(), p.value)).collect();
        assert!((by_month["2020-06"] - 0.0).abs() < 1e-9);
        // ramp: k correct months out of the trailing 12
        for k in 1..=6i32 {
            let month = format!("2020-{:02}", 6 + k);
            assert!(
                (by_month[month.as_str()] - 100.0 * k as f64 / 12.0).abs() < 1e-9,
                "{month}"
            );
        }
        assert!((by_month["2021-06"] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn rolling_emits_no_point_for_empty_months() {
        let preds = vec![dated("a", (2020, 1), true), dated("b", (2020, 3), true)];
        let series = rolling_accuracy(&preds, 3).unwrap();
        let months: Vec<&str> = series.iter().map(|p| p.month.as_str()).collect();
        assert_eq!(months, vec!["2020-01", "2020-03"]);
    }

    #[test]
    fn rolling_requires_dates() {
        use SixLevelVerdict::*;
        let preds = vec![pred("x", True, scale(True), "c")];
        assert_eq!(rolling_accuracy(&preds, 12).unwrap_err(), MetricsError::MissingDates(1));
    }

    #[test]
    fn bootstrap_constant_data_has_zero_se() {
        use SixLevelVerdict::*;
        let preds: Vec<_> = (0..50).map(|i| pred(&format!("p{i}"), True, scale(True), "c")).collect();
        let se = bootstrap_se(&preds, MetricKind::GroupedAccuracy, 200, 7);
        assert!(se.abs() < 1e-12);
    }

    #[test]
    fn bootstrap_is_seed_deterministic_and_order_invariant() {
        use SixLevelVerdict::*;
        let mut preds: Vec<_> = (0..100)
            .map(|i| {
                pred(
                    &format!("p{i:03}"),
                    True,
                    scale(if i % 5 == 0 { False } else { True }),
                    "c",
                )
            })
            .collect();
        let a = bootstrap_se(&preds, MetricKind::GroupedAccuracy, 300, 42);
        let b = bootstrap_se(&preds, MetricKind::GroupedAccuracy, 300, 42);
        assert_eq!(a, b);
        preds.reverse();
        let c = bootstrap_se(&preds, MetricKind::GroupedAccuracy, 300, 42);
        assert_eq!(a, c);
        let d = bootstrap_se(&preds, MetricKind::GroupedAccuracy, 300, 43);
        assert_ne!(a, d);
    }

    #[test]
    fn bootstrap_single_resample_is_zero() {
        use SixLevelVerdict::*;
        let preds = vec![pred("x", True, scale(True), "c")];
        assert_eq!(bootstrap_se(&preds, MetricKind::GroupedAccuracy, 1, 7), 0.0);
    }

    #[test]
    fn mixed_scales_are_rejected() {
        use SixLevelVerdict::*;
        let mut preds = vec![pred("x", True, scale(True), "c")];
        preds.push(LabeledPrediction {
            claim_id: "y".into(),
            gold: GoldLabel::Coarse(CoarseVerdict::True),
            pred: PredLabel::Coarse(CoarseVerdict::True),
            claim_date: None,
            language: None,
            condition: "c".into(),
        });
        assert!(matches!(
            grouped_accuracy(&preds),
            Err(MetricsError::IncompatibleScales(_))
        ));
    }
}
